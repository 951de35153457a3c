//! Benchmark dissipative Hamiltonian systems, fixed-step RK4 and noisy
//! dataset generation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::regression::Dataset;
use crate::seed::{rng_from_seed, split_seed};
use crate::VectorField;

/// `q̇ = p/m`, `ṗ = -k q - (d/m) p`.
pub fn msd_field(x: &[f64], m: f64, k: f64, d: f64) -> Result<Vec<f64>> {
    check_dim(2, x.len())?;
    let (q, p) = (x[0], x[1]);
    Ok(vec![p / m, -k * q - d / m * p])
}

/// `q̇ = p/(m l²)`, `ṗ = -m g l sin q - (d/(m l²)) p`.
pub fn pendulum_field(x: &[f64], m: f64, l: f64, d: f64, g: f64) -> Result<Vec<f64>> {
    check_dim(2, x.len())?;
    let (q, p) = (x[0], x[1]);
    let inertia = m * l * l;
    Ok(vec![p / inertia, -m * g * l * q.sin() - d / inertia * p])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSpec {
    /// Mass-spring-damper.
    Msd { m: f64, k: f64, d: f64 },
    /// Damped pendulum.
    Pendulum { m: f64, l: f64, d: f64, g: f64 },
}

impl SystemSpec {
    pub fn benchmark_msd() -> Self {
        SystemSpec::Msd { m: 0.5, k: 1.0, d: 0.25 }
    }

    pub fn benchmark_pendulum() -> Self {
        SystemSpec::Pendulum { m: 1.0, l: 1.0, d: 1.2, g: 9.81 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::Msd { .. } => "msd",
            SystemSpec::Pendulum { .. } => "pendulum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        let damping = |v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("damping must be non-negative, got {v}")))
            }
        };
        match *self {
            SystemSpec::Msd { m, k, d } => {
                positive("m", m)?;
                positive("k", k)?;
                damping(d)
            }
            SystemSpec::Pendulum { m, l, d, g } => {
                positive("m", m)?;
                positive("l", l)?;
                damping(d)?;
                if g.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("g must be finite".into()))
                }
            }
        }
    }

    pub fn field(&self, x: &[f64]) -> Result<Vec<f64>> {
        match *self {
            SystemSpec::Msd { m, k, d } => msd_field(x, m, k, d),
            SystemSpec::Pendulum { m, l, d, g } => pendulum_field(x, m, l, d, g),
        }
    }

    /// Total energy.
    pub fn hamiltonian(&self, x: &[f64]) -> Result<f64> {
        check_dim(2, x.len())?;
        let (q, p) = (x[0], x[1]);
        Ok(match *self {
            SystemSpec::Msd { m, k, .. } => 0.5 * p * p / m + 0.5 * k * q * q,
            SystemSpec::Pendulum { m, l, g, .. } => 0.5 * p * p / (m * l * l) + m * g * l * (1.0 - q.cos()),
        })
    }
}

impl VectorField for SystemSpec {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.field(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

fn step_count(h: f64, t_end: f64) -> Result<usize> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {h}")));
    }
    if !(t_end.is_finite() && t_end >= h * (1.0 - 1e-9)) {
        return Err(Error::InvalidParameter(format!("horizon {t_end} shorter than step {h}")));
    }
    Ok((t_end / h + 1e-9).floor() as usize)
}

fn rk4_step<F>(field: &F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| a.iter().zip(b).map(|(u, v)| u + s * v).collect::<Vec<_>>();
    let k1 = field(x)?;
    let k2 = field(&axpy(x, 0.5 * h, &k1))?;
    let k3 = field(&axpy(x, 0.5 * h, &k2))?;
    let k4 = field(&axpy(x, h, &k3))?;
    Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// Classical RK4 with fixed step `h` over `[0, t_end]`, recording every step
/// including `t = 0`.
pub fn integrate_rk4<F>(field: F, x0: &[f64], h: f64, t_end: f64) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    integrate_rk4_substeps(field, x0, h, t_end, 1)
}

/// RK4 at step `h / substeps`, recorded on the coarse grid `k h`.
pub fn integrate_rk4_substeps<F>(field: F, x0: &[f64], h: f64, t_end: f64, substeps: usize) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    let steps = step_count(h, t_end)?;
    let fine = h / substeps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    times.push(0.0);
    states.push(x.clone());
    for k in 1..=steps {
        for s in 0..substeps {
            x = rk4_step(&field, &x, fine)?;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { step: (k - 1) * substeps + s + 1 });
            }
        }
        times.push(k as f64 * h);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_n: f64,
    pub seed: u64,
}

/// Sampling grid for training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingProtocol {
    pub h: f64,
    pub t_end: f64,
    pub include_t0: bool,
    /// Internal RK4 substeps per recorded step.
    pub substeps: usize,
}

/// Noiseless trajectories of `system` from each initial condition.
pub fn simulate(system: &SystemSpec, ics: &[Vec<f64>], protocol: &SamplingProtocol) -> Result<Vec<Trajectory>> {
    system.validate()?;
    ics.iter()
        .map(|x0| {
            check_dim(2, x0.len())?;
            integrate_rk4_substeps(|x| system.field(x), x0, protocol.h, protocol.t_end, protocol.substeps)
        })
        .collect()
}

/// Samples `(x_i, f(x_i))` along each trajectory and adds i.i.d. Gaussian
/// noise of standard deviation `σ_n` to both. Each trajectory draws its
/// noise from its own sub-seed of `noise.seed`.
pub fn generate_dataset(
    system: &SystemSpec,
    ics: &[Vec<f64>],
    protocol: &SamplingProtocol,
    noise: &NoiseSpec,
) -> Result<Dataset> {
    if ics.is_empty() {
        return Err(Error::InvalidParameter("at least one initial condition is required".into()));
    }
    if !(noise.sigma_n.is_finite() && noise.sigma_n >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise level must be non-negative, got {}", noise.sigma_n)));
    }
    let normal = Normal::new(0.0, noise.sigma_n).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let trajectories = simulate(system, ics, protocol)?;

    let (mut states, mut derivs, mut times, mut ids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (traj_id, traj) in trajectories.iter().enumerate() {
        let mut rng = rng_from_seed(split_seed(noise.seed, traj_id as u64));
        let skip = usize::from(!protocol.include_t0);
        for (t, x) in traj.times.iter().zip(&traj.states).skip(skip) {
            let dx = system.field(x)?;
            let noisy = |v: &[f64], rng: &mut crate::seed::Rng| -> Vec<f64> {
                v.iter().map(|c| c + sample(&normal, noise.sigma_n, rng)).collect()
            };
            states.push(noisy(x, &mut rng));
            derivs.push(noisy(&dx, &mut rng));
            times.push(*t);
            ids.push(traj_id);
        }
    }
    Dataset::new(states, derivs)?.with_provenance(times, ids)
}

fn sample<R: Rng>(normal: &Normal<f64>, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        normal.sample(rng)
    }
}
