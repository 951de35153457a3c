//! Metrics, test trajectories and cross-validated hyperparameter search.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::Execution;
use crate::features::{sample_basis, FeatureKind};
use crate::kernels::KernelWidth;
use crate::regression::{feature_block, Dataset, Hyperparameters};
use crate::seed::{rng_from_seed, SeedPlan};
use crate::systems::{integrate_rk4, integrate_rk4_substeps, SystemSpec, Trajectory};
use crate::VectorField;

/// `(1/N) Σ |f(x_i) - ẋ_i|²`.
pub fn vector_field_mse<F: VectorField + ?Sized>(model: &F, dataset: &Dataset) -> Result<f64> {
    let r = squared_residuals(model, dataset)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Per-sample `|f(x_i) - ẋ_i|²`.
pub fn squared_residuals<F: VectorField + ?Sized>(model: &F, dataset: &Dataset) -> Result<Vec<f64>> {
    check_dim(model.dim(), dataset.dim())?;
    dataset
        .states()
        .iter()
        .zip(dataset.derivatives())
        .map(|(x, dx)| {
            let f = model.eval(x)?;
            Ok(f.iter().zip(dx).map(|(a, b)| (a - b) * (a - b)).sum())
        })
        .collect()
}

/// Noiseless `(x, f(x))` samples along one true trajectory from `x0`.
pub fn make_test_set(system: &SystemSpec, x0: &[f64], h: f64, t_end: f64, substeps: usize) -> Result<Dataset> {
    system.validate()?;
    check_dim(2, x0.len())?;
    let traj = integrate_rk4_substeps(|x| system.field(x), x0, h, t_end, substeps)?;
    let derivs = traj.states.iter().map(|x| system.field(x)).collect::<Result<Vec<_>>>()?;
    let ids = vec![0; traj.len()];
    Dataset::new(traj.states, derivs)?.with_provenance(traj.times, ids)
}

/// RK4 rollout of a learned (or true) field.
pub fn rollout_model<F: VectorField + ?Sized>(model: &F, x0: &[f64], h: f64, t_end: f64) -> Result<Trajectory> {
    check_dim(model.dim(), x0.len())?;
    integrate_rk4(|x| model.eval(x), x0, h, t_end)
}

/// One sample of a phase-plane grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSample {
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub q: (f64, f64),
    pub p: (f64, f64),
}

/// Field evaluations on a `res.0 × res.1` phase-plane grid, `q` outermost.
pub fn stream_grid<F: VectorField + ?Sized>(
    field: &F,
    bounds: &GridBounds,
    res: (usize, usize),
) -> Result<Vec<GridSample>> {
    check_dim(2, field.dim())?;
    if res.0 < 2 || res.1 < 2 {
        return Err(Error::InvalidParameter("grid resolution must be at least 2 per axis".into()));
    }
    let lin = |(lo, hi): (f64, f64), count: usize, i: usize| lo + (hi - lo) * i as f64 / (count - 1) as f64;
    let mut out = Vec::with_capacity(res.0 * res.1);
    for i in 0..res.0 {
        for j in 0..res.1 {
            let x = vec![lin(bounds.q, res.0, i), lin(bounds.p, res.1, j)];
            let xdot = field.eval(&x)?;
            out.push(GridSample { x, xdot });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Helmholtz,
    Baseline,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Helmholtz => "helmholtz",
            ModelFamily::Baseline => "gaussian",
        }
    }
}

/// Log-spaced values `10^lo … 10^hi`.
pub fn log_grid(lo_exp: f64, hi_exp: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo_exp)],
        _ => (0..points).map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (points - 1) as f64)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub sigma: Vec<f64>,
    pub lambda1: Vec<f64>,
    /// Ignored by the baseline search.
    pub lambda2: Vec<f64>,
    pub folds: usize,
}

impl Default for SearchSpace {
    /// σ ∈ 10^[-1, 1] (13 points), λ ∈ 10^[-8, 0] (17 points per part), 5 folds.
    fn default() -> Self {
        Self {
            sigma: log_grid(-1.0, 1.0, 13),
            lambda1: log_grid(-8.0, 0.0, 17),
            lambda2: log_grid(-8.0, 0.0, 17),
            folds: 5,
        }
    }
}

fn normalized(values: &[f64], name: &'static str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyGrid(name));
    }
    if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidParameter(format!("{name} grid value {bad} must be positive")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

impl SearchSpace {
    /// Sorted, deduplicated copy. Errors on empty grids or bad values.
    pub fn normalized(&self) -> Result<Self> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 folds, got {}", self.folds)));
        }
        for s in &self.sigma {
            KernelWidth::new(*s)?;
        }
        Ok(Self {
            sigma: normalized(&self.sigma, "sigma")?,
            lambda1: normalized(&self.lambda1, "lambda1")?,
            lambda2: normalized(&self.lambda2, "lambda2")?,
            folds: self.folds,
        })
    }
}

/// K disjoint validation folds covering `0..count`, after a seeded shuffle.
pub fn kfold_splits(count: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 || count < folds {
        return Err(Error::InvalidParameter(format!("cannot split {count} samples into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let size = count / folds + usize::from(k < count % folds);
        let mut val: Vec<usize> = order[start..start + size].to_vec();
        val.sort_unstable();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        train.sort_unstable();
        out.push((train, val));
        start += size;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub family: ModelFamily,
    pub features: usize,
    /// Seed of the curl-free basis (or the baseline basis).
    pub basis_c_seed: u64,
    pub basis_s_seed: u64,
    pub shuffle_seed: u64,
    pub execution: Execution,
}

impl CvOptions {
    pub fn from_plan(family: ModelFamily, features: usize, plan: &SeedPlan) -> Self {
        Self {
            family,
            features,
            basis_c_seed: plan.basis_c,
            basis_s_seed: plan.basis_s,
            shuffle_seed: plan.cv,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub validation_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: Hyperparameters,
    pub best_score: f64,
    /// Every grid point, in grid order.
    pub scores: Vec<GridScore>,
}

// Gram blocks Φ_a^T Φ_b restricted to one fold.
struct FoldGram {
    train_train: Vec<DMatrix<f64>>,
    val_train: Vec<DMatrix<f64>>,
    train_targets: DVector<f64>,
    val_targets: DVector<f64>,
    train_points: usize,
    val_points: usize,
}

fn component_indices(points: &[usize], n: usize) -> Vec<usize> {
    points.iter().flat_map(|&i| (i * n)..(i * n + n)).collect()
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Per-σ feature Gram matrices over the whole dataset, one per feature map.
fn full_grams(dataset: &Dataset, sigma: KernelWidth, options: &CvOptions) -> Result<Vec<DMatrix<f64>>> {
    let n = dataset.dim();
    let kinds: &[(FeatureKind, u64)] = match options.family {
        ModelFamily::Helmholtz => {
            &[(FeatureKind::OddCurlFree, options.basis_c_seed), (FeatureKind::OddSymplectic, options.basis_s_seed)]
        }
        ModelFamily::Baseline => &[(FeatureKind::GaussianSeparable, options.basis_c_seed)],
    };
    kinds
        .iter()
        .map(|&(kind, seed)| {
            let basis = sample_basis(kind, options.features, n, sigma, seed)?;
            let phi = feature_block(dataset, &basis)?;
            Ok(phi.transpose() * phi)
        })
        .collect()
}

/// Mean validation MSE of one ridge setting on one σ, via the dual system
/// `(Σ_k G_k / λ_k + N I) c = X`.
fn fold_score(folds: &[FoldGram], lambdas: &[f64]) -> f64 {
    let mut total = 0.0;
    for f in folds {
        let m = f.train_train[0].nrows();
        let mut a = DMatrix::from_diagonal_element(m, m, f.train_points as f64);
        let mut cross = DMatrix::zeros(f.val_train[0].nrows(), m);
        for ((tt, vt), l) in f.train_train.iter().zip(&f.val_train).zip(lambdas) {
            a += tt / *l;
            cross += vt / *l;
        }
        let score = match a.cholesky() {
            Some(ch) => {
                let c = ch.solve(&f.train_targets);
                let pred = cross * c;
                (pred - &f.val_targets).norm_squared() / f.val_points as f64
            }
            None => f64::INFINITY,
        };
        total += score;
    }
    let mean = total / folds.len() as f64;
    if mean.is_finite() {
        mean
    } else {
        f64::INFINITY
    }
}

// True if `a` should replace the incumbent `b`: lower score, ties broken toward
// larger λ1, then larger λ2, then larger σ.
fn better(a: &GridScore, b: &GridScore) -> bool {
    let tol = 1e-12 * a.validation_mse.abs().max(b.validation_mse.abs());
    if (a.validation_mse - b.validation_mse).abs() > tol {
        return a.validation_mse < b.validation_mse;
    }
    (a.lambda1, a.lambda2, a.sigma) > (b.lambda1, b.lambda2, b.sigma)
}

/// K-fold grid search. Deterministic in `(dataset, space, options)`
/// regardless of [`Execution`] mode.
pub fn cross_validate(dataset: &Dataset, space: &SearchSpace, options: &CvOptions) -> Result<CvOutcome> {
    let space = space.normalized()?;
    let splits = kfold_splits(dataset.len(), space.folds, options.shuffle_seed)?;
    let n = dataset.dim();
    let targets = dataset.stacked_targets();
    let lambda2: Vec<f64> = match options.family {
        ModelFamily::Helmholtz => space.lambda2.clone(),
        ModelFamily::Baseline => vec![f64::NAN],
    };

    let sigmas = space.sigma.iter().map(|&s| KernelWidth::new(s)).collect::<Result<Vec<_>>>()?;
    let per_sigma: Vec<Vec<FoldGram>> = options
        .execution
        .map(&sigmas, |&sigma| -> Result<Vec<FoldGram>> {
            let grams = full_grams(dataset, sigma, options)?;
            Ok(splits
                .iter()
                .map(|(train, val)| {
                    let (ti, vi) = (component_indices(train, n), component_indices(val, n));
                    FoldGram {
                        train_train: grams.iter().map(|g| select(g, &ti, &ti)).collect(),
                        val_train: grams.iter().map(|g| select(g, &vi, &ti)).collect(),
                        train_targets: DVector::from_iterator(ti.len(), ti.iter().map(|&i| targets[i])),
                        val_targets: DVector::from_iterator(vi.len(), vi.iter().map(|&i| targets[i])),
                        train_points: train.len(),
                        val_points: val.len(),
                    }
                })
                .collect())
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let tasks: Vec<(usize, f64)> =
        (0..sigmas.len()).flat_map(|s| space.lambda1.iter().map(move |&l1| (s, l1))).collect();
    let scores: Vec<GridScore> = options
        .execution
        .map(&tasks, |&(s, l1)| {
            lambda2
                .iter()
                .map(|&l2| {
                    let lambdas: Vec<f64> = match options.family {
                        ModelFamily::Helmholtz => vec![l1, l2],
                        ModelFamily::Baseline => vec![l1],
                    };
                    GridScore {
                        sigma: sigmas[s].get(),
                        lambda1: l1,
                        lambda2: if l2.is_nan() { l1 } else { l2 },
                        validation_mse: fold_score(&per_sigma[s], &lambdas),
                    }
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();

    let best = scores
        .iter()
        .fold(None::<&GridScore>, |acc, s| match acc {
            Some(b) if !better(s, b) => Some(b),
            _ => Some(s),
        })
        .ok_or(Error::EmptyGrid("search space"))?;
    if !best.validation_mse.is_finite() {
        return Err(Error::Singular("every grid point failed to factor".into()));
    }
    Ok(CvOutcome {
        best: Hyperparameters::new(best.sigma, best.lambda1, best.lambda2, options.features)?,
        best_score: best.validation_mse,
        scores,
    })
}

/// Definition of the test metric, recorded in every report.
pub const TEST_METRIC: &str = "vector-field MSE at noiseless states of the true test trajectory";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub model: String,
    pub training_mse: f64,
    pub test_mse: f64,
    pub training_residuals: Vec<f64>,
    pub test_residuals: Vec<f64>,
    pub hyper: Hyperparameters,
    pub seeds: SeedPlan,
    pub features: usize,
    pub test_metric: String,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn evaluate<F: VectorField + ?Sized>(
        system: &str,
        family: ModelFamily,
        model: &F,
        hyper: &Hyperparameters,
        seeds: SeedPlan,
        train: &Dataset,
        test: &Dataset,
    ) -> Result<Self> {
        let training_residuals = squared_residuals(model, train)?;
        let test_residuals = squared_residuals(model, test)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let mut notes = Vec::new();
        if family == ModelFamily::Baseline {
            notes.push("baseline: Gaussian-separable random Fourier features, single ridge weight lambda1".to_string());
        }
        Ok(Self {
            system: system.to_string(),
            model: family.name().to_string(),
            training_mse: mean(&training_residuals),
            test_mse: mean(&test_residuals),
            training_residuals,
            test_residuals,
            hyper: *hyper,
            seeds,
            features: hyper.features,
            test_metric: TEST_METRIC.to_string(),
            notes,
        })
    }
}

/// One row of the results table. `seed` is `None` for aggregate rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub system: String,
    pub model: String,
    pub train_mse: f64,
    pub test_mse: f64,
    pub seed: Option<u64>,
    pub d: usize,
    pub sigma: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
}

impl SummaryRow {
    pub fn from_report(r: &EvalReport) -> Self {
        let helm = r.model == ModelFamily::Helmholtz.name();
        Self {
            system: r.system.clone(),
            model: r.model.clone(),
            train_mse: r.training_mse,
            test_mse: r.test_mse,
            seed: Some(r.seeds.master),
            d: r.features,
            sigma: Some(r.hyper.sigma.get()),
            lambda1: Some(r.hyper.lambda1),
            lambda2: helm.then_some(r.hyper.lambda2),
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median train/test MSE over seeds, per (system, model).
pub fn median_rows(rows: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.system.clone(), r.model.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(system, model)| {
            let group: Vec<&SummaryRow> = rows.iter().filter(|r| r.system == system && r.model == model).collect();
            SummaryRow {
                train_mse: median(&group.iter().map(|r| r.train_mse).collect::<Vec<_>>()),
                test_mse: median(&group.iter().map(|r| r.test_mse).collect::<Vec<_>>()),
                seed: None,
                d: group[0].d,
                sigma: None,
                lambda1: None,
                lambda2: None,
                system,
                model,
            }
        })
        .collect()
}

/// Aligned text table: system, model, train MSE, test MSE, d.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = format!("{:<10} {:<10} {:>14} {:>14} {:>8}\n", "system", "model", "train MSE", "test MSE", "d");
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:<10} {:>14.6} {:>14.6} {:>8}\n",
            r.system, r.model, r.train_mse, r.test_mse, r.d
        ));
    }
    out
}
