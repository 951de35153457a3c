//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use helmholtz_rff::cli::{run_protocol, simulate_training};
use helmholtz_rff::config::ExperimentConfig;
use helmholtz_rff::evaluation::{median, ModelFamily};
use helmholtz_rff::features::FeatureKind;
use helmholtz_rff::kernels::{gram_matrix, odd_curl_free_kernel, odd_symplectic_kernel};
use helmholtz_rff::regression::{assemble_design, fit_helmholtz_with_seeds};
use helmholtz_rff::seed::{rng_from_seed, split_seed, SeedPlan};
use helmholtz_rff::systems::{integrate_rk4, SystemSpec};
use helmholtz_rff::{
    fit_exact_helmholtz, sample_basis, Dataset, Execution, HelmholtzModel, Hyperparameters, KernelWidth, MatrixKernel,
    VectorField,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn reproduction(name: &str, min_seeds: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let cfg = ExperimentConfig::bundled(name).unwrap();
    assert!(cfg.run.seeds >= min_seeds);
    let start = Instant::now();
    let runs = run_protocol(&cfg, Execution::Parallel).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pick = |family: ModelFamily, train: bool| -> Vec<f64> {
        runs.iter()
            .flat_map(|r| r.reports.iter())
            .filter(|rep| rep.model == family.name())
            .map(|rep| if train { rep.training_mse } else { rep.test_mse })
            .collect()
    };
    (pick(ModelFamily::Helmholtz, true), pick(ModelFamily::Helmholtz, false), pick(ModelFamily::Baseline, false), secs)
}

fn pendulum_reproduction() -> Verdict {
    let (h_train, h_test, b_test, secs) = reproduction("pendulum", 10);
    let (tr, te, bt) = (median(&h_train), median(&h_test), median(&b_test));
    let ratio = bt / te;
    verdict(
        tr <= 0.01 && te <= 0.01 && ratio >= 100.0 && secs <= 60.0,
        format!(
            "{} seeds, median helmholtz train {tr:.5} (<= 0.01), test {te:.5} (<= 0.01), baseline/helmholtz test {ratio:.0} (>= 100), {secs:.1} s (<= 60)",
            h_train.len()
        ),
    )
}

fn msd_reproduction() -> Verdict {
    let (h_train, h_test, b_test, secs) = reproduction("msd", 10);
    let (te, bt) = (median(&h_test), median(&b_test));
    verdict(
        te <= 0.05 && te <= 0.5 * bt && secs <= 60.0,
        format!(
            "{} seeds, median helmholtz test {te:.5} (<= 0.05), baseline test {bt:.5} (helmholtz <= half), {secs:.1} s (<= 60)",
            h_train.len()
        ),
    )
}

fn dataset_counts() -> Verdict {
    let count = |name: &str| {
        let cfg = ExperimentConfig::bundled(name).unwrap();
        simulate_training(&cfg, &SeedPlan::from_master(0)).unwrap().dataset.len()
    };
    let (msd, pend) = (count("msd"), count("pendulum"));
    verdict(msd == 15 && pend == 24, format!("msd N = {msd} (15), pendulum N = {pend} (24)"))
}

fn probes(count: usize, seed: u64, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..count).map(|_| vec![rng.random_range(lo..hi), rng.random_range(lo..hi)]).collect()
}

// Central-difference Jacobian, J[i][j] = ∂f_i/∂x_j, step 1e-4·max(1, |x|).
fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> [[f64; 2]; 2] {
    let h = 1e-4 * x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut jac = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..2 {
            jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

fn learned_pendulum_model() -> HelmholtzModel {
    let cfg = ExperimentConfig::bundled("pendulum").unwrap();
    let plan = SeedPlan::from_master(0);
    let data = simulate_training(&cfg, &plan).unwrap().dataset;
    helmholtz_rff::cli::fit_pair(&cfg, &data, &plan, Execution::Parallel).unwrap().helmholtz
}

fn structural_properties() -> Verdict {
    let start = Instant::now();
    let model = learned_pendulum_model();
    let pts = probes(50, 11, -3.0, 3.0);

    let mut odd = 0.0f64;
    let mut div = 0.0f64;
    let mut asym = 0.0f64;
    let mut energy = 0.0f64;
    for x in &pts {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (fp, fm) = (model.predict(x).unwrap(), model.predict(&neg).unwrap());
        let scale = fp.iter().map(|v| v.abs()).fold(1.0, f64::max);
        odd = odd.max(fp.iter().zip(&fm).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max) / scale);

        let js = jacobian(|y| model.decompose(y).unwrap().symplectic, x);
        div = div.max((js[0][0] + js[1][1]).abs());

        let jd = jacobian(|y| model.decompose(y).unwrap().dissipative, x);
        let norm = jd.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        asym = asym.max((jd[0][1] - jd[1][0]).abs() / norm.max(f64::MIN_POSITIVE));

        let grad = model.hamiltonian_gradient(x).unwrap();
        let fs = model.decompose(x).unwrap().symplectic;
        let dot: f64 = grad.iter().zip(&fs).map(|(a, b)| a * b).sum();
        let scale = grad.iter().map(|v| v * v).sum::<f64>().sqrt() * fs.iter().map(|v| v * v).sum::<f64>().sqrt();
        energy = energy.max(dot.abs() / scale.max(1.0));
    }

    let gram_pts = probes(20, 12, -2.0, 2.0);
    let w = KernelWidth::new(0.8).unwrap();
    let mut min_eig = f64::INFINITY;
    for kernel in
        [MatrixKernel::CurlFree, MatrixKernel::Symplectic, MatrixKernel::OddCurlFree, MatrixKernel::OddSymplectic]
    {
        let g = gram_matrix(kernel, &gram_pts, w).unwrap();
        let scale = g.amax();
        let eig = g.symmetric_eigenvalues().min() / scale;
        min_eig = min_eig.min(eig);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        odd <= 1e-12 && div <= 1e-5 && asym <= 1e-4 && energy <= 1e-10 && min_eig >= -1e-10 && secs <= 10.0,
        format!(
            "oddness {odd:.1e} (<= 1e-12), divergence {div:.1e} (<= 1e-5), jacobian asymmetry {asym:.1e} (<= 1e-4), grad H . f_s {energy:.1e} (<= 1e-10), min gram eigenvalue / scale {min_eig:.1e} (>= -1e-10), {secs:.2} s (<= 10)"
        ),
    )
}

fn approximation_error(kind: FeatureKind, d: usize, basis_seed: u64, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let w = KernelWidth::new(1.0).unwrap();
    let basis = sample_basis(kind, d, 2, w, basis_seed).unwrap();
    let errors: Vec<f64> = pairs
        .iter()
        .map(|(x, z)| {
            let approx = basis.features(x).unwrap().transpose() * basis.features(z).unwrap();
            let exact = match kind {
                FeatureKind::OddCurlFree => odd_curl_free_kernel(x, z, w).unwrap(),
                _ => odd_symplectic_kernel(x, z, w).unwrap(),
            };
            (approx - exact).amax()
        })
        .collect();
    median(&errors)
}

fn rff_convergence() -> Verdict {
    let xs = probes(20, 21, -1.0, 1.0);
    let zs = probes(20, 22, -1.0, 1.0);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = xs.into_iter().zip(zs).collect();
    let mut passed = true;
    let mut parts = Vec::new();
    for (kind, label) in [(FeatureKind::OddCurlFree, "curl-free"), (FeatureKind::OddSymplectic, "symplectic")] {
        let at = |d: usize| {
            let per_basis: Vec<f64> =
                (0..10).map(|b| approximation_error(kind, d, split_seed(d as u64, b), &pairs)).collect();
            median(&per_basis)
        };
        let (e2, e8, e20) = (at(2000), at(8000), at(20000));
        passed &= e8 <= 0.5 * e2 && e20 <= 0.05;
        parts.push(format!(
            "{label}: d=2000 {e2:.2e}, d=8000 {e8:.2e} (ratio {:.3} <= 0.5), d=20000 {e20:.2e} (<= 0.05)",
            e8 / e2
        ));
    }
    verdict(passed, parts.join("; "))
}

fn oracle_equivalence() -> Verdict {
    let cfg = ExperimentConfig::bundled("pendulum").unwrap();
    let full = simulate_training(&cfg, &SeedPlan::from_master(0)).unwrap().dataset;
    let subset: Vec<usize> = (0..full.len()).step_by(3).collect();
    let data = full.subset(&subset).unwrap();
    assert_eq!(data.len(), 8);
    let (sigma, l1, l2) = (1.0, 1e-2, 1e-2);
    let hyper = Hyperparameters::new(sigma, l1, l2, 20_000).unwrap();
    let rff = fit_helmholtz_with_seeds(&data, &hyper, 31, 32).unwrap();
    let exact = fit_exact_helmholtz(&data, KernelWidth::new(sigma).unwrap(), l1, l2).unwrap();

    // Probes on the noiseless trajectories, inside the time span each
    // trajectory's subset samples cover.
    let times = data.times().unwrap();
    let ids = data.trajectory_ids().unwrap();
    let mut rng = rng_from_seed(33);
    let system = SystemSpec::benchmark_pendulum();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let traj_id = i % cfg.data.initial_conditions.len();
        let span: Vec<f64> = times.iter().zip(ids).filter(|(_, &id)| id == traj_id).map(|(&t, _)| t).collect();
        let (lo, hi) = (span.iter().copied().fold(f64::INFINITY, f64::min), span.iter().copied().fold(0.0, f64::max));
        let t = rng.random_range(lo..=hi);
        let x = if t > 0.0 {
            let steps = (t / 1e-3).round().max(1.0);
            integrate_rk4(|x| system.eval(x), &cfg.data.initial_conditions[traj_id], t / steps, t)
                .unwrap()
                .last()
                .to_vec()
        } else {
            cfg.data.initial_conditions[traj_id].clone()
        };
        let (a, b) = (rff.predict(&x).unwrap(), exact.predict(&x).unwrap());
        let diff = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    verdict(worst <= 0.05, format!("max relative difference {worst:.4} at 20 probes (<= 0.05), N = 8, d = 20000"))
}

// Minimizes the training objective by conjugate gradients, using only
// per-sample feature evaluations and the objective's gradient.
fn iterative_minimizer(data: &Dataset, model: &HelmholtzModel) -> DVector<f64> {
    let d = model.basis_c.d();
    let lambda: Vec<f64> = (0..2 * d).map(|i| if i < d { model.hyper.lambda1 } else { model.hyper.lambda2 }).collect();
    let rows: Vec<DMatrix<f64>> = data
        .states()
        .iter()
        .map(|x| {
            let (c, s) = (model.basis_c.features(x).unwrap(), model.basis_s.features(x).unwrap());
            let mut m = DMatrix::zeros(2 * d, 2);
            m.rows_mut(0, d).copy_from(&c);
            m.rows_mut(d, d).copy_from(&s);
            m
        })
        .collect();
    let n = data.len() as f64;
    let gradient = |xi: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(2 * d);
        for (psi, target) in rows.iter().zip(data.derivatives()) {
            let r = psi.transpose() * xi - DVector::from_column_slice(target);
            g += psi * r * (2.0 / n);
        }
        for i in 0..2 * d {
            g[i] += 2.0 * lambda[i] * xi[i];
        }
        g
    };
    let g0 = gradient(&DVector::zeros(2 * d));
    let hess = |v: &DVector<f64>| gradient(v) - &g0;

    let mut xi = DVector::zeros(2 * d);
    let mut r = -g0.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    for _ in 0..20 * d {
        if rr.sqrt() <= 1e-15 * g0.norm() {
            break;
        }
        let hp = hess(&p);
        let step = rr / p.dot(&hp);
        xi += &p * step;
        r -= hp * step;
        let next = r.norm_squared();
        p = &r + &p * (next / rr);
        rr = next;
    }
    xi
}

fn optimizer_correctness() -> Verdict {
    let mut rng = rng_from_seed(41);
    let states: Vec<Vec<f64>> =
        (0..10).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let derivs: Vec<Vec<f64>> =
        (0..10).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let data = Dataset::new(states, derivs).unwrap();
    let hyper = Hyperparameters::new(1.0, 1e-2, 5e-3, 30).unwrap();
    let model = fit_helmholtz_with_seeds(&data, &hyper, 42, 43).unwrap();
    let closed: DVector<f64> = DVector::from_iterator(60, model.alpha.iter().chain(&model.beta).copied());
    let iterative = iterative_minimizer(&data, &model);
    // The solve route must not matter: the design here is wider than tall.
    assert_eq!(assemble_design(&data, &model.basis_c, &model.basis_s).unwrap().shape(), (60, 20));
    let rel = (&closed - &iterative).norm() / iterative.norm();
    verdict(rel <= 1e-4, format!("relative coefficient difference {rel:.2e} (<= 1e-4), N = 10, 2d = 60"))
}

fn integrator_order() -> Verdict {
    let system = SystemSpec::benchmark_msd();
    let (x0, t) = ([2.0, 0.0], 2.0);
    let reference = integrate_rk4(|x| system.eval(x), &x0, 1e-5, t).unwrap();
    let end = |h: f64| {
        let traj = integrate_rk4(|x| system.eval(x), &x0, h, t).unwrap();
        let (a, b) = (traj.last(), reference.last());
        a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
    };
    let (coarse, fine) = (end(0.1), end(0.05));
    let ratio = coarse / fine;
    verdict(ratio >= 12.0, format!("endpoint error h=0.1 {coarse:.2e}, h=0.05 {fine:.2e}, ratio {ratio:.2} (>= 12)"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 pendulum reproduction", pendulum_reproduction),
        ("2 mass-spring-damper reproduction", msd_reproduction),
        ("3 dataset counts", dataset_counts),
        ("4 structural properties", structural_properties),
        ("5 random feature convergence", rff_convergence),
        ("6 exact kernel equivalence", oracle_equivalence),
        ("7 closed form vs iterative minimizer", optimizer_correctness),
        ("8 integrator order", integrator_order),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| verdict(false, "panicked".to_string()));
        let mark = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{mark} criterion {name}: {} [{:.2} s]", outcome.detail, start.elapsed().as_secs_f64());
        failures += usize::from(!outcome.passed);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
