//! Closed-form regularized least squares over random feature maps.
//!
//! The Helmholtz model is `f(x) = Ψ_{c,o}(x)^T α + Ψ_{s,o}(x)^T β`, fitted by
//! minimizing `(1/N) Σ |f(x_i) - ẋ_i|² + λ1 |α|² + λ2 |β|²`. With
//! `Φ ∈ R^{2d × nN}` stacking both feature maps over the samples and
//! `Λ = diag(λ1 I_d, λ2 I_d)` the minimizer is
//!
//! ```text
//! ξ* = (Φ Φ^T + N Λ)^{-1} Φ X          (primal, 2d × 2d)
//!    = Λ^{-1} Φ (Φ^T Λ^{-1} Φ + N I)^{-1} X   (dual, nN × nN)
//! ```
//!
//! [`SolveRoute::Auto`] factors whichever system is smaller.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::features::{dot, sample_basis, FeatureBasis, FeatureKind};
use crate::kernels::{KernelWidth, MatrixKernel};
use crate::seed::split_seed;
use crate::VectorField;

/// Largest sample count accepted by [`fit_exact_kernel`].
pub const EXACT_MAX_POINTS: usize = 200;

/// Paired state and state-derivative samples, with optional provenance
/// (sample time and trajectory index) used by the CSV export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    states: Vec<Vec<f64>>,
    derivatives: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    times: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    trajectory_ids: Vec<usize>,
}

impl Dataset {
    pub fn new(states: Vec<Vec<f64>>, derivatives: Vec<Vec<f64>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidParameter("dataset needs at least one sample".into()));
        }
        check_dim(states.len(), derivatives.len())?;
        let n = states[0].len();
        if n == 0 {
            return Err(Error::InvalidParameter("state dimension must be at least 1".into()));
        }
        for (x, dx) in states.iter().zip(&derivatives) {
            check_dim(n, x.len())?;
            check_dim(n, dx.len())?;
        }
        Ok(Self { states, derivatives, times: Vec::new(), trajectory_ids: Vec::new() })
    }

    /// Attaches sample times and trajectory indices.
    pub fn with_provenance(mut self, times: Vec<f64>, trajectory_ids: Vec<usize>) -> Result<Self> {
        check_dim(self.len(), times.len())?;
        check_dim(self.len(), trajectory_ids.len())?;
        self.times = times;
        self.trajectory_ids = trajectory_ids;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn derivatives(&self) -> &[Vec<f64>] {
        &self.derivatives
    }

    pub fn times(&self) -> Option<&[f64]> {
        (!self.times.is_empty()).then_some(self.times.as_slice())
    }

    pub fn trajectory_ids(&self) -> Option<&[usize]> {
        (!self.trajectory_ids.is_empty()).then_some(self.trajectory_ids.as_slice())
    }

    /// Samples at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pick = |v: &[Vec<f64>]| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidParameter(format!("sample index {bad} out of range")));
        }
        let mut out = Self::new(pick(&self.states), pick(&self.derivatives))?;
        if let (Some(t), Some(ids)) = (self.times(), self.trajectory_ids()) {
            out = out
                .with_provenance(indices.iter().map(|&i| t[i]).collect(), indices.iter().map(|&i| ids[i]).collect())?;
        }
        Ok(out)
    }

    /// Stacked derivative vector `X = [ẋ_1; …; ẋ_N]`.
    pub fn stacked_targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.len() * self.dim(), self.derivatives.iter().flatten().copied())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub sigma: KernelWidth,
    /// Ridge weight on the dissipative coefficients (the only one the baseline uses).
    pub lambda1: f64,
    /// Ridge weight on the symplectic coefficients.
    pub lambda2: f64,
    /// Features per map.
    pub features: usize,
}

impl Hyperparameters {
    pub fn new(sigma: f64, lambda1: f64, lambda2: f64, features: usize) -> Result<Self> {
        let h = Self { sigma: KernelWidth::new(sigma)?, lambda1, lambda2, features };
        h.validate()?;
        Ok(h)
    }

    /// Single-λ hyperparameters for the baseline.
    pub fn single(sigma: f64, lambda: f64, features: usize) -> Result<Self> {
        Self::new(sigma, lambda, lambda, features)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {l}")));
            }
        }
        if self.features == 0 {
            return Err(Error::InvalidParameter("feature count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SolveRoute {
    /// Factor the smaller of the primal and dual systems.
    #[default]
    Auto,
    Primal,
    Dual,
}

/// Solves `A y = b` for symmetric positive definite `A`, falling back to an
/// SVD least-squares solve if Cholesky reports a non-positive pivot.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => a.svd(true, true).solve(b, 1e-14).map_err(|e| Error::Singular(e.to_string()))?,
    };
    if y.iter().all(|v| v.is_finite()) {
        Ok(y)
    } else {
        Err(Error::Singular("solution has non-finite entries".into()))
    }
}

/// `d × nN` matrix whose column block `i` is `Ψ(x_i)^T`'s transpose, i.e. `Ψ(x_i)`.
pub fn feature_block(dataset: &Dataset, basis: &FeatureBasis) -> Result<DMatrix<f64>> {
    check_dim(basis.dim(), dataset.dim())?;
    let (d, n) = (basis.d(), dataset.dim());
    let mut out = DMatrix::zeros(d, n * dataset.len());
    for (i, x) in dataset.states().iter().enumerate() {
        out.view_mut((0, i * n), (d, n)).copy_from(&basis.features(x)?);
    }
    Ok(out)
}

/// The stacked design matrix `Φ ∈ R^{2d × nN}`.
pub fn assemble_design(dataset: &Dataset, basis_c: &FeatureBasis, basis_s: &FeatureBasis) -> Result<DMatrix<f64>> {
    check_dim(basis_c.dim(), basis_s.dim())?;
    let upper = feature_block(dataset, basis_c)?;
    let lower = feature_block(dataset, basis_s)?;
    let (dc, ds) = (upper.nrows(), lower.nrows());
    let mut phi = DMatrix::zeros(dc + ds, upper.ncols());
    phi.rows_mut(0, dc).copy_from(&upper);
    phi.rows_mut(dc, ds).copy_from(&lower);
    Ok(phi)
}

/// Ridge solve for `ξ` over stacked design `phi` with per-row ridge weights.
pub(crate) fn ridge_solve(
    phi: &DMatrix<f64>,
    ridge: &[f64],
    targets: &DVector<f64>,
    points: usize,
    route: SolveRoute,
) -> Result<DVector<f64>> {
    let (p, m) = phi.shape();
    let nf = points as f64;
    let primal = match route {
        SolveRoute::Primal => true,
        SolveRoute::Dual => false,
        SolveRoute::Auto => p <= m,
    };
    if primal {
        let mut a = phi * phi.transpose();
        for (i, l) in ridge.iter().enumerate() {
            a[(i, i)] += nf * l;
        }
        solve_spd(a, &(phi * targets))
    } else {
        // Λ^{-1} Φ
        let mut scaled = phi.clone();
        for (i, l) in ridge.iter().enumerate() {
            scaled.row_mut(i).scale_mut(1.0 / l);
        }
        let mut g = phi.transpose() * &scaled;
        for i in 0..m {
            g[(i, i)] += nf;
        }
        let c = solve_spd(g, targets)?;
        Ok(scaled * c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelmholtzModel {
    pub hyper: Hyperparameters,
    pub basis_c: FeatureBasis,
    pub basis_s: FeatureBasis,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Basis seeds derived from a single fit seed.
pub fn basis_seeds(seed: u64) -> (u64, u64) {
    (split_seed(seed, 1), split_seed(seed, 2))
}

/// Fits the Helmholtz model with bases drawn from sub-seeds of `seed`.
pub fn fit_helmholtz(dataset: &Dataset, hyper: &Hyperparameters, seed: u64) -> Result<HelmholtzModel> {
    let (sc, ss) = basis_seeds(seed);
    fit_helmholtz_with_seeds(dataset, hyper, sc, ss)
}

pub fn fit_helmholtz_with_seeds(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    seed_c: u64,
    seed_s: u64,
) -> Result<HelmholtzModel> {
    hyper.validate()?;
    let n = dataset.dim();
    let basis_c = sample_basis(FeatureKind::OddCurlFree, hyper.features, n, hyper.sigma, seed_c)?;
    let basis_s = sample_basis(FeatureKind::OddSymplectic, hyper.features, n, hyper.sigma, seed_s)?;
    fit_helmholtz_with_bases(dataset, hyper, basis_c, basis_s, SolveRoute::Auto)
}

pub fn fit_helmholtz_with_bases(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    basis_c: FeatureBasis,
    basis_s: FeatureBasis,
    route: SolveRoute,
) -> Result<HelmholtzModel> {
    hyper.validate()?;
    if basis_c.kind() != FeatureKind::OddCurlFree || basis_s.kind() != FeatureKind::OddSymplectic {
        return Err(Error::InvalidParameter("Helmholtz fit needs odd curl-free and odd symplectic bases".into()));
    }
    let phi = assemble_design(dataset, &basis_c, &basis_s)?;
    let (dc, ds) = (basis_c.d(), basis_s.d());
    let ridge: Vec<f64> =
        std::iter::repeat_n(hyper.lambda1, dc).chain(std::iter::repeat_n(hyper.lambda2, ds)).collect();
    let xi = ridge_solve(&phi, &ridge, &dataset.stacked_targets(), dataset.len(), route)?;
    Ok(HelmholtzModel {
        hyper: *hyper,
        alpha: xi.rows(0, dc).iter().copied().collect(),
        beta: xi.rows(dc, ds).iter().copied().collect(),
        basis_c,
        basis_s,
    })
}

/// The two Helmholtz components of a learned field at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub symplectic: Vec<f64>,
    pub dissipative: Vec<f64>,
}

// -(1/√d) Σ c_i cos(w_i^T x)
fn cosine_potential(basis: &FeatureBasis, coeffs: &[f64], x: &[f64]) -> Result<f64> {
    let proj = basis.projections(x)?;
    let s: f64 = proj.iter().zip(coeffs).map(|(p, c)| c * p.cos()).sum();
    Ok(-s / (basis.d() as f64).sqrt())
}

// (1/√d) Σ c_i sin(w_i^T x) w_i
fn cosine_potential_gradient(basis: &FeatureBasis, coeffs: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let proj = basis.projections(x)?;
    let scale = 1.0 / (basis.d() as f64).sqrt();
    let mut g = vec![0.0; basis.dim()];
    for ((p, c), w) in proj.iter().zip(coeffs).zip(basis.weights()) {
        let s = scale * c * p.sin();
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj += s * wj;
        }
    }
    Ok(g)
}

impl HelmholtzModel {
    pub fn dim(&self) -> usize {
        self.basis_c.dim()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.decompose(x)?;
        Ok(d.symplectic.iter().zip(&d.dissipative).map(|(a, b)| a + b).collect())
    }

    pub fn decompose(&self, x: &[f64]) -> Result<Decomposition> {
        Ok(Decomposition {
            symplectic: self.basis_s.apply_transpose(x, &self.beta)?,
            dissipative: self.basis_c.apply_transpose(x, &self.alpha)?,
        })
    }

    /// Learned Hamiltonian `Ĥ(x) = -(1/√d) Σ β_i cos(w_i^T x)`, with
    /// `J ∇Ĥ` equal to the symplectic part. Defined up to a constant.
    pub fn hamiltonian_estimate(&self, x: &[f64]) -> Result<f64> {
        cosine_potential(&self.basis_s, &self.beta, x)
    }

    /// Closed-form `∇Ĥ`.
    pub fn hamiltonian_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        cosine_potential_gradient(&self.basis_s, &self.beta, x)
    }

    /// Scalar potential `φ̂` of the dissipative part: `∇φ̂ = f_d`.
    pub fn dissipation_potential(&self, x: &[f64]) -> Result<f64> {
        cosine_potential(&self.basis_c, &self.alpha, x)
    }

    pub fn dissipation_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        cosine_potential_gradient(&self.basis_c, &self.alpha, x)
    }

    /// Value of the regularized training objective at arbitrary coefficients.
    pub fn objective_at(&self, dataset: &Dataset, alpha: &[f64], beta: &[f64]) -> Result<f64> {
        let mut loss = 0.0;
        for (x, dx) in dataset.states().iter().zip(dataset.derivatives()) {
            let fc = self.basis_c.apply_transpose(x, alpha)?;
            let fs = self.basis_s.apply_transpose(x, beta)?;
            loss += fc.iter().zip(&fs).zip(dx).map(|((a, b), t)| (a + b - t).powi(2)).sum::<f64>();
        }
        let reg = self.hyper.lambda1 * dot(alpha, alpha) + self.hyper.lambda2 * dot(beta, beta);
        Ok(loss / dataset.len() as f64 + reg)
    }

    pub fn objective(&self, dataset: &Dataset) -> Result<f64> {
        self.objective_at(dataset, &self.alpha, &self.beta)
    }
}

impl VectorField for HelmholtzModel {
    fn dim(&self) -> usize {
        HelmholtzModel::dim(self)
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

/// Gaussian-separable random feature regression with a single ridge weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub hyper: Hyperparameters,
    pub basis: FeatureBasis,
    pub alpha: Vec<f64>,
}

pub fn fit_baseline(dataset: &Dataset, hyper: &Hyperparameters, seed: u64) -> Result<BaselineModel> {
    hyper.validate()?;
    let basis = sample_basis(FeatureKind::GaussianSeparable, hyper.features, dataset.dim(), hyper.sigma, seed)?;
    fit_baseline_with_basis(dataset, hyper, basis, SolveRoute::Auto)
}

pub fn fit_baseline_with_basis(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    basis: FeatureBasis,
    route: SolveRoute,
) -> Result<BaselineModel> {
    hyper.validate()?;
    if basis.kind() != FeatureKind::GaussianSeparable {
        return Err(Error::InvalidParameter("baseline fit needs a Gaussian-separable basis".into()));
    }
    let phi = feature_block(dataset, &basis)?;
    let ridge = vec![hyper.lambda1; basis.d()];
    let alpha = ridge_solve(&phi, &ridge, &dataset.stacked_targets(), dataset.len(), route)?;
    Ok(BaselineModel { hyper: *hyper, basis, alpha: alpha.iter().copied().collect() })
}

impl BaselineModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.basis.apply_transpose(x, &self.alpha)
    }

    pub fn objective_at(&self, dataset: &Dataset, alpha: &[f64]) -> Result<f64> {
        let mut loss = 0.0;
        for (x, dx) in dataset.states().iter().zip(dataset.derivatives()) {
            let f = self.basis.apply_transpose(x, alpha)?;
            loss += f.iter().zip(dx).map(|(a, t)| (a - t).powi(2)).sum::<f64>();
        }
        Ok(loss / dataset.len() as f64 + self.hyper.lambda1 * dot(alpha, alpha))
    }
}

impl VectorField for BaselineModel {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

/// One kernel term `weight · K` of an exact-kernel model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    pub kernel: MatrixKernel,
    pub weight: f64,
}

/// Representer-theorem solution `f(x) = Σ K(x, x_i) a_i` with
/// `Σ_j K(x_i, x_j) a_j + N λ a_i = ẋ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactKernelModel {
    pub terms: Vec<KernelTerm>,
    pub sigma: KernelWidth,
    pub lambda: f64,
    pub anchors: Vec<Vec<f64>>,
    pub coefficients: Vec<Vec<f64>>,
}

/// Exact fit with a single matrix kernel.
pub fn fit_exact_kernel(
    dataset: &Dataset,
    kernel: MatrixKernel,
    sigma: KernelWidth,
    lambda: f64,
) -> Result<ExactKernelModel> {
    fit_exact_terms(dataset, vec![KernelTerm { kernel, weight: 1.0 }], sigma, lambda)
}

/// Exact counterpart of the Helmholtz feature model: the kernel
/// `K_{c,o}/λ1 + K_{s,o}/λ2` with unit ridge, which is what the random
/// feature problem converges to as `d → ∞`.
pub fn fit_exact_helmholtz(
    dataset: &Dataset,
    sigma: KernelWidth,
    lambda1: f64,
    lambda2: f64,
) -> Result<ExactKernelModel> {
    let terms = vec![
        KernelTerm { kernel: MatrixKernel::OddCurlFree, weight: 1.0 / lambda1 },
        KernelTerm { kernel: MatrixKernel::OddSymplectic, weight: 1.0 / lambda2 },
    ];
    fit_exact_terms(dataset, terms, sigma, 1.0)
}

fn fit_exact_terms(
    dataset: &Dataset,
    terms: Vec<KernelTerm>,
    sigma: KernelWidth,
    lambda: f64,
) -> Result<ExactKernelModel> {
    if dataset.len() > EXACT_MAX_POINTS {
        return Err(Error::TooLarge { n: dataset.len(), max: EXACT_MAX_POINTS });
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let (count, n) = (dataset.len(), dataset.dim());
    let mut g = DMatrix::zeros(n * count, n * count);
    for term in &terms {
        g += crate::kernels::gram_matrix(term.kernel, dataset.states(), sigma)? * term.weight;
    }
    for i in 0..n * count {
        g[(i, i)] += count as f64 * lambda;
    }
    let a = solve_spd(g, &dataset.stacked_targets())?;
    Ok(ExactKernelModel {
        terms,
        sigma,
        lambda,
        anchors: dataset.states().to_vec(),
        coefficients: a.as_slice().chunks(n).map(<[f64]>::to_vec).collect(),
    })
}

impl ExactKernelModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.anchors[0].len();
        check_dim(n, x.len())?;
        let mut out = DVector::zeros(n);
        for (anchor, a) in self.anchors.iter().zip(&self.coefficients) {
            let a = DVector::from_column_slice(a);
            for term in &self.terms {
                out += term.kernel.eval(x, anchor, self.sigma)? * &a * term.weight;
            }
        }
        Ok(out.iter().copied().collect())
    }
}

impl VectorField for ExactKernelModel {
    fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x)
    }
}
