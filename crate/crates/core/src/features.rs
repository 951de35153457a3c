//! Random Fourier feature bases for the odd curl-free, odd symplectic and
//! Gaussian-separable matrix kernels.
//!
//! A basis holds `d` frequency vectors `w_i ~ N(0, σ^{-2} I_n)`, drawn as
//! standard normals divided by σ, so two bases sampled with the same seed
//! and different widths differ only by a scale factor.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelWidth, Symplectic};
use crate::seed::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    OddCurlFree,
    OddSymplectic,
    GaussianSeparable,
}

/// A sampled feature basis. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct FeatureBasis {
    kind: FeatureKind,
    sigma: KernelWidth,
    seed: u64,
    n: usize,
    // d × n, row-major
    weights: Vec<f64>,
    phases: Vec<f64>,
    // Row directions of the odd maps: w_i, or J w_i for the symplectic map.
    directions: Vec<f64>,
}

/// On-disk layout: `{kind, d, n, sigma, seed, weights[], phases[]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct BasisRepr {
    kind: FeatureKind,
    d: usize,
    n: usize,
    sigma: KernelWidth,
    seed: u64,
    weights: Vec<Vec<f64>>,
    phases: Vec<f64>,
}

impl From<FeatureBasis> for BasisRepr {
    fn from(b: FeatureBasis) -> Self {
        BasisRepr {
            kind: b.kind,
            d: b.d(),
            n: b.n,
            sigma: b.sigma,
            seed: b.seed,
            weights: b.weights.chunks(b.n).map(<[f64]>::to_vec).collect(),
            phases: b.phases,
        }
    }
}

impl TryFrom<BasisRepr> for FeatureBasis {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        if r.weights.len() != r.d {
            return Err(Error::InvalidParameter(format!(
                "basis declares d = {} but holds {} weight vectors",
                r.d,
                r.weights.len()
            )));
        }
        for w in &r.weights {
            check_dim(r.n, w.len())?;
        }
        let expected_phases = if r.kind == FeatureKind::GaussianSeparable { r.d } else { 0 };
        if r.phases.len() != expected_phases {
            return Err(Error::InvalidParameter(format!(
                "{:?} basis expects {expected_phases} phases, found {}",
                r.kind,
                r.phases.len()
            )));
        }
        let weights = r.weights.concat();
        FeatureBasis::from_parts(r.kind, r.sigma, r.seed, r.n, weights, r.phases)
    }
}

fn validate_shape(kind: FeatureKind, d: usize, n: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidParameter("feature count d must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("state dimension must be at least 1".into()));
    }
    match kind {
        FeatureKind::OddSymplectic if !n.is_multiple_of(2) => Err(Error::OddDimension(n)),
        FeatureKind::GaussianSeparable if !d.is_multiple_of(n) => {
            Err(Error::InvalidParameter(format!("separable feature count d = {d} must be divisible by n = {n}")))
        }
        _ => Ok(()),
    }
}

/// Draws a basis of `d` frequencies in `R^n`. Deterministic in `seed`.
pub fn sample_basis(kind: FeatureKind, d: usize, n: usize, sigma: KernelWidth, seed: u64) -> Result<FeatureBasis> {
    validate_shape(kind, d, n)?;
    let mut rng = rng_from_seed(seed);
    let inv = 1.0 / sigma.get();
    let weights: Vec<f64> = (0..d * n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * inv
        })
        .collect();
    let phases = match kind {
        FeatureKind::GaussianSeparable => (0..d).map(|_| rng.random_range(0.0..TAU)).collect(),
        _ => Vec::new(),
    };
    FeatureBasis::from_parts(kind, sigma, seed, n, weights, phases)
}

impl FeatureBasis {
    fn from_parts(
        kind: FeatureKind,
        sigma: KernelWidth,
        seed: u64,
        n: usize,
        weights: Vec<f64>,
        phases: Vec<f64>,
    ) -> Result<Self> {
        let d = weights.len() / n.max(1);
        validate_shape(kind, d, n)?;
        let directions = match kind {
            FeatureKind::OddCurlFree => weights.clone(),
            FeatureKind::OddSymplectic => {
                let j = Symplectic::for_dim(n)?;
                weights.chunks(n).flat_map(|w| j.apply(w)).collect()
            }
            FeatureKind::GaussianSeparable => Vec::new(),
        };
        Ok(Self { kind, sigma, seed, n, weights, phases, directions })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Number of features `d`.
    pub fn d(&self) -> usize {
        self.weights.len() / self.n
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn sigma(&self) -> KernelWidth {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn weights(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks(self.n)
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// `w_i^T x` for every frequency.
    pub fn projections(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, x.len())?;
        Ok(self.weights().map(|w| dot(w, x)).collect())
    }

    /// The `d × n` feature matrix `Ψ(x)`.
    pub fn features(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let proj = self.projections(x)?;
        let (d, n) = (self.d(), self.n);
        let mut psi = DMatrix::zeros(d, n);
        match self.kind {
            FeatureKind::OddCurlFree | FeatureKind::OddSymplectic => {
                let scale = 1.0 / (d as f64).sqrt();
                for (i, p) in proj.iter().enumerate() {
                    let s = scale * p.sin();
                    let dir = &self.directions[i * n..(i + 1) * n];
                    for j in 0..n {
                        psi[(i, j)] = s * dir[j];
                    }
                }
            }
            FeatureKind::GaussianSeparable => {
                let block = d / n;
                let scale = (2.0 / block as f64).sqrt();
                for (i, p) in proj.iter().enumerate() {
                    psi[(i, i / block)] = scale * (p + self.phases[i]).cos();
                }
            }
        }
        Ok(psi)
    }

    /// `Ψ(x)^T c` without forming `Ψ(x)`.
    pub fn apply_transpose(&self, x: &[f64], coeffs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d(), coeffs.len())?;
        let proj = self.projections(x)?;
        let (d, n) = (self.d(), self.n);
        let mut out = vec![0.0; n];
        match self.kind {
            FeatureKind::OddCurlFree | FeatureKind::OddSymplectic => {
                let scale = 1.0 / (d as f64).sqrt();
                for (i, p) in proj.iter().enumerate() {
                    let s = scale * p.sin() * coeffs[i];
                    let dir = &self.directions[i * n..(i + 1) * n];
                    for j in 0..n {
                        out[j] += s * dir[j];
                    }
                }
            }
            FeatureKind::GaussianSeparable => {
                let block = d / n;
                let scale = (2.0 / block as f64).sqrt();
                for (i, p) in proj.iter().enumerate() {
                    out[i / block] += scale * (p + self.phases[i]).cos() * coeffs[i];
                }
            }
        }
        Ok(out)
    }

    fn expect_kind(&self, kind: FeatureKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("expected a {kind:?} basis, got {:?}", self.kind)))
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Ψ_{c,o}(x)`: row `i` is `sin(w_i^T x) w_i^T / √d`.
pub fn features_odd_curl_free(x: &[f64], basis: &FeatureBasis) -> Result<DMatrix<f64>> {
    basis.expect_kind(FeatureKind::OddCurlFree)?;
    basis.features(x)
}

/// `Ψ_{s,o}(x)`: row `i` is `sin(w_i^T x) (J w_i)^T / √d`.
pub fn features_odd_symplectic(x: &[f64], basis: &FeatureBasis) -> Result<DMatrix<f64>> {
    basis.expect_kind(FeatureKind::OddSymplectic)?;
    basis.features(x)
}

/// Block-diagonal scalar cosine features; `Ψ(x)^T Ψ(z) ≈ k_σ(x, z) I_n`.
pub fn features_gaussian_separable(x: &[f64], basis: &FeatureBasis) -> Result<DMatrix<f64>> {
    basis.expect_kind(FeatureKind::GaussianSeparable)?;
    basis.features(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gaussian_kernel, odd_curl_free_kernel, odd_symplectic_kernel};
    use approx::assert_abs_diff_eq;

    fn w(s: f64) -> KernelWidth {
        KernelWidth::new(s).unwrap()
    }

    fn random_points(seed: u64, count: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        (0..count).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_basis(FeatureKind::OddCurlFree, 17, 2, w(0.7), 99).unwrap();
        let b = sample_basis(FeatureKind::OddCurlFree, 17, 2, w(0.7), 99).unwrap();
        assert_eq!(a, b);
        let c = sample_basis(FeatureKind::OddCurlFree, 17, 2, w(0.7), 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_rejects_bad_shapes() {
        assert!(matches!(sample_basis(FeatureKind::OddSymplectic, 10, 3, w(1.0), 0), Err(Error::OddDimension(3))));
        assert!(sample_basis(FeatureKind::OddCurlFree, 0, 2, w(1.0), 0).is_err());
        assert!(sample_basis(FeatureKind::GaussianSeparable, 11, 2, w(1.0), 0).is_err());
        assert!(sample_basis(FeatureKind::OddCurlFree, 10, 3, w(1.0), 0).is_ok());
    }

    #[test]
    fn weight_variance_matches_width() {
        let b = sample_basis(FeatureKind::OddCurlFree, 100_000, 2, w(2.0), 5).unwrap();
        for j in 0..2 {
            let vals: Vec<f64> = b.weights().map(|wi| wi[j]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            assert!((var - 0.25).abs() <= 0.05 * 0.25, "var {var}");
            assert!(mean.abs() < 0.01);
        }
    }

    #[test]
    fn weights_scale_inversely_with_width() {
        let a = sample_basis(FeatureKind::OddCurlFree, 50, 2, w(1.0), 3).unwrap();
        let b = sample_basis(FeatureKind::OddCurlFree, 50, 2, w(10.0), 3).unwrap();
        for (wa, wb) in a.weights().zip(b.weights()) {
            for (x, y) in wa.iter().zip(wb) {
                assert_abs_diff_eq!(x / 10.0, *y, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn odd_maps_vanish_at_origin_and_flip_sign() {
        for kind in [FeatureKind::OddCurlFree, FeatureKind::OddSymplectic] {
            let b = sample_basis(kind, 40, 2, w(1.0), 1).unwrap();
            assert_eq!(b.features(&[0.0, 0.0]).unwrap().amax(), 0.0);
            for x in random_points(2, 20, 2) {
                let mx: Vec<f64> = x.iter().map(|v| -v).collect();
                let sum = b.features(&x).unwrap() + b.features(&mx).unwrap();
                assert_eq!(sum.amax(), 0.0);
            }
        }
    }

    #[test]
    fn symplectic_rows_are_rotated_curl_free_rows() {
        let c = sample_basis(FeatureKind::OddCurlFree, 30, 4, w(0.8), 21).unwrap();
        let s = sample_basis(FeatureKind::OddSymplectic, 30, 4, w(0.8), 21).unwrap();
        let j = Symplectic::new(2).matrix();
        for x in random_points(4, 5, 4) {
            let pc = features_odd_curl_free(&x, &c).unwrap();
            let ps = features_odd_symplectic(&x, &s).unwrap();
            assert_abs_diff_eq!((ps - pc * j.transpose()).amax(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn map_functions_check_kind() {
        let c = sample_basis(FeatureKind::OddCurlFree, 4, 2, w(1.0), 0).unwrap();
        assert!(features_odd_symplectic(&[1.0, 0.0], &c).is_err());
        assert!(features_gaussian_separable(&[1.0, 0.0], &c).is_err());
        assert!(features_odd_curl_free(&[1.0], &c).is_err());
    }

    #[test]
    fn apply_transpose_matches_matrix() {
        for kind in [FeatureKind::OddCurlFree, FeatureKind::OddSymplectic, FeatureKind::GaussianSeparable] {
            let b = sample_basis(kind, 24, 2, w(0.6), 8).unwrap();
            let coeffs: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
            let x = [0.3, -0.9];
            let dense = b.features(&x).unwrap().transpose() * nalgebra::DVector::from_column_slice(&coeffs);
            let fast = b.apply_transpose(&x, &coeffs).unwrap();
            for (a, f) in dense.iter().zip(&fast) {
                assert_abs_diff_eq!(a, f, epsilon = 1e-14);
            }
        }
    }

    fn max_abs_error(kind: FeatureKind, d: usize, seed: u64, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let b = sample_basis(kind, d, 2, w(1.0), seed).unwrap();
        pairs
            .iter()
            .map(|(x, z)| {
                let approx = b.features(x).unwrap().transpose() * b.features(z).unwrap();
                let exact = match kind {
                    FeatureKind::OddCurlFree => odd_curl_free_kernel(x, z, w(1.0)).unwrap(),
                    _ => odd_symplectic_kernel(x, z, w(1.0)).unwrap(),
                };
                (approx - exact).amax()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn odd_maps_approximate_exact_kernels() {
        let xs = random_points(30, 20, 2);
        let zs = random_points(31, 20, 2);
        let pairs: Vec<_> = xs.into_iter().zip(zs).collect();
        for kind in [FeatureKind::OddCurlFree, FeatureKind::OddSymplectic] {
            let err = max_abs_error(kind, 20_000, 77, &pairs);
            assert!(err <= 0.05, "{kind:?}: {err}");
        }
    }

    #[test]
    fn separable_map_is_block_diagonal_and_approximates_gaussian() {
        let b = sample_basis(FeatureKind::GaussianSeparable, 20_000, 2, w(1.0), 4).unwrap();
        let x = [1.0, 0.0];
        let z = [0.0, 0.0];
        let kxz = b.features(&x).unwrap().transpose() * b.features(&z).unwrap();
        let kxx = b.features(&x).unwrap().transpose() * b.features(&x).unwrap();
        assert_eq!(kxz[(0, 1)], 0.0);
        assert_eq!(kxz[(1, 0)], 0.0);
        let exact = gaussian_kernel(&x, &z, w(1.0)).unwrap();
        for i in 0..2 {
            assert!((kxz[(i, i)] - exact).abs() <= 0.05, "{}", kxz[(i, i)]);
            assert!((kxx[(i, i)] - 1.0).abs() <= 0.05, "{}", kxx[(i, i)]);
        }
    }

    #[test]
    fn json_layout_round_trips() {
        let b = sample_basis(FeatureKind::GaussianSeparable, 6, 2, w(0.5), 12).unwrap();
        let text = serde_json::to_string(&b).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["kind", "d", "n", "sigma", "seed", "weights", "phases"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["kind"], "gaussian-separable");
        assert_eq!(v["weights"].as_array().unwrap().len(), 6);
        let back: FeatureBasis = serde_json::from_str(&text).unwrap();
        assert_eq!(back, b);

        let mut bad = v.clone();
        bad["d"] = 5.into();
        assert!(serde_json::from_value::<FeatureBasis>(bad).is_err());
    }
}
