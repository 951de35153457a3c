//! Exact Gaussian-derived scalar and matrix-valued kernels.
//!
//! These are the reference evaluations the random feature maps approximate.
//! Every function here is pure and allocation-light; the matrix kernels
//! return `n × n` [`DMatrix`] values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Smallest and largest accepted kernel width.
pub const SIGMA_RANGE: (f64, f64) = (1e-6, 1e6);

/// Gaussian length scale σ.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct KernelWidth(f64);

impl KernelWidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < SIGMA_RANGE.0 || sigma > SIGMA_RANGE.1 {
            return Err(Error::InvalidParameter(format!(
                "kernel width {sigma} outside [{}, {}]",
                SIGMA_RANGE.0, SIGMA_RANGE.1
            )));
        }
        Ok(Self(sigma))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for KernelWidth {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KernelWidth> for f64 {
    fn from(w: KernelWidth) -> f64 {
        w.0
    }
}

/// The canonical symplectic matrix `J = [[0, I_m], [-I_m, 0]]` for a phase
/// space of dimension `2m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Symplectic {
    half: usize,
}

impl Symplectic {
    pub fn new(m: usize) -> Self {
        Self { half: m }
    }

    /// Builds `J` for state dimension `n`, which must be even.
    pub fn for_dim(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(Error::OddDimension(n));
        }
        Ok(Self::new(n / 2))
    }

    pub fn dim(&self) -> usize {
        2 * self.half
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let m = self.half;
        let mut j = DMatrix::zeros(2 * m, 2 * m);
        for i in 0..m {
            j[(i, m + i)] = 1.0;
            j[(m + i, i)] = -1.0;
        }
        j
    }

    /// `J v`, i.e. `(p, -q)` for `v = (q, p)`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let m = self.half;
        let mut out = vec![0.0; 2 * m];
        for i in 0..m {
            out[i] = v[m + i];
            out[m + i] = -v[i];
        }
        out
    }

    /// `J A J^T` for a `2m × 2m` matrix, by block permutation:
    /// `[[A22, -A21], [-A12, A11]]`.
    pub fn conjugate(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.half;
        DMatrix::from_fn(2 * m, 2 * m, |i, j| {
            let (bi, ri) = (i / m, i % m);
            let (bj, rj) = (j / m, j % m);
            let src_i = (1 - bi) * m + ri;
            let src_j = (1 - bj) * m + rj;
            let sign = if bi == bj { 1.0 } else { -1.0 };
            sign * a[(src_i, src_j)]
        })
    }
}

/// `exp(-|x - z|^2 / (2 sigma^2))`.
pub fn gaussian_kernel(x: &[f64], z: &[f64], w: KernelWidth) -> Result<f64> {
    check_dim(x.len(), z.len())?;
    let r2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-r2 / (2.0 * w.get() * w.get())).exp())
}

/// `G_c(u) = (1/σ²) e^{-|u|²/(2σ²)} (I - u u^T / σ²)`.
pub(crate) fn curl_free_at(u: &[f64], w: KernelWidth) -> DMatrix<f64> {
    let s2 = w.get() * w.get();
    let r2: f64 = u.iter().map(|v| v * v).sum();
    let e = (-r2 / (2.0 * s2)).exp() / s2;
    let n = u.len();
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        e * (delta - u[i] * u[j] / s2)
    })
}

fn diff(x: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter().zip(z).map(|(a, b)| a - b).collect()
}

fn sum(x: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter().zip(z).map(|(a, b)| a + b).collect()
}

/// Curl-free kernel `-∇∇^T g_σ(x - z)`.
pub fn curl_free_kernel(x: &[f64], z: &[f64], w: KernelWidth) -> Result<DMatrix<f64>> {
    check_dim(x.len(), z.len())?;
    Ok(curl_free_at(&diff(x, z), w))
}

/// Symplectic kernel `J G_c(x - z) J^T`.
pub fn symplectic_kernel(x: &[f64], z: &[f64], w: KernelWidth) -> Result<DMatrix<f64>> {
    check_dim(x.len(), z.len())?;
    let j = Symplectic::for_dim(x.len())?;
    Ok(j.conjugate(&curl_free_at(&diff(x, z), w)))
}

/// Odd curl-free kernel `½ (G_c(x - z) - G_c(x + z))`.
pub fn odd_curl_free_kernel(x: &[f64], z: &[f64], w: KernelWidth) -> Result<DMatrix<f64>> {
    check_dim(x.len(), z.len())?;
    let a = curl_free_at(&diff(x, z), w);
    let b = curl_free_at(&sum(x, z), w);
    Ok((a - b) * 0.5)
}

/// Odd symplectic kernel `½ (G_s(x - z) - G_s(x + z))`.
pub fn odd_symplectic_kernel(x: &[f64], z: &[f64], w: KernelWidth) -> Result<DMatrix<f64>> {
    check_dim(x.len(), z.len())?;
    let j = Symplectic::for_dim(x.len())?;
    let a = curl_free_at(&diff(x, z), w);
    let b = curl_free_at(&sum(x, z), w);
    Ok(j.conjugate(&((a - b) * 0.5)))
}

/// Matrix-valued kernel families known to the exact solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKernel {
    CurlFree,
    Symplectic,
    OddCurlFree,
    OddSymplectic,
    /// `k_σ(x, z) I_n`.
    GaussianSeparable,
}

impl MatrixKernel {
    pub fn eval(self, x: &[f64], z: &[f64], w: KernelWidth) -> Result<DMatrix<f64>> {
        match self {
            MatrixKernel::CurlFree => curl_free_kernel(x, z, w),
            MatrixKernel::Symplectic => symplectic_kernel(x, z, w),
            MatrixKernel::OddCurlFree => odd_curl_free_kernel(x, z, w),
            MatrixKernel::OddSymplectic => odd_symplectic_kernel(x, z, w),
            MatrixKernel::GaussianSeparable => {
                let k = gaussian_kernel(x, z, w)?;
                Ok(DMatrix::identity(x.len(), x.len()) * k)
            }
        }
    }
}

/// Block Gram matrix `[K(x_i, x_j)]`, of size `nN × nN`.
pub fn gram_matrix(kernel: MatrixKernel, points: &[Vec<f64>], w: KernelWidth) -> Result<DMatrix<f64>> {
    let count = points.len();
    let n = points.first().map_or(0, |p| p.len());
    let mut g = DMatrix::zeros(n * count, n * count);
    for (i, xi) in points.iter().enumerate() {
        check_dim(n, xi.len())?;
        for (j, xj) in points.iter().enumerate().skip(i) {
            let k = kernel.eval(xi, xj, w)?;
            g.view_mut((i * n, j * n), (n, n)).copy_from(&k);
            if i != j {
                g.view_mut((j * n, i * n), (n, n)).copy_from(&k.transpose());
            }
        }
    }
    Ok(g)
}
