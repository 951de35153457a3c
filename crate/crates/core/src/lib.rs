//! Learning dissipative Hamiltonian vector fields from small noisy datasets.
//!
//! A field is modelled as the sum of a symplectic (divergence-free) part and
//! a dissipative (gradient) part, each a linear combination of random
//! Fourier features approximating an odd matrix-valued Gaussian kernel:
//!
//! ```text
//! f(x) = Ψ_{c,o}(x)^T α + Ψ_{s,o}(x)^T β
//! ```
//!
//! Both coefficient vectors come from one closed-form ridge solve.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernels`] | exact Gaussian, curl-free, symplectic and odd kernels |
//! | [`features`] | random Fourier feature bases and maps |
//! | [`regression`] | Helmholtz and baseline fits, potentials, exact-kernel solver |
//! | [`systems`] | mass-spring-damper and pendulum, RK4, dataset generation |
//! | [`evaluation`] | MSE, test sets, cross-validated grid search, reports |
//! | [`cli`] | experiment configuration and command implementations |

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod features;
pub mod io;
pub mod kernels;
pub mod regression;
pub mod seed;
pub mod systems;

pub use error::{Error, Result};
pub use exec::Execution;
pub use features::{sample_basis, FeatureBasis, FeatureKind};
pub use kernels::{KernelWidth, MatrixKernel, Symplectic};
pub use regression::{
    fit_baseline, fit_exact_helmholtz, fit_exact_kernel, fit_helmholtz, BaselineModel, Dataset, ExactKernelModel,
    HelmholtzModel, Hyperparameters,
};
pub use seed::SeedPlan;
pub use systems::SystemSpec;

/// A vector field `R^n → R^n`, learned or exact.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).eval(x)
    }
}
