//! Parameter inference for ODEs through a Gaussian ODE filter.
//!
//! The forward solve runs a once-integrated Brownian motion Kalman filter on
//! `ẋ = Σ_j θ_j f_j(x)`. The filtering mean is then linearized in `θ`, which yields
//! a Gaussian likelihood with closed-form gradient and Hessian estimates. These feed
//! the optimizers and samplers in [`inverse`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod filter;
pub mod inverse;
pub mod kernels;
pub mod likelihood;
pub mod linearization;
pub mod problems;
pub mod reference;

pub use error::{Error, Result};
pub use filter::{filter_solve, FilterOutput, FnBasis, ProblemSpec, VectorFieldBasis};
pub use kernels::{KernelConfig, TimeGrid};
pub use linearization::{jacobian_estimate, kernel_prefactor, JacobianVariant, KernelPrefactor};
