//! Identification of drift and diffusion coefficients of stochastic
//! differential equations from sampled marginals.
//!
//! A kernel density model `p̂` is fitted to the observations, then a
//! positive-semidefinite kernel model for the diffusion and a linear kernel
//! model for the drift are chosen to minimise the Fokker–Planck residual
//! `∂ₜp̂ − L*p̂` in `L²`. Learned coefficients are validated by running a
//! forward Fokker–Planck solver.

pub mod assembly;
pub mod coefficients;
pub mod density;
pub mod error;
pub mod fp_solver;
pub mod kernels;
pub mod linalg;
pub mod operators;
pub mod pipeline;
pub mod quadrature;
pub mod sdp;
pub mod sde_sim;

pub use error::{Error, Result};
