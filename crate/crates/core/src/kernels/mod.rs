//! Reproducing-kernel primitives: the bandlimited radial kernel, Matérn kernels
//! in time and space-time, Gram systems and scattered-center utilities.

pub mod bandlimited;
pub mod bessel;
pub mod fill;
pub mod gram;
pub mod matern;
pub mod windowed;

pub use bandlimited::{rho, unit_ball_volume, BandlimitedKernel, RadialJet};
pub use fill::{fill_distance, make_centers, Domain, DEFAULT_CENTER_CAP};
pub use gram::GramSystem;
pub use matern::MaternKernel;
pub use windowed::{coefficient_smoothness, KernelSpec, Window, WindowedKernel};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimum-norm interpolation weights in time: `c(t) = G⁻¹ v(t)` with
/// `v(t)_j = k(t − t_j)` and `G_{jk} = k(t_j − t_k)`.
#[derive(Debug, Clone)]
pub struct TimeCoefficients {
    times: Vec<f64>,
    kernel: MaternKernel,
    gram: GramSystem,
    inverse: DMatrix<f64>,
}

impl TimeCoefficients {
    pub fn new(times: &[f64], kernel: MaternKernel) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidParameter("time grid is empty".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("time grid must be strictly increasing".into()));
        }
        let gram = GramSystem::from_kernel(times, |a, b| kernel.radial(a - b))?;
        let inverse = gram.inverse();
        Ok(Self {
            times: times.to_vec(),
            kernel,
            gram,
            inverse,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn kernel(&self) -> &MaternKernel {
        &self.kernel
    }

    pub fn gram(&self) -> &GramSystem {
        &self.gram
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn apply(&self, v: DVector<f64>) -> Vec<f64> {
        (&self.inverse * v).iter().copied().collect()
    }

    /// `(c_1(t), …, c_M(t))`.
    pub fn coeffs(&self, t: f64) -> Vec<f64> {
        self.apply(DVector::from_iterator(
            self.times.len(),
            self.times.iter().map(|tj| self.kernel.radial(t - tj)),
        ))
    }

    /// `(ċ_1(t), …, ċ_M(t))`.
    pub fn coeffs_dt(&self, t: f64) -> Vec<f64> {
        self.apply(DVector::from_iterator(
            self.times.len(),
            self.times.iter().map(|tj| self.kernel.value_grad(&[t - tj]).1[0]),
        ))
    }
}
