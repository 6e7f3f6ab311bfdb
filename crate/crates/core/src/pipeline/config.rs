//! Run configuration: a TOML file with `[simulate]`, `[fit]` and `[validate]`
//! sections. Every key has a default and unknown keys are rejected.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::QuadratureConfig;
use crate::coefficients::{ou_field, CoefficientField, ConstantField};
use crate::error::{Error, Result};
use crate::sde_sim::InitialLaw;
use crate::sdp::SolveOptions;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub simulate: SimulateConfig,
    pub fit: FitConfig,
    pub validate: ValidateConfig,
}

/// Ground-truth coefficients used to generate data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldConfig {
    /// `a = σ²I`, `b = −θy`, optionally cut off outside a ball.
    Ou {
        theta: f64,
        sigma2: f64,
        radius: Option<f64>,
    },
    /// Constant `a` (row-major) and `b`.
    Constant { a: Vec<f64>, b: Vec<f64> },
}

impl FieldConfig {
    pub fn build(&self, n: usize) -> Result<Box<dyn CoefficientField>> {
        Ok(match self {
            FieldConfig::Ou { theta, sigma2, radius } => Box::new(ou_field(*theta, *sigma2, n, *radius)?),
            FieldConfig::Constant { a, b } => {
                if a.len() != n * n || b.len() != n {
                    return Err(Error::Config(format!(
                        "constant field needs {} entries in a and {n} in b",
                        n * n
                    )));
                }
                Box::new(ConstantField::new(
                    DMatrix::from_row_slice(n, n, a),
                    DVector::from_column_slice(b),
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub t_end: f64,
    /// Diffusion floor `α` in `a + αI`.
    pub alpha: f64,
    /// Euler–Maruyama step.
    pub dt: f64,
    pub seed: u64,
    pub field: FieldConfig,
    pub law: InitialLaw,
    /// Overrides the scheduled number of observation times.
    pub times: Option<usize>,
    /// Overrides the scheduled number of paths.
    pub samples: Option<usize>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 1,
            t_end: 1.0,
            alpha: 0.5,
            dt: 1e-3,
            seed: 1,
            field: FieldConfig::Ou {
                theta: 1.0,
                sigma2: 0.5,
                radius: Some(4.0),
            },
            law: InitialLaw::Gaussian {
                mean: vec![1.0],
                covariance: vec![0.25],
            },
            times: None,
            samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Smoothness index `m` of the coefficient class.
    pub smoothness: usize,
    /// Radius of the spatial ball of the coefficient domain.
    pub domain_radius: f64,
    /// Length scale of the Matérn kernels.
    pub length_scale: f64,
    pub bandwidth: Option<f64>,
    pub lambda: Option<f64>,
    pub fill_distance: Option<f64>,
    /// Center count above which the fill distance is relaxed.
    pub max_centers: usize,
    /// Blend the learned diffusion towards `αI` near the domain boundary.
    pub alpha_floor: bool,
    pub quadrature: QuadratureConfig,
    pub solver: SolveOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            delta: 0.1,
            smoothness: 1,
            domain_radius: 4.0,
            length_scale: 1.0,
            bandwidth: None,
            lambda: None,
            fill_distance: None,
            max_centers: 400,
            alpha_floor: false,
            quadrature: QuadratureConfig::default(),
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// The validation box is `[−half_width, half_width]ⁿ`.
    pub half_width: f64,
    /// Nodes per axis.
    pub nodes: usize,
    /// Cap on the total number of space nodes; `nodes` is reduced to fit.
    pub max_space_nodes: usize,
    pub time_steps: usize,
    /// Forward-solver step; defaults to `10·dx²`.
    pub dt: Option<f64>,
    /// Number of random test functions for the observation gap.
    pub observation_functions: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            half_width: 6.0,
            nodes: 241,
            max_space_nodes: 40_000,
            time_steps: 20,
            dt: None,
            observation_functions: 20,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path`, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml_str(&text)
            }
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.simulate.seed = seed;
        }
        if let Some(e) = o.epsilon {
            self.fit.epsilon = e;
        }
        if let Some(d) = o.delta {
            self.fit.delta = d;
        }
        self.check()
    }

    fn check(&self) -> Result<()> {
        let s = &self.simulate;
        let bad = |msg: String| Err(Error::Config(msg));
        if s.n == 0 || s.n > 2 {
            return bad(format!("simulate.n must be 1 or 2, got {}", s.n));
        }
        if !(s.t_end > 0.0) || !(s.dt > 0.0) || !(s.alpha > 0.0) {
            return bad("simulate.t_end, simulate.dt and simulate.alpha must be positive".into());
        }
        if let Some(d) = s.law.dim() {
            if d != s.n {
                return bad(format!("simulate.law has dimension {d}, simulate.n is {}", s.n));
            }
        }
        let f = &self.fit;
        if !(f.epsilon > 0.0 && f.epsilon < 1.0) || !(f.delta > 0.0 && f.delta < 1.0) {
            return bad(format!("fit.epsilon and fit.delta must lie in (0, 1), got {} and {}", f.epsilon, f.delta));
        }
        if f.smoothness == 0 || !(f.domain_radius > 0.0) || !(f.length_scale > 0.0) || f.max_centers == 0 {
            return bad("fit.smoothness, fit.domain_radius, fit.length_scale and fit.max_centers must be positive".into());
        }
        if f.bandwidth.is_some_and(|r| !(r > 0.0)) || f.fill_distance.is_some_and(|h| !(h > 0.0)) {
            return bad("fit.bandwidth and fit.fill_distance must be positive".into());
        }
        if f.lambda.is_some_and(|l| !(l >= 0.0)) {
            return bad("fit.lambda must be non-negative".into());
        }
        let v = &self.validate;
        if !(v.half_width > 0.0) || v.nodes < 3 || v.time_steps == 0 || v.max_space_nodes < 9 {
            return bad("validate.half_width, validate.nodes, validate.time_steps and validate.max_space_nodes are out of range".into());
        }
        if v.dt.is_some_and(|dt| !(dt > 0.0)) {
            return bad("validate.dt must be positive".into());
        }
        if matches!(s.law, InitialLaw::Point { .. }) {
            return bad("validation needs an initial law with a density; point laws are not supported".into());
        }
        Ok(())
    }
}
