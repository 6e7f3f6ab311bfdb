//! Euler–Maruyama simulation of `dX = b dt + √(a + αI) dW` and persistence of
//! the resulting observation grid.
//!
//! Every path is recorded at all `M` observation times, and each path draws
//! from its own ChaCha stream keyed by `(seed, path index)`, so results do not
//! depend on how paths are scheduled across threads.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::linalg;

pub const SCHEMA_VERSION: u32 = 1;
pub const SAMPLES_FILE: &str = "observations.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Distribution of the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialLaw {
    /// Covariance given row-major.
    Gaussian { mean: Vec<f64>, covariance: Vec<f64> },
    UniformBall { radius: f64 },
    Point { x0: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> Option<usize> {
        match self {
            InitialLaw::Gaussian { mean, .. } => Some(mean.len()),
            InitialLaw::UniformBall { .. } => None,
            InitialLaw::Point { x0 } => Some(x0.len()),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if let Some(d) = self.dim() {
            if d != n {
                return Err(Error::DimensionMismatch(format!("initial law has dimension {d}, field has {n}")));
            }
        }
        match self {
            InitialLaw::Gaussian { covariance, .. } => {
                if covariance.len() != n * n {
                    return Err(Error::DimensionMismatch(format!(
                        "covariance has {} entries, expected {}",
                        covariance.len(),
                        n * n
                    )));
                }
                self.covariance_factor(n).map(|_| ())
            }
            InitialLaw::UniformBall { radius } if !(*radius > 0.0) => {
                Err(Error::InvalidParameter(format!("ball radius must be positive, got {radius}")))
            }
            _ => Ok(()),
        }
    }

    /// Lebesgue density at `x`; `None` for point masses.
    pub fn density(&self, x: &[f64]) -> Option<f64> {
        let n = x.len();
        match self {
            InitialLaw::Gaussian { mean, covariance } => {
                let c = DMatrix::from_row_slice(n, n, covariance);
                let chol = c.cholesky()?;
                let d = DVector::from_iterator(n, x.iter().zip(mean).map(|(a, b)| a - b));
                let z = chol.solve(&d);
                let det: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
                Some((-0.5 * d.dot(&z)).exp() / ((2.0 * std::f64::consts::PI).powi(n as i32) * det).sqrt())
            }
            InitialLaw::UniformBall { radius } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let volume = crate::kernels::unit_ball_volume(n) * radius.powi(n as i32);
                Some(if r2 <= radius * radius { 1.0 / volume } else { 0.0 })
            }
            InitialLaw::Point { .. } => None,
        }
    }

    fn covariance_factor(&self, n: usize) -> Result<DMatrix<f64>> {
        let InitialLaw::Gaussian { covariance, .. } = self else {
            unreachable!("only Gaussian laws carry a covariance")
        };
        let c = DMatrix::from_row_slice(n, n, covariance);
        if (&c - c.transpose()).norm() > 1e-12 * c.norm() {
            return Err(Error::InvalidParameter("covariance must be symmetric".into()));
        }
        c.cholesky()
            .map(|ch| ch.l())
            .ok_or_else(|| Error::InvalidParameter("covariance must be positive definite".into()))
    }

    fn sample<R: Rng>(&self, n: usize, factor: Option<&DMatrix<f64>>, rng: &mut R) -> Vec<f64> {
        match self {
            InitialLaw::Gaussian { mean, .. } => {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = factor.expect("factor computed for Gaussian laws") * z;
                mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
            }
            InitialLaw::UniformBall { radius } => {
                let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                dir.iter().map(|v| r * v / norm).collect()
            }
            InitialLaw::Point { x0 } => x0.clone(),
        }
    }
}

/// Provenance stored next to the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub seed: u64,
    pub dt: f64,
    pub coeff: serde_json::Value,
    pub law: serde_json::Value,
    pub schema_version: u32,
}

/// `X_{ℓ,j}` for `ℓ = 1..M`, `j = 1..N` at `t_ℓ = T(ℓ−1)/(M−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    manifest: Manifest,
    times: Vec<f64>,
    /// Flattened as `[ℓ][j][i]`.
    data: Vec<f64>,
}

/// `t_ℓ = T(ℓ−1)/(M−1)`; a single time when `M = 1`.
pub fn observation_times(m: usize, t_end: f64) -> Vec<f64> {
    if m == 1 {
        return vec![0.0];
    }
    (0..m)
        .map(|l| if l + 1 == m { t_end } else { t_end * l as f64 / (m - 1) as f64 })
        .collect()
}

impl ObservationSet {
    /// Wraps externally produced samples, `samples[ℓ][j]` being a point of `ℝⁿ`.
    pub fn from_samples(n: usize, t_end: f64, samples: Vec<Vec<Vec<f64>>>, seed: u64) -> Result<Self> {
        let m = samples.len();
        if m == 0 {
            return Err(Error::InvalidParameter("need at least one observation time".into()));
        }
        let count = samples[0].len();
        if count == 0 {
            return Err(Error::InvalidParameter("need at least one sample per time".into()));
        }
        let mut data = Vec::with_capacity(m * count * n);
        for row in &samples {
            if row.len() != count {
                return Err(Error::DimensionMismatch("every time needs the same number of samples".into()));
            }
            for x in row {
                if x.len() != n {
                    return Err(Error::DimensionMismatch(format!("sample of dimension {} in {n}-d set", x.len())));
                }
                data.extend_from_slice(x);
            }
        }
        let manifest = Manifest {
            n,
            m,
            samples: count,
            t_end,
            seed,
            dt: 0.0,
            coeff: serde_json::Value::Null,
            law: serde_json::Value::Null,
            schema_version: SCHEMA_VERSION,
        };
        Self::assemble(manifest, data)
    }

    fn assemble(manifest: Manifest, data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let per_time = manifest.samples * manifest.n;
            let l = pos / per_time;
            return Err(Error::NonFiniteState {
                time_index: l,
                path: (pos % per_time) / manifest.n,
                time: observation_times(manifest.m, manifest.t_end)[l],
            });
        }
        Ok(Self {
            times: observation_times(manifest.m, manifest.t_end),
            manifest,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.manifest.n
    }

    pub fn m(&self) -> usize {
        self.manifest.m
    }

    pub fn samples_per_time(&self) -> usize {
        self.manifest.samples
    }

    pub fn t_end(&self) -> f64 {
        self.manifest.t_end
    }

    pub fn seed(&self) -> u64 {
        self.manifest.seed
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn sample(&self, l: usize, j: usize) -> &[f64] {
        let n = self.manifest.n;
        let start = (l * self.manifest.samples + j) * n;
        &self.data[start..start + n]
    }

    /// All samples at time index `ℓ`, flattened `[j][i]`.
    pub fn time_slice(&self, l: usize) -> &[f64] {
        let width = self.manifest.samples * self.manifest.n;
        &self.data[l * width..(l + 1) * width]
    }

    /// `max_{ℓ,j} ‖X_{ℓ,j}‖`.
    pub fn max_norm(&self) -> f64 {
        self.data
            .chunks(self.manifest.n)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let n = self.manifest.n;
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(SAMPLES_FILE))?);
        let header: Vec<String> = ["t_index".to_string(), "sample_index".to_string()]
            .into_iter()
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for l in 0..self.m() {
            for j in 0..self.samples_per_time() {
                write!(out, "{l},{j}")?;
                for v in self.sample(l, j) {
                    // Display on f64 is the shortest string that parses back exactly.
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        out.flush()?;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
            .map_err(|e| Error::schema(&manifest_path, e.to_string()))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                &manifest_path,
                format!("unsupported schema version {}", manifest.schema_version),
            ));
        }
        if manifest.n == 0 || manifest.m == 0 || manifest.samples == 0 {
            return Err(Error::schema(&manifest_path, "n, M and N must be positive"));
        }
        let csv_path = dir.join(SAMPLES_FILE);
        let mut reader = csv::Reader::from_path(&csv_path)?;
        let n = manifest.n;
        let headers = reader.headers()?.clone();
        let expected: Vec<String> = ["t_index".to_string(), "sample_index".to_string()]
            .into_iter()
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{}: header {:?} does not match n = {n}",
                csv_path.display(),
                headers
            )));
        }
        let total = manifest.m * manifest.samples;
        let mut data = vec![f64::NAN; total * n];
        let mut seen = vec![false; total];
        let mut rows = 0usize;
        for record in reader.records() {
            let record = record?;
            let parse_index = |k: usize| -> Result<usize> {
                record[k]
                    .parse::<usize>()
                    .map_err(|e| Error::schema(&csv_path, format!("row {}: {e}", rows + 1)))
            };
            let (l, j) = (parse_index(0)?, parse_index(1)?);
            if l >= manifest.m || j >= manifest.samples {
                return Err(Error::schema(&csv_path, format!("index ({l}, {j}) outside the {}x{} grid", manifest.m, manifest.samples)));
            }
            let slot = l * manifest.samples + j;
            if seen[slot] {
                return Err(Error::schema(&csv_path, format!("duplicate row for ({l}, {j})")));
            }
            seen[slot] = true;
            for i in 0..n {
                data[slot * n + i] = record[2 + i]
                    .parse::<f64>()
                    .map_err(|e| Error::schema(&csv_path, format!("row {}: {e}", rows + 1)))?;
            }
            rows += 1;
        }
        if rows != total {
            return Err(Error::schema(
                &csv_path,
                format!("expected M*N = {total} rows, found {rows}"),
            ));
        }
        Self::assemble(manifest, data)
    }
}

/// Simulation inputs besides the coefficient field.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub alpha: f64,
    pub law: InitialLaw,
    pub m: usize,
    pub samples: usize,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Number of Euler steps per observation interval and the resulting step.
pub fn effective_step(t_end: f64, m: usize, dt: f64) -> (usize, f64) {
    let interval = t_end / (m - 1) as f64;
    let steps = ((interval / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (steps, interval / steps as f64)
}

pub fn simulate<F: CoefficientField>(field: &F, spec: &SimulationSpec) -> Result<ObservationSet> {
    let n = field.dim();
    if !(spec.alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", spec.alpha)));
    }
    if spec.m < 2 {
        return Err(Error::InvalidParameter(format!("need M >= 2 observation times, got {}", spec.m)));
    }
    if spec.samples == 0 {
        return Err(Error::InvalidParameter("need N >= 1 paths".into()));
    }
    if !(spec.t_end > 0.0) || !(spec.dt > 0.0) {
        return Err(Error::InvalidParameter("T and dt must be positive".into()));
    }
    spec.law.validate(n)?;
    let factor = match spec.law {
        InitialLaw::Gaussian { .. } => Some(spec.law.covariance_factor(n)?),
        _ => None,
    };
    let (steps, dt) = effective_step(spec.t_end, spec.m, spec.dt);
    let sqrt_dt = dt.sqrt();
    let m = spec.m;

    let paths: Vec<Result<Vec<f64>>> = (0..spec.samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
            rng.set_stream(j as u64);
            let mut x = spec.law.sample(n, factor.as_ref(), &mut rng);
            let mut record = Vec::with_capacity(m * n);
            record.extend_from_slice(&x);
            let mut noise = vec![0.0; n];
            for l in 1..m {
                for s in 0..steps {
                    let t = spec.t_end * (l - 1) as f64 / (m - 1) as f64 + s as f64 * dt;
                    let (a, b) = field.value(t, &x);
                    noise.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
                    let root = diffusion_root(n, &a, spec.alpha);
                    for i in 0..n {
                        let mut dw = 0.0;
                        for k in 0..n {
                            dw += root[i * n + k] * noise[k];
                        }
                        x[i] += b[i] * dt + sqrt_dt * dw;
                    }
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteState {
                            time_index: l,
                            path: j,
                            time: t + dt,
                        });
                    }
                }
                record.extend_from_slice(&x);
            }
            Ok(record)
        })
        .collect();

    let mut data = vec![0.0; m * spec.samples * n];
    for (j, path) in paths.into_iter().enumerate() {
        let path = path?;
        for l in 0..m {
            let dst = (l * spec.samples + j) * n;
            data[dst..dst + n].copy_from_slice(&path[l * n..(l + 1) * n]);
        }
    }
    let mut coeff = field.describe();
    if let Some(obj) = coeff.as_object_mut() {
        obj.insert("alpha".into(), serde_json::json!(spec.alpha));
    }
    let manifest = Manifest {
        n,
        m,
        samples: spec.samples,
        t_end: spec.t_end,
        seed: spec.seed,
        dt,
        coeff,
        law: serde_json::to_value(&spec.law)?,
        schema_version: SCHEMA_VERSION,
    };
    ObservationSet::assemble(manifest, data)
}

/// `√(a + αI)` row-major.
fn diffusion_root(n: usize, a: &[f64], alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![(a[0] + alpha).max(0.0).sqrt()];
    }
    let mut m = DMatrix::from_row_slice(n, n, a);
    for i in 0..n {
        m[(i, i)] += alpha;
    }
    let r = linalg::sqrt_psd(&m);
    (0..n * n).map(|k| r[(k / n, k % n)]).collect()
}
