//! Densities sampled on a uniform space lattice at a list of times.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Space-time lattice: nodes `origin[d] + i·spacing[d]`, `i < counts[d]`,
/// at each of `times`. Flattened space index runs with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub n: usize,
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
    pub times: Vec<f64>,
}

impl Lattice {
    /// Uniform nodes from `lower` to `upper` inclusive on every axis and
    /// `time_steps + 1` equally spaced times on `[0, t_end]`.
    pub fn uniform(lower: &[f64], upper: &[f64], counts: &[usize], t_end: f64, time_steps: usize) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n || counts.len() != n {
            return Err(Error::DimensionMismatch("lattice bounds and counts disagree".into()));
        }
        if counts.iter().any(|&c| c < 2) || time_steps == 0 {
            return Err(Error::InvalidParameter("lattice needs at least two nodes per axis and one time step".into()));
        }
        Ok(Self {
            n,
            origin: lower.to_vec(),
            spacing: (0..n).map(|d| (upper[d] - lower[d]) / (counts[d] - 1) as f64).collect(),
            counts: counts.to_vec(),
            times: (0..=time_steps).map(|k| t_end * k as f64 / time_steps as f64).collect(),
        })
    }

    pub fn space_len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn len(&self) -> usize {
        self.space_len() * self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of the flattened space index `k`.
    pub fn point(&self, mut k: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for d in (0..self.n).rev() {
            let i = k % self.counts[d];
            k /= self.counts[d];
            x[d] = self.origin[d] + i as f64 * self.spacing[d];
        }
        x
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.space_len()).map(|k| self.point(k)).collect()
    }

    /// Trapezoid weights over the space lattice.
    pub fn space_weights(&self) -> Vec<f64> {
        let mut w = vec![1.0; self.space_len()];
        for (k, wk) in w.iter_mut().enumerate() {
            let mut rest = k;
            for d in (0..self.n).rev() {
                let i = rest % self.counts[d];
                rest /= self.counts[d];
                let edge = i == 0 || i + 1 == self.counts[d];
                *wk *= if edge { 0.5 } else { 1.0 } * self.spacing[d];
            }
        }
        w
    }

    /// Trapezoid weights over the time list.
    pub fn time_weights(&self) -> Vec<f64> {
        let t = &self.times;
        let mut w = vec![0.0; t.len()];
        for k in 1..t.len() {
            let h = t[k] - t[k - 1];
            w[k - 1] += 0.5 * h;
            w[k] += 0.5 * h;
        }
        if t.len() == 1 {
            w[0] = 1.0;
        }
        w
    }

    pub fn check_compatible(&self, other: &Lattice) -> Result<()> {
        let close = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        if self.n != other.n
            || self.counts != other.counts
            || !close(&self.origin, &other.origin)
            || !close(&self.spacing, &other.spacing)
            || !close(&self.times, &other.times)
        {
            return Err(Error::LatticeMismatch(format!(
                "{:?}/{:?} over {} times vs {:?}/{:?} over {} times",
                self.origin,
                self.counts,
                self.times.len(),
                other.origin,
                other.counts,
                other.times.len()
            )));
        }
        Ok(())
    }

    /// Strides of the flattened space index per axis.
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.n];
        for d in (0..self.n.saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.counts[d + 1];
        }
        s
    }
}

/// Values on a [`Lattice`], flattened `[time][space]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a lattice of {} nodes",
                values.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("grid density has non-finite values".into()));
        }
        Ok(Self { lattice, values })
    }

    /// Evaluates `f(t, x)` on every lattice node.
    pub fn from_fn(lattice: Lattice, f: impl Fn(f64, &[f64]) -> f64 + Sync) -> Result<Self> {
        use rayon::prelude::*;
        let points = lattice.points();
        let values: Vec<f64> = lattice
            .times
            .par_iter()
            .flat_map_iter(|&t| points.iter().map(move |x| (t, x)).collect::<Vec<_>>())
            .map(|(t, x)| f(t, x))
            .collect();
        Self::new(lattice, values)
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let s = self.lattice.space_len();
        &self.values[k * s..(k + 1) * s]
    }

    /// `∫ u(t_k, x) dx` by the trapezoid rule.
    pub fn mass(&self, k: usize) -> f64 {
        self.lattice.space_weights().iter().zip(self.slice(k)).map(|(w, v)| w * v).sum()
    }

    pub fn difference(&self, other: &GridDensity) -> Result<GridDensity> {
        self.lattice.check_compatible(&other.lattice)?;
        Ok(GridDensity {
            lattice: self.lattice.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// `∫₀ᵀ ∫ u v dx dt`.
    pub fn inner(&self, other: &GridDensity) -> Result<f64> {
        self.lattice.check_compatible(&other.lattice)?;
        Ok(space_time_integral(&self.lattice, |k| self.values[k] * other.values[k]))
    }

    /// `∫₀ᵀ ‖u(t)‖²_{L²} dt`.
    pub fn l2_norm_sq(&self) -> f64 {
        space_time_integral(&self.lattice, |k| self.values[k] * self.values[k])
    }

    /// `‖u(t_k)‖²_{L²}`.
    pub fn l2_norm_sq_at(&self, k: usize) -> f64 {
        self.lattice
            .space_weights()
            .iter()
            .zip(self.slice(k))
            .map(|(w, v)| w * v * v)
            .sum()
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
        let n = self.lattice.n;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .chain(std::iter::once("value".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        let points = self.lattice.points();
        for (k, t) in self.lattice.times.iter().enumerate() {
            for (s, x) in points.iter().enumerate() {
                write!(out, "{t}")?;
                for v in x {
                    write!(out, ",{v}")?;
                }
                writeln!(out, ",{}", self.values[k * points.len() + s])?;
            }
        }
        out.flush()?;
        std::fs::write(json_path, serde_json::to_string_pretty(&self.lattice)? + "\n")?;
        Ok(())
    }

    pub fn load(csv_path: &Path, json_path: &Path) -> Result<Self> {
        let lattice: Lattice = serde_json::from_str(&std::fs::read_to_string(json_path)?)
            .map_err(|e| Error::schema(json_path, e.to_string()))?;
        let mut reader = csv::Reader::from_path(csv_path)?;
        let width = lattice.n + 2;
        if reader.headers()?.len() != width {
            return Err(Error::schema(csv_path, format!("expected {width} columns")));
        }
        let mut values = Vec::with_capacity(lattice.len());
        for record in reader.records() {
            let record = record?;
            let v = record[width - 1]
                .parse::<f64>()
                .map_err(|e| Error::schema(csv_path, e.to_string()))?;
            values.push(v);
        }
        if values.len() != lattice.len() {
            return Err(Error::schema(
                csv_path,
                format!("expected {} rows, found {}", lattice.len(), values.len()),
            ));
        }
        GridDensity::new(lattice, values)
    }
}

/// `∫₀ᵀ ∫ f dx dt` of a function given by flattened node index.
pub fn space_time_integral(lattice: &Lattice, f: impl Fn(usize) -> f64) -> f64 {
    let sw = lattice.space_weights();
    let s = sw.len();
    lattice
        .time_weights()
        .iter()
        .enumerate()
        .map(|(k, wt)| wt * sw.iter().enumerate().map(|(i, ws)| ws * f(k * s + i)).sum::<f64>())
        .sum()
}

/// First-derivative weights at `x[at]` from the three nodes `x`.
fn three_point_first(x: [f64; 3], at: usize) -> [f64; 3] {
    let z = x[at];
    let mut w = [0.0; 3];
    for j in 0..3 {
        let (a, b) = match j {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let denom = (x[j] - x[a]) * (x[j] - x[b]);
        w[j] = ((z - x[a]) + (z - x[b])) / denom;
    }
    w
}

/// Derivative along one axis of data laid out with the given stride, second
/// order accurate including the end points. `order` is 1 or 2.
fn diff_line(f: &[f64], coords: &[f64], order: usize) -> Vec<f64> {
    let len = f.len();
    let mut out = vec![0.0; len];
    if len < 3 {
        return out;
    }
    if order == 1 {
        for i in 0..len {
            let c = i.clamp(1, len - 2);
            let w = three_point_first([coords[c - 1], coords[c], coords[c + 1]], i + 1 - c);
            out[i] = w[0] * f[c - 1] + w[1] * f[c] + w[2] * f[c + 1];
        }
        return out;
    }
    let h = coords[1] - coords[0];
    let h2 = h * h;
    for i in 1..len - 1 {
        out[i] = (f[i - 1] - 2.0 * f[i] + f[i + 1]) / h2;
    }
    if len >= 4 {
        out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
        out[len - 1] = (2.0 * f[len - 1] - 5.0 * f[len - 2] + 4.0 * f[len - 3] - f[len - 4]) / h2;
    } else {
        out[0] = out[1];
        out[len - 1] = out[len - 2];
    }
    out
}

/// Applies `diff_line` along space axis `axis` of one time slice.
fn diff_space(lattice: &Lattice, slice: &[f64], axis: usize, order: usize) -> Vec<f64> {
    let strides = lattice.strides();
    let stride = strides[axis];
    let count = lattice.counts[axis];
    let coords: Vec<f64> = (0..count)
        .map(|i| lattice.origin[axis] + i as f64 * lattice.spacing[axis])
        .collect();
    let mut out = vec![0.0; slice.len()];
    for start in 0..slice.len() {
        if !(start / stride).is_multiple_of(count) {
            continue;
        }
        let line: Vec<f64> = (0..count).map(|i| slice[start + i * stride]).collect();
        for (i, v) in diff_line(&line, &coords, order).into_iter().enumerate() {
            out[start + i * stride] = v;
        }
    }
    out
}

/// `∫₀ᵀ (‖∂ₜe‖² + Σ_{|β|≤2} ‖∂^β e‖²) dt` for `e = u − p_ref`, with all
/// derivatives by second-order finite differences on the lattice.
pub fn loss_l(u: &GridDensity, p_ref: &GridDensity) -> Result<f64> {
    let e = u.difference(p_ref)?;
    let lat = &e.lattice;
    let s = lat.space_len();
    let nt = lat.times.len();
    let sw = lat.space_weights();
    let tw = lat.time_weights();
    let dot = |v: &[f64]| -> f64 { v.iter().zip(&sw).map(|(x, w)| w * x * x).sum() };

    let mut total = 0.0;
    for k in 0..nt {
        let slice = e.slice(k);
        let mut norm = dot(slice);
        for a in 0..lat.n {
            let da = diff_space(lat, slice, a, 1);
            norm += dot(&da);
            norm += dot(&diff_space(lat, slice, a, 2));
            for b in 0..lat.n {
                if b != a {
                    norm += dot(&diff_space(lat, &da, b, 1));
                }
            }
        }
        total += tw[k] * norm;
    }
    if nt >= 3 {
        let mut dt = vec![0.0; e.values.len()];
        for i in 0..s {
            let line: Vec<f64> = (0..nt).map(|k| e.values[k * s + i]).collect();
            for (k, v) in diff_line(&line, &lat.times, 1).into_iter().enumerate() {
                dt[k * s + i] = v;
            }
        }
        total += space_time_integral(lat, |k| dt[k] * dt[k]);
    }
    Ok(total)
}
