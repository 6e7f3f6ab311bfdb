use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of kernel centers.
pub const DEFAULT_CENTER_CAP: usize = 5000;

/// Domains on which centers are placed and fill distances measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    /// Axis-aligned box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Space-time cylinder `[0, T] × closed-ball(0, radius) ⊂ ℝ^{1+n}`.
    Cylinder { t_end: f64, radius: f64, n: usize },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lower, .. } => lower.len(),
            Domain::Cylinder { n, .. } => n + 1,
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Box { lower, upper } => (lower.clone(), upper.clone()),
            Domain::Cylinder { t_end, radius, n } => {
                let mut lo = vec![0.0];
                let mut hi = vec![*t_end];
                lo.extend(std::iter::repeat_n(-radius, *n));
                hi.extend(std::iter::repeat_n(*radius, *n));
                (lo, hi)
            }
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        let (lo, hi) = self.bounds();
        let in_box = p.iter().zip(lo.iter().zip(&hi)).all(|(x, (l, h))| *x >= *l - 1e-12 && *x <= *h + 1e-12);
        match self {
            Domain::Box { .. } => in_box,
            Domain::Cylinder { radius, .. } => {
                in_box && p[1..].iter().map(|v| v * v).sum::<f64>() <= radius * radius * (1.0 + 1e-12)
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt(),
            Domain::Cylinder { t_end, radius, .. } => (t_end * t_end + 4.0 * radius * radius).sqrt(),
        }
    }

    /// Probe lattice with spacing at most `spacing`, including the boundary of
    /// the ball for cylinders.
    fn probes(&self, spacing: f64) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bounds();
        let counts: Vec<usize> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (((h - l) / spacing).ceil() as usize).max(1) + 1)
            .collect();
        let mut out = Vec::new();
        let total: usize = counts.iter().product();
        let mut idx = vec![0usize; counts.len()];
        for _ in 0..total {
            let p: Vec<f64> = idx
                .iter()
                .enumerate()
                .map(|(d, &i)| lo[d] + (hi[d] - lo[d]) * i as f64 / (counts[d] - 1) as f64)
                .collect();
            if self.contains(&p) {
                out.push(p);
            }
            for d in (0..counts.len()).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        if let Domain::Cylinder { t_end, radius, n } = self {
            if *n >= 2 {
                out.extend(sphere_probes(*t_end, *radius, *n, spacing));
            }
        }
        out
    }
}

fn sphere_probes(t_end: f64, radius: f64, n: usize, spacing: f64) -> Vec<Vec<f64>> {
    // Only the circle is densely sampled; for n > 2 the interior lattice carries the estimate.
    if n != 2 {
        return Vec::new();
    }
    let nt = ((t_end / spacing).ceil() as usize).max(1) + 1;
    let na = ((std::f64::consts::TAU * radius / spacing).ceil() as usize).max(8);
    let mut out = Vec::with_capacity(nt * na);
    for i in 0..nt {
        let t = t_end * i as f64 / (nt - 1) as f64;
        for k in 0..na {
            let th = std::f64::consts::TAU * k as f64 / na as f64;
            out.push(vec![t, radius * th.cos(), radius * th.sin()]);
        }
    }
    out
}

fn max_min_distance(probes: &[Vec<f64>], points: &[Vec<f64>]) -> f64 {
    probes
        .iter()
        .map(|p| {
            points
                .iter()
                .map(|q| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
        .sqrt()
}

/// `sup_{z ∈ D} min_ℓ ‖z − z_ℓ‖`, estimated on a probe lattice refined until its
/// spacing is at most a tenth of the estimate.
pub fn fill_distance(points: &[Vec<f64>], domain: &Domain) -> f64 {
    assert!(!points.is_empty(), "fill distance needs at least one point");
    let mut spacing = domain.diameter() / 16.0;
    loop {
        let h = max_min_distance(&domain.probes(spacing), points);
        if spacing <= h / 10.0 || spacing < 1e-9 {
            return h;
        }
        spacing = (h / 10.0).min(spacing / 2.0);
    }
}

fn cell_centered(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let w = (hi - lo) / count as f64;
    (0..count).map(|i| lo + (i as f64 + 0.5) * w).collect()
}

fn grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

/// Cell-centred grid of centers in `D` whose measured fill distance is at most
/// `target`. Fails when more than `cap` centers would be needed.
pub fn make_centers(domain: &Domain, target: f64, cap: usize) -> Result<Vec<Vec<f64>>> {
    if !(target > 0.0) {
        return Err(Error::InvalidParameter(format!("target fill distance must be positive, got {target}")));
    }
    let (lo, hi) = domain.bounds();
    let dim = lo.len();
    // A cell of side s has half-diagonal s·√dim/2.
    let mut side = 2.0 * target / (dim as f64).sqrt();
    loop {
        let counts: Vec<usize> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (((h - l) / side - 1e-9).ceil() as usize).max(1))
            .collect();
        let estimate: usize = counts.iter().product();
        if estimate > cap.saturating_mul(2) {
            return Err(budget(estimate, cap, target));
        }
        let axes: Vec<Vec<f64>> = (0..dim).map(|d| cell_centered(lo[d], hi[d], counts[d])).collect();
        let centers: Vec<Vec<f64>> = grid(&axes).into_iter().filter(|p| domain.contains(p)).collect();
        if centers.len() > cap {
            return Err(budget(centers.len(), cap, target));
        }
        if !centers.is_empty() && fill_distance(&centers, domain) <= target * (1.0 + 1e-9) {
            return Ok(centers);
        }
        side *= 0.9;
    }
}

fn budget(q: usize, cap: usize, target: f64) -> Error {
    Error::BudgetExceeded(format!(
        "{q} centers needed for fill distance {target} exceeds the cap of {cap}; use a larger epsilon"
    ))
}
