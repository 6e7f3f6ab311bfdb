//! Learning parameters as functions of the precision `ε` and confidence `δ`.
//!
//! ```text
//! M   = ε^{−1/m} / 4              floored to max(2, ⌈2T⌉)
//! N   = ε^{−(2 + n/(2m))}
//! R   = ε^{−1/(2m)}
//! λ   = (ln(1/(δε))^{1/2} ε)²
//! h_Q = min(1, (ln(1/(δε))^{1/2} ε)^{1/(2m−1)})
//! ```
//!
//! `M` and `N` are rounded half up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub epsilon: f64,
    pub delta: f64,
    /// Smoothness index `m`.
    pub smoothness: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(rename = "R")]
    pub bandwidth: f64,
    pub lambda: f64,
    pub h_q: f64,
    /// Number of kernel centers, once they have been placed.
    #[serde(rename = "Q")]
    pub q: Option<usize>,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

pub fn schedule(epsilon: f64, delta: f64, smoothness: usize, n: usize, t_end: f64) -> Result<Schedule> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if smoothness == 0 || n == 0 {
        return Err(Error::InvalidParameter("smoothness and dimension must be positive".into()));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter(format!("T must be positive, got {t_end}")));
    }
    let m = smoothness as f64;
    let floor = 2usize.max((2.0 * t_end).ceil() as usize);
    let times = round_half_up(epsilon.powf(-1.0 / m) / 4.0).max(floor);
    let samples = round_half_up(epsilon.powf(-(2.0 + n as f64 / (2.0 * m)))).max(1);
    let bandwidth = epsilon.powf(-1.0 / (2.0 * m));
    let rate = (1.0 / (delta * epsilon)).ln().sqrt() * epsilon;
    Ok(Schedule {
        epsilon,
        delta,
        smoothness,
        n,
        t_end,
        m: times,
        samples,
        bandwidth,
        lambda: rate * rate,
        h_q: rate.powf(1.0 / (2.0 * m - 1.0)).min(1.0),
        q: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let s = schedule(0.1, 0.1, 1, 1, 1.0).unwrap();
        assert_eq!((s.m, s.samples), (3, 316));
        assert!((s.bandwidth - 3.1622776601683795).abs() < 1e-12);
        assert!((s.lambda - 0.04605170185988092).abs() < 1e-12);
        assert!((s.h_q - 0.21459660262893474).abs() < 1e-12);
    }

    #[test]
    fn horizon_floor_on_m() {
        assert_eq!(schedule(0.1, 0.1, 1, 1, 2.0).unwrap().m, 4);
        assert_eq!(schedule(0.5, 0.1, 1, 1, 0.25).unwrap().m, 2);
    }

    #[test]
    fn rejects_out_of_range() {
        for (e, d) in [(0.0, 0.1), (1.0, 0.1), (0.1, 0.0), (0.1, 1.5), (f64::NAN, 0.1)] {
            assert_eq!(schedule(e, d, 1, 1, 1.0).unwrap_err().exit_code(), 2);
        }
    }
}
