//! Aggregation of several run directories into one table, with log-log
//! trends against `ε`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunLayout, RunReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub samples: usize,
    #[serde(rename = "R")]
    pub bandwidth: f64,
    pub lambda: f64,
    pub h_q: f64,
    #[serde(rename = "Q")]
    pub q: usize,
    pub loss_l: f64,
    pub lp_objective: f64,
    pub e: f64,
    pub e_floor: f64,
    pub gap_holds: bool,
}

/// Least-squares fit of `log y = c + slope · log ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n: usize,
    pub runs: usize,
    pub loss_l: Option<RateFit>,
    pub lp_objective: Option<RateFit>,
    pub e: Option<RateFit>,
    pub note: String,
}

fn rate_fit(eps: &[f64], y: &[f64]) -> Option<RateFit> {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(y)
        .filter(|(e, v)| **e > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(e, v)| (e.ln(), v.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx < 1e-24 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(RateFit {
        slope,
        r_squared,
        points: pts.len(),
    })
}

/// Reads `report.json` from each run, writes `table.csv` and `summary.json`
/// into `out`. Runs of different dimension are refused.
pub fn report(runs: &[PathBuf], out: &Path) -> Result<ReportSummary> {
    if runs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::with_capacity(runs.len());
    let mut n = None;
    for dir in runs {
        let r = RunReport::load(&RunLayout::new(dir).report())?;
        match n {
            None => n = Some(r.n),
            Some(n0) if n0 != r.n => {
                return Err(Error::Config(format!(
                    "runs mix dimensions {n0} and {} ({})",
                    r.n,
                    dir.display()
                )));
            }
            _ => {}
        }
        let s = &r.schedule;
        rows.push(ReportRow {
            run: dir.display().to_string(),
            epsilon: s.epsilon,
            delta: s.delta,
            m: s.m,
            samples: s.samples,
            bandwidth: s.bandwidth,
            lambda: s.lambda,
            h_q: s.h_q,
            q: s.q.unwrap_or(0),
            loss_l: r.loss_l,
            lp_objective: r.lp_objective,
            e: r.e,
            e_floor: r.e_floor,
            gap_holds: r.gap_holds,
        });
    }
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("table.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;

    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let col = |f: fn(&ReportRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let mut distinct = eps.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let note = match distinct.len() {
        1 => "single epsilon: no trend fitted".to_string(),
        k if k < 4 => format!("{k} distinct epsilon values: slopes indicate a direction only"),
        k => format!("{k} distinct epsilon values"),
    };
    let summary = ReportSummary {
        n: n.unwrap_or(0),
        runs: rows.len(),
        loss_l: rate_fit(&eps, &col(|r| r.loss_l)),
        lp_objective: rate_fit(&eps, &col(|r| r.lp_objective)),
        e: rate_fit(&eps, &col(|r| r.e)),
        note,
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let eps = [0.4, 0.2, 0.1];
        let y: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e.powf(1.5)).collect();
        let fit = rate_fit(&eps, &y).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(rate_fit(&[0.1], &[1.0]).is_none());
        assert!(rate_fit(&[0.1, 0.1], &[1.0, 2.0]).is_none());
        assert!(rate_fit(&[0.1, 0.2], &[0.0, -1.0]).is_none());
    }
}
