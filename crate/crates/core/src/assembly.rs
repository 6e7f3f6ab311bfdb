//! Assembly of the quadratic program `min vᵀHv + λ·reg(A, B)` over
//! `v = (1, B, vec A)`.
//!
//! `H = ∫∫ w wᵀ dy dt` with `w = (q̃, U, −vec V)` from [`crate::operators`].
//! Every entry except `H₀₀` has an integrand supported in `D = [0,T] × B(0,R*)`
//! and is computed by Gauss–Legendre panels in space times adaptive
//! Gauss–Kronrod panels in time. `H₀₀ = ∫∫ q̃²` extends over all of `ℝⁿ` and
//! is evaluated in closed form from the convolution identities of `ρ_R`,
//! leaving only one-dimensional time integrals.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::kernels::{BandlimitedKernel, GramSystem, KernelSpec, RadialJet, TimeCoefficients, WindowedKernel};
use crate::linalg;
use crate::operators::feature_row;
use crate::quadrature::{gauss_legendre, integrate_adaptive_breaks, kronrod_panel, AdaptiveOptions};

pub const QP_FILE: &str = "qp.json";
pub const QP_BLOB: &str = "qp_h.bin";

/// `∫ ρ_R(y − x₁) ρ_R(y − x₂) dy = ρ_R(x₁ − x₂)`.
pub fn space_pair_integral(x1: &[f64], x2: &[f64], bandwidth: f64) -> f64 {
    let d: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
    BandlimitedKernel::new(bandwidth, d.len()).value(&d)
}

/// Which product of interpolation weights to integrate over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimePairKind {
    /// `∫ c_ℓ c_ℓ'`
    ValueValue,
    /// `∫ ċ_ℓ ċ_ℓ'`
    DotDot,
    /// `∫ ċ_ℓ c_ℓ'`
    DotValue,
}

fn time_breaks(time: &TimeCoefficients, t_end: f64) -> Vec<f64> {
    let mut b: Vec<f64> = std::iter::once(0.0)
        .chain(time.times().iter().copied().filter(|t| *t > 0.0 && *t < t_end))
        .chain(std::iter::once(t_end))
        .collect();
    b.dedup();
    b
}

pub fn time_pair_integral(
    kind: TimePairKind,
    l: usize,
    lp: usize,
    time: &TimeCoefficients,
    t_end: f64,
    opts: AdaptiveOptions,
) -> Result<f64> {
    let f = |t: f64| match kind {
        TimePairKind::ValueValue => {
            let c = time.coeffs(t);
            c[l] * c[lp]
        }
        TimePairKind::DotDot => {
            let d = time.coeffs_dt(t);
            d[l] * d[lp]
        }
        TimePairKind::DotValue => time.coeffs_dt(t)[l] * time.coeffs(t)[lp],
    };
    integrate_adaptive_breaks(f, &time_breaks(time, t_end), opts)
}

/// `∫₀ᵀ ∫_{ℝⁿ} q̃² dy dt` in closed form in space.
pub fn whole_space_qtilde_norm(density: &DensityModel, alpha: f64, opts: AdaptiveOptions) -> Result<f64> {
    let m = density.m();
    let kernel = density.kernel();
    let count = density.samples_per_time() as f64;
    let n = density.n();
    // S[k][ℓ][ℓ'] = (1/N²) Σ_{jj'} Δ^k ρ(X_ℓj − X_ℓ'j')
    let mut s = vec![vec![vec![0.0; m]; m]; 3];
    let mut d = vec![0.0; n];
    for l in 0..m {
        for lp in l..m {
            let mut acc = [0.0; 3];
            for x1 in density.samples(l) {
                for x2 in density.samples(lp) {
                    for i in 0..n {
                        d[i] = x1[i] - x2[i];
                    }
                    let v = kernel.laplacian_powers(&d);
                    for k in 0..3 {
                        acc[k] += v[k];
                    }
                }
            }
            for k in 0..3 {
                s[k][l][lp] = acc[k] / (count * count);
                s[k][lp][l] = s[k][l][lp];
            }
        }
    }
    let time = density.time_coefficients();
    let t_end = density.t_end();
    let mut total = 0.0;
    for l in 0..m {
        for lp in 0..m {
            let dd = time_pair_integral(TimePairKind::DotDot, l, lp, time, t_end, opts)?;
            let dc = time_pair_integral(TimePairKind::DotValue, l, lp, time, t_end, opts)?;
            let cd = time_pair_integral(TimePairKind::DotValue, lp, l, time, t_end, opts)?;
            let cc = time_pair_integral(TimePairKind::ValueValue, l, lp, time, t_end, opts)?;
            total += dd * s[0][l][lp] - 0.5 * alpha * (dc + cd) * s[1][l][lp] + 0.25 * alpha * alpha * cc * s[2][l][lp];
        }
    }
    Ok(total)
}

/// `tr((G_Q ⊗ I_n) A) + Bᵀ (G_Q ⊗ I_n) B`.
pub fn regularizer(a: &DMatrix<f64>, b: &DVector<f64>, gram_q: &DMatrix<f64>) -> f64 {
    let q = gram_q.nrows();
    let n = b.len().checked_div(q).unwrap_or(0);
    let mut tr = 0.0;
    let mut quad = 0.0;
    for l in 0..q {
        for lp in 0..q {
            let g = gram_q[(l, lp)];
            if g == 0.0 {
                continue;
            }
            for i in 0..n {
                tr += g * a[(lp * n + i, l * n + i)];
                quad += g * b[l * n + i] * b[lp * n + i];
            }
        }
    }
    tr + quad
}

/// Quadrature controls for [`assemble_h`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// Gauss–Legendre points per space panel.
    pub space_order: usize,
    /// Space panels have width at most `space_panel_factor / R`.
    pub space_panel_factor: f64,
    /// Per-entry relative tolerance of the Kronrod/Gauss diagonal comparison.
    pub time_rel_tol: f64,
    /// Cap on time panels × space panels.
    pub max_panels: usize,
    /// Tolerances for the one-dimensional time integrals of `H₀₀`.
    pub time_pair_rel_tol: f64,
    /// Leaf size of the deterministic reduction tree, in time nodes.
    pub reduction_leaf: usize,
    /// Largest dense `H` accepted, in bytes.
    pub max_h_bytes: usize,
    /// Cap on the multiply-adds of the final accumulation (time nodes × space nodes × dim²).
    pub max_work: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            space_order: 8,
            space_panel_factor: 0.5,
            time_rel_tol: 1e-7,
            max_panels: 2_000_000,
            time_pair_rel_tol: 1e-9,
            reduction_leaf: 4,
            max_h_bytes: 1 << 29,
            max_work: 2e13,
        }
    }
}

/// Where `H` came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub quadrature: QuadratureConfig,
    pub space_panels: usize,
    pub space_nodes: usize,
    pub time_panels: Vec<(f64, f64)>,
    pub worst_time_panel_error: f64,
    pub h00_domain: f64,
    pub h00_whole_space: f64,
    pub box_half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub q: usize,
    pub n: usize,
    pub lambda: f64,
    /// `G_Q`, the Gram matrix of `K_D` at the centers.
    pub gram_q: DMatrix<f64>,
    pub centers: Vec<Vec<f64>>,
    pub kernel: KernelSpec,
    pub alpha: f64,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QpFile {
    #[serde(rename = "Q")]
    q: usize,
    n: usize,
    dim: usize,
    lambda: f64,
    alpha: f64,
    vec_layout: String,
    h_blob: String,
    gram_q: Vec<f64>,
    centers: Vec<Vec<f64>>,
    kernel: KernelSpec,
    provenance: Option<Provenance>,
}

impl QuadraticProgram {
    pub fn qn(&self) -> usize {
        self.q * self.n
    }

    pub fn dim(&self) -> usize {
        1 + self.qn() + self.qn() * self.qn()
    }

    /// `v = (1, B, vec A)`.
    pub fn pack(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = 1.0;
        v.rows_mut(1, self.qn()).copy_from(b);
        v.rows_mut(1 + self.qn(), self.qn() * self.qn())
            .copy_from(&linalg::vec_col_major(a));
        v
    }

    /// `vᵀ H v`, the squared Fokker–Planck residual.
    pub fn fit_term(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let v = self.pack(a, b);
        v.dot(&(&self.h * &v))
    }

    pub fn regularizer(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        regularizer(a, b, &self.gram_q)
    }

    pub fn objective(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        self.fit_term(a, b) + self.lambda * self.regularizer(a, b)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let dim = self.dim();
        let mut blob = Vec::with_capacity(dim * dim * 8);
        for i in 0..dim {
            for j in 0..dim {
                blob.extend_from_slice(&self.h[(i, j)].to_le_bytes());
            }
        }
        std::fs::write(dir.join(QP_BLOB), blob)?;
        let q = self.q;
        let file = QpFile {
            q,
            n: self.n,
            dim,
            lambda: self.lambda,
            alpha: self.alpha,
            vec_layout: "column-major".into(),
            h_blob: QP_BLOB.into(),
            gram_q: (0..q * q).map(|k| self.gram_q[(k / q, k % q)]).collect(),
            centers: self.centers.clone(),
            kernel: self.kernel.clone(),
            provenance: self.provenance.clone(),
        };
        std::fs::write(dir.join(QP_FILE), serde_json::to_string_pretty(&file)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(QP_FILE);
        let file: QpFile = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::schema(&meta_path, e.to_string()))?;
        let qn = file.q * file.n;
        if file.dim != 1 + qn + qn * qn || file.gram_q.len() != file.q * file.q || file.centers.len() != file.q {
            return Err(Error::schema(&meta_path, "Q, n, dim and gram sizes disagree"));
        }
        if file.vec_layout != "column-major" {
            return Err(Error::schema(&meta_path, format!("unsupported layout {}", file.vec_layout)));
        }
        let blob_path = dir.join(&file.h_blob);
        let blob = std::fs::read(&blob_path)?;
        if blob.len() != file.dim * file.dim * 8 {
            return Err(Error::schema(&blob_path, format!("expected {} bytes, found {}", file.dim * file.dim * 8, blob.len())));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight bytes")))
            .collect();
        Ok(Self {
            h: DMatrix::from_row_slice(file.dim, file.dim, &values),
            q: file.q,
            n: file.n,
            lambda: file.lambda,
            gram_q: DMatrix::from_row_slice(file.q, file.q, &file.gram_q),
            centers: file.centers,
            kernel: file.kernel,
            alpha: file.alpha,
            provenance: file.provenance,
        })
    }
}

/// `G_Q` for the given centers.
pub fn center_gram(kernel: &WindowedKernel, centers: &[Vec<f64>]) -> DMatrix<f64> {
    let q = centers.len();
    DMatrix::from_fn(q, q, |i, j| kernel.value(centers[i][0], &centers[i][1..], &centers[j]))
}

struct SpaceNode {
    x: Vec<f64>,
    weight: f64,
    g_jets: Vec<RadialJet>,
}

struct Assembler<'a> {
    density: &'a DensityModel,
    kernel: &'a WindowedKernel,
    centers: &'a [Vec<f64>],
    alpha: f64,
    nodes: Vec<SpaceNode>,
    dim: usize,
}

/// Space nodes per block of feature rows; bounds the row buffer independently of the lattice size.
const ROW_BLOCK: usize = 256;

impl Assembler<'_> {
    /// Rows `√(w_space) · w(t, y)` for `nodes`, row-major.
    fn rows(&self, t: f64, c: &[f64], c_dt: &[f64], nodes: &[SpaceNode], out: &mut Vec<f64>) {
        out.clear();
        out.resize(nodes.len() * self.dim, 0.0);
        for (node, row) in nodes.iter().zip(out.chunks_mut(self.dim)) {
            let p = self.density.combine(&node.g_jets, c, c_dt);
            let k: Vec<RadialJet> = self.centers.iter().map(|cc| self.kernel.y_jet(t, &node.x, cc)).collect();
            feature_row(&p, &k, self.alpha, node.weight.sqrt(), row);
        }
    }

    /// `Σ_rows w_k²` at time `t`.
    fn diagonal(&self, t: f64) -> Vec<f64> {
        let time = self.density.time_coefficients();
        let (c, c_dt) = (time.coeffs(t), time.coeffs_dt(t));
        let mut d = vec![0.0; self.dim];
        let mut buf = Vec::new();
        for block in self.nodes.chunks(ROW_BLOCK) {
            self.rows(t, &c, &c_dt, block, &mut buf);
            for row in buf.chunks(self.dim) {
                for (dk, v) in d.iter_mut().zip(row) {
                    *dk += v * v;
                }
            }
        }
        d
    }

    /// Kronrod/Gauss disagreement on the diagonal of one time panel.
    fn panel_error(&self, a: f64, b: f64) -> f64 {
        let mut dk = vec![0.0; self.dim];
        let mut dg = vec![0.0; self.dim];
        for node in kronrod_panel(a, b) {
            let d = self.diagonal(node.x);
            for k in 0..self.dim {
                dk[k] += node.kronrod_weight * d[k];
                dg[k] += node.gauss_weight * d[k];
            }
        }
        let top = dk.iter().fold(0.0_f64, |m, v| m.max(*v));
        dk.iter()
            .zip(&dg)
            .map(|(k, g)| (k - g).abs() / k.max(1e-10 * top).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// `Σ_t w_t Xₜᵀ Xₜ` over `nodes[range]`, reduced along a fixed binary tree.
    fn accumulate(&self, nodes: &[(f64, f64)], leaf: usize) -> DMatrix<f64> {
        if nodes.len() <= leaf {
            let mut h = DMatrix::zeros(self.dim, self.dim);
            let time = self.density.time_coefficients();
            let mut buf = Vec::new();
            for &(t, w) in nodes {
                let (c, c_dt) = (time.coeffs(t), time.coeffs_dt(t));
                for block in self.nodes.chunks(ROW_BLOCK) {
                    self.rows(t, &c, &c_dt, block, &mut buf);
                    // row-major rows read column-major are Xᵀ; nalgebra's gemm_tr is several times slower than gemm
                    let xt = DMatrix::from_column_slice(self.dim, block.len(), &buf);
                    h.gemm(w, &xt, &xt.transpose(), 1.0);
                }
            }
            return h;
        }
        let mid = nodes.len() / 2;
        let (left, right) = rayon::join(|| self.accumulate(&nodes[..mid], leaf), || self.accumulate(&nodes[mid..], leaf));
        left + right
    }
}

fn space_nodes(density: &DensityModel, radius: f64, cfg: &QuadratureConfig) -> (Vec<SpaceNode>, usize) {
    let n = density.n();
    let width = cfg.space_panel_factor / density.bandwidth();
    let panels = ((2.0 * radius / width).ceil() as usize).max(2);
    let (gx, gw) = gauss_legendre(cfg.space_order);
    let h = 2.0 * radius / panels as f64;
    let axis: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| {
            let lo = -radius + p as f64 * h;
            gx.iter()
                .zip(&gw)
                .map(move |(x, w)| (lo + 0.5 * h * (x + 1.0), 0.5 * h * w))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut points: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..n {
        points = points
            .into_iter()
            .flat_map(|(p, w)| {
                axis.iter().map(move |&(x, wx)| {
                    let mut q = p.clone();
                    q.push(x);
                    (q, w * wx)
                })
            })
            .collect();
    }
    let nodes = points
        .into_par_iter()
        .filter(|(x, _)| x.iter().map(|v| v * v).sum::<f64>() < radius * radius)
        .map(|(x, weight)| SpaceNode {
            g_jets: (0..density.m()).map(|l| density.g_hat_jet(l, &x)).collect(),
            x,
            weight,
        })
        .collect();
    (nodes, panels.pow(n as u32))
}

/// Assembles `H` for the features of `density` against `K_D` at `centers`.
pub fn assemble_h(
    density: &DensityModel,
    kernel: &WindowedKernel,
    centers: &[Vec<f64>],
    alpha: f64,
    lambda: f64,
    cfg: &QuadratureConfig,
) -> Result<QuadraticProgram> {
    let n = density.n();
    if kernel.dim() != n {
        return Err(Error::DimensionMismatch(format!("{}-d kernel for {n}-d density", kernel.dim())));
    }
    if centers.is_empty() {
        return Err(Error::InvalidParameter("no kernel centers".into()));
    }
    let q = centers.len();
    let qn = q * n;
    let dim = 1 + qn + qn * qn;
    let h_bytes = dim.saturating_mul(dim).saturating_mul(std::mem::size_of::<f64>());
    if h_bytes > cfg.max_h_bytes {
        return Err(Error::BudgetExceeded(format!(
            "H for {q} centers in {n}-d is {dim}×{dim} ({} MiB), above the {} MiB budget",
            h_bytes >> 20,
            cfg.max_h_bytes >> 20
        )));
    }
    let t_end = kernel.t_end().min(density.t_end());
    let (nodes, space_panels) = space_nodes(density, kernel.radius(), cfg);
    let asm = Assembler {
        density,
        kernel,
        centers,
        alpha,
        nodes,
        dim,
    };

    // Time panels: split at observation times and center times, then refine
    // until Kronrod and Gauss agree on every diagonal entry.
    let mut breaks: Vec<f64> = std::iter::once(0.0)
        .chain(density.time_coefficients().times().iter().copied())
        .chain(centers.iter().map(|c| c[0]))
        .chain(std::iter::once(t_end))
        .filter(|t| (0.0..=t_end).contains(t))
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end);
    let mut pending: Vec<(f64, f64)> = breaks.windows(2).map(|w| (w[0], w[1])).collect();
    let mut accepted: Vec<(f64, f64)> = Vec::new();
    let mut worst = 0.0_f64;
    // every panel ends up as fifteen Kronrod nodes in the accumulation
    let work_check = |panels: usize| {
        let time_nodes = 15 * panels;
        let work = time_nodes as f64 * asm.nodes.len() as f64 * (dim as f64).powi(2);
        if work > cfg.max_work {
            return Err(Error::BudgetExceeded(format!(
                "H accumulation needs at least {work:.2e} multiply-adds ({time_nodes} time nodes, {} space nodes, dim {dim}), above the {:.2e} budget",
                asm.nodes.len(),
                cfg.max_work
            )));
        }
        Ok(())
    };
    while !pending.is_empty() {
        work_check(accepted.len() + pending.len())?;
        let errors: Vec<f64> = pending.par_iter().map(|&(a, b)| asm.panel_error(a, b)).collect();
        let mut next = Vec::new();
        for (&(a, b), err) in pending.iter().zip(errors) {
            if err <= cfg.time_rel_tol || (b - a) < 1e-6 * t_end {
                worst = worst.max(err);
                accepted.push((a, b));
            } else {
                let mid = 0.5 * (a + b);
                next.push((a, mid));
                next.push((mid, b));
            }
            if (accepted.len() + next.len()) * space_panels > cfg.max_panels {
                return Err(Error::BudgetExceeded(format!(
                    "H assembly needs more than {} panels; worst time panel [{a}, {b}] has relative diagonal error {err:e}",
                    cfg.max_panels
                )));
            }
        }
        pending = next;
    }
    accepted.sort_by(|x, y| x.0.total_cmp(&y.0));

    let time_nodes: Vec<(f64, f64)> = accepted
        .iter()
        .flat_map(|&(a, b)| kronrod_panel(a, b).into_iter().map(|k| (k.x, k.kronrod_weight)))
        .collect();
    let mut h = asm.accumulate(&time_nodes, cfg.reduction_leaf.max(1));
    let h00_domain = h[(0, 0)];
    let pair_opts = AdaptiveOptions {
        rel_tol: cfg.time_pair_rel_tol,
        abs_tol: 1e-15,
        max_subdivisions: 4000,
    };
    let h00_whole = whole_space_qtilde_norm(density, alpha, pair_opts)?;
    h[(0, 0)] = h00_whole;
    let h = linalg::symmetrize(&h);
    let gram_q = center_gram(kernel, centers);

    Ok(QuadraticProgram {
        h,
        q,
        n,
        lambda,
        gram_q,
        centers: centers.to_vec(),
        kernel: kernel.spec(),
        alpha,
        provenance: Some(Provenance {
            quadrature: *cfg,
            space_panels,
            space_nodes: asm.nodes.len(),
            time_panels: accepted,
            worst_time_panel_error: worst,
            h00_domain,
            h00_whole_space: h00_whole,
            box_half_width: kernel.radius(),
        }),
    })
}

/// Gram system of `K_D` at the centers, for callers that need `G_Q⁻¹`.
pub fn center_gram_system(kernel: &WindowedKernel, centers: &[Vec<f64>]) -> Result<GramSystem> {
    GramSystem::new(center_gram(kernel, centers))
}
