//! Local polynomial derivative estimation and the binned conditional
//! outcome table it feeds.
//!
//! Every estimand of the nonparametric path is the derivative in p of a
//! conditional mean E[R | P = p] for some row-level response R. The
//! derivative is read off a local quadratic weighted least-squares fit
//! around p: the slope coefficient of the centered polynomial.

use crate::dgp::Sample;
use crate::oracle::IdStatus;
use crate::propensity::PropensityFit;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmootherError {
    #[error("only {effective} distinct support points inside the kernel window at p = {p}; need at least 3")]
    InsufficientData { p: f64, effective: usize },
    #[error("singular local least-squares system at p = {p}")]
    Singular { p: f64 },
    #[error("outcome grid must have at least two strictly increasing edges")]
    BadGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Kernel {
    Epanechnikov,
}

impl Kernel {
    fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub enum Bandwidth {
    /// Explicit bandwidth on the propensity scale.
    Fixed(f64),
    /// 1.06 sd(P-hat) n^{-1/5}, optionally rescaled.
    RuleOfThumb { scale: f64 },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SmootherConfig {
    pub kernel: Kernel,
    pub bandwidth: Bandwidth,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Epanechnikov,
            bandwidth: Bandwidth::RuleOfThumb { scale: 1.0 },
        }
    }
}

/// Resolves the bandwidth rule against the kept fitted scores.
pub fn resolve_bandwidth(config: &SmootherConfig, phat: &[f64]) -> f64 {
    match config.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::RuleOfThumb { scale } => {
            let n = phat.len() as f64;
            let mean = phat.iter().sum::<f64>() / n;
            let var = phat.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            scale * 1.06 * var.sqrt() * n.powf(-0.2)
        }
    }
}

/// Slope of the local quadratic fit of `responses` on `phat` at `p`,
/// multiplied by `sign` (+1 for treated-arm objects, -1 for untreated,
/// whose population derivatives carry a leading minus).
///
/// The fit solves
///   min sum_i [r_i - c0 - c1 (P_i - p) - c2 (P_i - p)^2]^2 K((P_i - p)/h)
/// and returns sign * c1. Polynomials of degree <= 2 in P are reproduced
/// exactly whenever at least three distinct support points fall in the
/// window.
pub fn local_derivative(
    responses: &[f64],
    phat: &[f64],
    p: f64,
    sign: f64,
    h: f64,
    kernel: Kernel,
) -> Result<f64, SmootherError> {
    // Basis in (P - p)/h for conditioning; the slope rescales by 1/h.
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    let mut support = Vec::new();
    for (&r, &pi) in responses.iter().zip(phat) {
        let u = (pi - p) / h;
        let w = kernel.eval(u);
        if w <= 0.0 {
            continue;
        }
        if !support.iter().any(|&v: &f64| (v - pi).abs() < 1e-12) && support.len() < 4 {
            support.push(pi);
        }
        let mut uj = w;
        for sj in s.iter_mut() {
            *sj += uj;
            uj *= u;
        }
        let mut uj = w * r;
        for tj in t.iter_mut() {
            *tj += uj;
            uj *= u;
        }
    }
    if support.len() < 3 {
        return Err(SmootherError::InsufficientData {
            p,
            effective: support.len(),
        });
    }
    // 3x3 normal equations A c = t with A[j][k] = s[j+k].
    let mut a = [[0.0f64; 3]; 3];
    for (j, row) in a.iter_mut().enumerate() {
        row.copy_from_slice(&s[j..j + 3]);
    }
    let c = solve3(&mut a, &mut t.clone()).ok_or(SmootherError::Singular { p })?;
    Ok(sign * c[1] / h)
}

#[allow(clippy::needless_range_loop)]
fn solve3(a: &mut [[f64; 3]; 3], b: &mut [f64; 3]) -> Option<[f64; 3]> {
    let scale = a[0][0].abs().max(a[1][1].abs()).max(a[2][2].abs());
    for k in 0..3 {
        let piv = (k..3).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[piv][k].abs() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in (k + 1)..3 {
            let f = a[i][k] / a[k][k];
            for j in k..3 {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let mut s = b[k];
        for j in (k + 1)..3 {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

/// Outcome bin edges and centers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeGrid {
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
}

impl OutcomeGrid {
    pub fn new(edges: Vec<f64>) -> Result<Self, SmootherError> {
        if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SmootherError::BadGrid);
        }
        let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(Self { edges, centers })
    }

    /// Grid at the deciles of the supplied values (eleven edges), with
    /// exact duplicates collapsed.
    pub fn from_deciles(values: &[f64]) -> Result<Self, SmootherError> {
        let mut sorted: Vec<f64> = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() {
            return Err(SmootherError::BadGrid);
        }
        let mut edges = Vec::with_capacity(11);
        for k in 0..=10 {
            let q = k as f64 / 10.0;
            let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
            let e = sorted[idx];
            if edges.last().is_none_or(|&last| e > last) {
                edges.push(e);
            }
        }
        Self::new(edges)
    }

    pub fn num_bins(&self) -> usize {
        self.centers.len()
    }
}

/// Binned conditional outcome estimates at one evaluation point: bin
/// derivative estimates per arm, the cleaned mass functions and their
/// running sums, the arm derivatives, and the trimming share estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalOutcomeTable {
    pub p: f64,
    pub centers: Vec<f64>,
    pub pi0: f64,
    pub pi1: f64,
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    pub cdf0: Vec<f64>,
    pub cdf1: Vec<f64>,
    pub alpha_hat: f64,
    pub status: IdStatus,
    /// Set when the kernel window at p is truncated by the support of the
    /// kept fitted scores.
    pub boundary: bool,
}

/// Clamp-then-renormalize cleanup shared by the nonparametric and
/// parametric paths: negative bin masses go to zero and the remainder is
/// scaled to sum to one.
pub fn assemble_table(
    p: f64,
    centers: Vec<f64>,
    pi0: f64,
    pi1: f64,
    gamma0: Vec<f64>,
    gamma1: Vec<f64>,
    boundary: bool,
) -> ConditionalOutcomeTable {
    let clean = |gamma: &[f64]| -> Option<Vec<f64>> {
        let clamped: Vec<f64> = gamma.iter().map(|&g| g.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if total <= 0.0 {
            return None;
        }
        Some(clamped.iter().map(|&g| g / total).collect())
    };
    let estimable = pi1 > 0.0;
    let f1 = if estimable { clean(&gamma1) } else { None };
    let f0 = clean(&gamma0);
    let status = if estimable && f1.is_some() && f0.is_some() {
        IdStatus::Partial
    } else {
        IdStatus::Nonestimable
    };
    let k = centers.len();
    let f1 = f1.unwrap_or_else(|| vec![0.0; k]);
    let f0 = f0.unwrap_or_else(|| vec![0.0; k]);
    let cumsum = |f: &[f64]| {
        let mut acc = 0.0;
        f.iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let alpha_hat = if estimable {
        (pi0 / pi1).clamp(0.0, 1.0)
    } else {
        f64::NAN
    };
    ConditionalOutcomeTable {
        p,
        cdf0: cumsum(&f0),
        cdf1: cumsum(&f1),
        centers,
        pi0,
        pi1,
        gamma0,
        gamma1,
        f0,
        f1,
        alpha_hat,
        status,
        boundary,
    }
}

/// Estimates the full conditional outcome table at `p`: one local
/// quadratic derivative per (arm, bin) for the bin masses, plus the arm
/// totals pi0 and pi1. Only rows kept by the propensity fit enter.
pub fn build_table(
    sample: &Sample,
    fit: &PropensityFit,
    p: f64,
    grid: &OutcomeGrid,
    config: &SmootherConfig,
) -> Result<ConditionalOutcomeTable, SmootherError> {
    let mut phat = Vec::new();
    let mut rows = Vec::new();
    for (i, row) in sample.rows.iter().enumerate() {
        if fit.kept[i] {
            phat.push(fit.fitted[i]);
            rows.push(row);
        }
    }
    let h = resolve_bandwidth(config, &phat);
    let lo = phat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = phat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let boundary = p < lo + h / 2.0 || p > hi - h / 2.0;

    let deriv = |resp: &[f64], sign: f64| local_derivative(resp, &phat, p, sign, h, config.kernel);

    let sd: Vec<f64> = rows
        .iter()
        .map(|r| f64::from(r.s) * f64::from(r.d))
        .collect();
    let su: Vec<f64> = rows
        .iter()
        .map(|r| f64::from(r.s) * f64::from(1 - r.d))
        .collect();
    let pi1 = deriv(&sd, 1.0)?;
    let pi0 = deriv(&su, -1.0)?;

    let k = grid.num_bins();
    let mut gamma1 = Vec::with_capacity(k);
    let mut gamma0 = Vec::with_capacity(k);
    for b in 0..k {
        let (ylo, yhi) = (grid.edges[b], grid.edges[b + 1]);
        let in_bin = |r: &&crate::dgp::Row| -> f64 { f64::from(r.y >= ylo && r.y <= yhi) };
        let resp1: Vec<f64> = rows.iter().zip(&sd).map(|(r, &m)| in_bin(r) * m).collect();
        let resp0: Vec<f64> = rows.iter().zip(&su).map(|(r, &m)| in_bin(r) * m).collect();
        gamma1.push(deriv(&resp1, 1.0)?);
        gamma0.push(deriv(&resp0, -1.0)?);
    }

    Ok(assemble_table(
        p,
        grid.centers.clone(),
        pi0,
        pi1,
        gamma0,
        gamma1,
        boundary,
    ))
}
