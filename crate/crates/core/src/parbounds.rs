//! Parametric estimation path: logit index models for the selection and
//! binned-outcome probabilities as functions of the propensity score and
//! covariates, differentiated analytically, with bounds averaged over the
//! observed covariate distribution.

use crate::dgp::Sample;
use crate::npbounds::{bounds_at, BoundPoint, BoundsError};
use crate::oracle::{IdStatus, Tier};
use crate::propensity::{fit_logit, IndexSpec, PropensityConfig, PropensityError, PropensityFit};
use crate::smoother::{assemble_table, ConditionalOutcomeTable, OutcomeGrid, SmootherError};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParametricError {
    #[error("selection model (arm {arm}) failed: {source}")]
    SelectionFit { arm: u8, source: PropensityError },
    #[error("outcome bin model (arm {arm}, bin {bin}) failed: {source}")]
    BinFit {
        arm: u8,
        bin: usize,
        source: PropensityError,
    },
    #[error(transparent)]
    Propensity(#[from] PropensityError),
    #[error(transparent)]
    Grid(#[from] SmootherError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("more than half the covariate rows are not estimable at p = {p}")]
    MostlyNonestimable { p: f64 },
}

/// Coefficients of one logit index: intercept, p, p-squared, then the
/// covariate block.
#[derive(Debug, Clone, Serialize)]
pub struct LogitIndex {
    pub coef: Vec<f64>,
}

impl LogitIndex {
    fn index(&self, p: f64, x: &[f64]) -> f64 {
        let mut t = self.coef[0] + self.coef[1] * p + self.coef[2] * p * p;
        for (c, v) in self.coef[3..].iter().zip(x) {
            t += c * v;
        }
        t
    }

    /// Logistic CDF of the index.
    fn prob(&self, p: f64, x: &[f64]) -> f64 {
        1.0 / (1.0 + (-self.index(p, x)).exp())
    }

    /// Analytic derivative in p: lambda(index) (c1 + 2 c2 p), times the
    /// arm sign (-1)^(1-d).
    fn deriv(&self, p: f64, x: &[f64], d: u8) -> f64 {
        let l = self.prob(p, x);
        let lambda = l * (1.0 - l);
        let inner = self.coef[1] + 2.0 * self.coef[2] * p;
        let sign = if d == 1 { 1.0 } else { -1.0 };
        lambda * inner * sign
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParametricFit {
    /// Selection models P[S = 1, D = d | X, P], indexed by arm d.
    pub selection: [LogitIndex; 2],
    /// Per-bin models P[y in bin k, S = 1, D = d | X, P], indexed by arm.
    pub bins: [Vec<LogitIndex>; 2],
    pub grid: OutcomeGrid,
    /// Row mask inherited from the propensity fit.
    pub kept: Vec<bool>,
}

fn fit_component(
    responses: &[f64],
    phat: &[f64],
    x: &[Vec<f64>],
) -> Result<LogitIndex, PropensityError> {
    // Reuse the Newton logit by posing the component as a treatment
    // model whose "instrument" columns are (p, p^2, x...).
    let rows: Vec<crate::dgp::Row> = responses
        .iter()
        .zip(phat)
        .map(|(&r, &p)| crate::dgp::Row {
            y: 0.0,
            s: 1,
            d: r as u8,
            z: vec![p, p * p],
        })
        .collect();
    let pseudo = Sample {
        rows,
        latent: None,
        x: if x.first().map_or(0, Vec::len) > 0 {
            Some(x.to_vec())
        } else {
            None
        },
    };
    let cfg = PropensityConfig {
        lambda_trim: 0.0,
        support_trim_pct: 0.0,
        spec: IndexSpec::LinearInZx,
    };
    let fit = fit_logit(&pseudo, &cfg)?;
    Ok(LogitIndex {
        coef: fit.coefficients,
    })
}

/// Fits every component logit on the rows kept by the propensity fit,
/// substituting the fitted score for p.
pub fn fit_parametric(
    sample: &Sample,
    pfit: &PropensityFit,
    grid: &OutcomeGrid,
) -> Result<ParametricFit, ParametricError> {
    let mut phat = Vec::new();
    let mut x = Vec::new();
    let mut rows = Vec::new();
    let empty: Vec<f64> = Vec::new();
    for (i, row) in sample.rows.iter().enumerate() {
        if pfit.kept[i] {
            phat.push(pfit.fitted[i]);
            x.push(sample.x.as_ref().map_or(empty.clone(), |m| m[i].clone()));
            rows.push(row);
        }
    }
    let mut selection = Vec::with_capacity(2);
    let mut bins: [Vec<LogitIndex>; 2] = [Vec::new(), Vec::new()];
    for d in 0..2u8 {
        let resp: Vec<f64> = rows
            .iter()
            .map(|r| f64::from(r.s) * f64::from(u8::from(r.d == d)))
            .collect();
        selection.push(
            fit_component(&resp, &phat, &x)
                .map_err(|source| ParametricError::SelectionFit { arm: d, source })?,
        );
        for b in 0..grid.num_bins() {
            let (ylo, yhi) = (grid.edges[b], grid.edges[b + 1]);
            let resp: Vec<f64> = rows
                .iter()
                .map(|r| {
                    f64::from(r.y >= ylo && r.y <= yhi)
                        * f64::from(r.s)
                        * f64::from(u8::from(r.d == d))
                })
                .collect();
            bins[d as usize].push(fit_component(&resp, &phat, &x).map_err(|source| {
                ParametricError::BinFit {
                    arm: d,
                    bin: b,
                    source,
                }
            })?);
        }
    }
    let selection: [LogitIndex; 2] = match selection.try_into() {
        Ok(s) => s,
        Err(_) => unreachable!("exactly two arms"),
    };
    Ok(ParametricFit {
        selection,
        bins,
        grid: grid.clone(),
        kept: pfit.kept.clone(),
    })
}

/// Conditional outcome table at (p, x) from the analytic derivatives of
/// the fitted component models, with the same cleanup as the smoother.
pub fn parametric_derivatives(fit: &ParametricFit, p: f64, x: &[f64]) -> ConditionalOutcomeTable {
    let pi1 = fit.selection[1].deriv(p, x, 1);
    let pi0 = fit.selection[0].deriv(p, x, 0);
    let gamma1: Vec<f64> = fit.bins[1].iter().map(|m| m.deriv(p, x, 1)).collect();
    let gamma0: Vec<f64> = fit.bins[0].iter().map(|m| m.deriv(p, x, 0)).collect();
    assemble_table(p, fit.grid.centers.clone(), pi0, pi1, gamma0, gamma1, false)
}

/// One point of the covariate-averaged bound curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScmtePoint {
    pub p: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub nonestimable_share: f64,
    pub status: IdStatus,
}

/// Averages the conditional bounds over the sample covariate rows
/// (empirical covariate distribution). Rows whose conditional table is
/// lost or not estimable are excluded and their share reported; a point
/// where they exceed half the rows is flagged.
pub fn scmte_bounds(
    fit: &ParametricFit,
    sample: &Sample,
    p_grid: &[f64],
    tier: Tier,
    fractional: bool,
) -> Result<Vec<ScmtePoint>, ParametricError> {
    let empty: Vec<f64> = Vec::new();
    let xs: Vec<&Vec<f64>> = if let Some(m) = &sample.x {
        m.iter()
            .enumerate()
            .filter(|(i, _)| fit.kept[*i])
            .map(|(_, x)| x)
            .collect()
    } else {
        // No covariates: a single empty row makes the average the
        // unconditional parametric bound.
        vec![&empty; 1]
    };
    let mut out = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let mut acc_lo = 0.0;
        let mut acc_hi = 0.0;
        let mut acc_alpha = 0.0;
        let mut used = 0usize;
        for x in &xs {
            let table = parametric_derivatives(fit, p, x);
            let b: BoundPoint = bounds_at(&table, tier, fractional)?;
            if matches!(b.status, IdStatus::Partial | IdStatus::Identified)
                && b.lower.is_finite()
                && b.upper.is_finite()
            {
                acc_lo += b.lower;
                acc_hi += b.upper;
                acc_alpha += b.alpha;
                used += 1;
            }
        }
        let total = xs.len();
        let nonestimable_share = 1.0 - used as f64 / total as f64;
        if used * 2 < total {
            out.push(ScmtePoint {
                p,
                lower: f64::NAN,
                upper: f64::NAN,
                alpha: f64::NAN,
                nonestimable_share,
                status: IdStatus::Nonestimable,
            });
            continue;
        }
        out.push(ScmtePoint {
            p,
            lower: acc_lo / used as f64,
            upper: acc_hi / used as f64,
            alpha: acc_alpha / used as f64,
            nonestimable_share,
            status: IdStatus::Partial,
        });
    }
    Ok(out)
}

/// Reported (not enforced) internal-consistency gap of the per-bin
/// models: the bin derivatives of independently fitted logits need not
/// sum to the selection derivative.
pub fn consistency_gap(fit: &ParametricFit, p: f64, x: &[f64]) -> (f64, f64) {
    let t = parametric_derivatives(fit, p, x);
    (
        (t.gamma0.iter().sum::<f64>() - t.pi0).abs(),
        (t.gamma1.iter().sum::<f64>() - t.pi1).abs(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logistic_density_at_zero() {
        let m = LogitIndex {
            coef: vec![0.0, 1.0, 0.0],
        };
        // lambda(0) * 1 = 1/4 for the treated arm at p = 0.
        assert_abs_diff_eq!(m.deriv(0.0, &[], 1), 0.25, epsilon = 1e-12);
        // The untreated arm flips the sign: a positive index slope gives a
        // negative derivative, which the cleanup later discards.
        assert_abs_diff_eq!(m.deriv(0.0, &[], 0), -0.25, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_only_derivative_vanishes_at_zero() {
        let m = LogitIndex {
            coef: vec![0.0, 0.0, 0.7],
        };
        assert_abs_diff_eq!(m.deriv(0.0, &[], 1), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.deriv(0.5, &[], 1), 0.25 * 0.7, epsilon = 0.02);
    }

    #[test]
    fn interval_average_arithmetic() {
        // Two covariate rows with bounds (-1, 1) and (1, 3) average to
        // (0, 2): endpoint averaging is linear.
        let lows = [-1.0, 1.0];
        let highs = [1.0, 3.0];
        let avg_lo: f64 = lows.iter().sum::<f64>() / 2.0;
        let avg_hi: f64 = highs.iter().sum::<f64>() / 2.0;
        assert_abs_diff_eq!(avg_lo, 0.0);
        assert_abs_diff_eq!(avg_hi, 2.0);
        assert!(avg_lo <= avg_hi);
    }
}
