//! Nonparametric bounds assembled from binned conditional outcome
//! tables, plus the point-identified selection and unconditional effects.

use crate::dgp::Sample;
use crate::num::Tail;
use crate::oracle::{IdStatus, Tier};
use crate::propensity::PropensityFit;
use crate::smoother::{
    local_derivative, resolve_bandwidth, ConditionalOutcomeTable, SmootherConfig, SmootherError,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("table at p = {p} is not estimable")]
    Nonestimable { p: f64 },
    #[error("trim share {share} outside (0, 1]")]
    BadShare { share: f64 },
    #[error("derivative denominator {value:e} too close to zero at p = {p}")]
    VanishingDenominator { p: f64, value: f64 },
    #[error(transparent)]
    Smoother(#[from] SmootherError),
}

/// One evaluation point of a bound curve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundPoint {
    pub p: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub beta: f64,
    pub v_lower: f64,
    pub xi0: f64,
    pub status: IdStatus,
}

/// Mean of the lower or upper tail of a binned distribution, trimmed at
/// `share`. The default is the verbatim indicator rule
///
///   lower: sum_k ybar_k 1{F(y_k) <= share} f_k / share
///   upper: sum_k ybar_k 1{1 - F(y_k) < share} f_k / share
///
/// whose included bin mass can differ from `share` when the share falls
/// inside a bin. With `fractional` the boundary bin enters with exactly
/// the proportional weight that makes the included mass equal the share.
pub fn trimmed_mean(
    centers: &[f64],
    f: &[f64],
    cdf: &[f64],
    share: f64,
    tail: Tail,
    fractional: bool,
) -> Result<f64, BoundsError> {
    if !(share > 0.0 && share <= 1.0) {
        return Err(BoundsError::BadShare { share });
    }
    let mut acc = 0.0;
    for k in 0..centers.len() {
        // Plain comparisons, exactly as the indicator rules read; the
        // brute-force reference implementation in the acceptance suite
        // must agree bit for bit.
        let include = match tail {
            Tail::Lower => cdf[k] <= share,
            Tail::Upper => 1.0 - cdf[k] < share,
        };
        if !fractional {
            if include {
                acc += centers[k] * f[k];
            }
            continue;
        }
        let prev = if k == 0 { 0.0 } else { cdf[k - 1] };
        let weight = match tail {
            // Mass of bin k below the share quantile.
            Tail::Lower => (share - prev).clamp(0.0, f[k]),
            // Mass of bin k above the (1 - share) quantile.
            Tail::Upper => (cdf[k] - (1.0 - share)).clamp(0.0, f[k]),
        };
        acc += centers[k] * weight;
    }
    Ok(acc / share)
}

/// Bounds at one evaluation point under `tier`, from a single estimated
/// table. All tiers share the same masses and derivatives, which makes
/// the tier nesting an algebraic identity of the trimming formulas.
pub fn bounds_at(
    table: &ConditionalOutcomeTable,
    tier: Tier,
    fractional: bool,
) -> Result<BoundPoint, BoundsError> {
    if table.status == IdStatus::Nonestimable {
        return Ok(BoundPoint {
            p: table.p,
            lower: f64::NAN,
            upper: f64::NAN,
            alpha: f64::NAN,
            beta: f64::NAN,
            v_lower: f64::NAN,
            xi0: f64::NAN,
            status: IdStatus::Nonestimable,
        });
    }
    let xi0 = mean_binned(&table.centers, &table.f0);
    let trim1 = |share: f64, tail: Tail| {
        trimmed_mean(
            &table.centers,
            &table.f1,
            &table.cdf1,
            share,
            tail,
            fractional,
        )
    };
    match tier {
        Tier::Monotone | Tier::MonotonePlusDominance => {
            let alpha = table.alpha_hat;
            if alpha <= 0.0 {
                return Ok(lost_point(table.p, 0.0, xi0));
            }
            let upper = trim1(alpha, Tail::Upper)? - xi0;
            let lower = if tier == Tier::Monotone {
                trim1(alpha, Tail::Lower)? - xi0
            } else {
                mean_binned(&table.centers, &table.f1) - xi0
            };
            Ok(BoundPoint {
                p: table.p,
                lower,
                upper,
                alpha,
                beta: f64::NAN,
                v_lower: (table.pi0 + table.pi1 - 1.0).max(0.0),
                xi0,
                status: if alpha >= 1.0 {
                    IdStatus::Identified
                } else {
                    IdStatus::Partial
                },
            })
        }
        Tier::NoRestriction => {
            // Plug-in Frechet shares from the estimated selection margins.
            // The source derivation defines no estimator for this tier;
            // this is the natural plug-in extension.
            let v_lower = (table.pi0 + table.pi1 - 1.0).max(0.0);
            if v_lower <= 0.0 {
                return Ok(lost_point(table.p, 0.0, f64::NAN));
            }
            let alpha = (v_lower / table.pi1).clamp(0.0, 1.0);
            let beta = (v_lower / table.pi0).clamp(0.0, 1.0);
            if alpha <= 0.0 || beta <= 0.0 {
                return Ok(lost_point(table.p, v_lower, f64::NAN));
            }
            let trim0 = |share: f64, tail: Tail| {
                trimmed_mean(
                    &table.centers,
                    &table.f0,
                    &table.cdf0,
                    share,
                    tail,
                    fractional,
                )
            };
            let lower = trim1(alpha, Tail::Lower)? - trim0(beta, Tail::Upper)?;
            let upper = trim1(alpha, Tail::Upper)? - trim0(beta, Tail::Lower)?;
            Ok(BoundPoint {
                p: table.p,
                lower,
                upper,
                alpha,
                beta,
                v_lower,
                xi0: f64::NAN,
                status: IdStatus::Partial,
            })
        }
        Tier::NoSelectionEffect => {
            let point = mean_binned(&table.centers, &table.f1) - xi0;
            Ok(BoundPoint {
                p: table.p,
                lower: point,
                upper: point,
                alpha: 1.0,
                beta: f64::NAN,
                v_lower: (table.pi0 + table.pi1 - 1.0).max(0.0),
                xi0,
                status: IdStatus::Identified,
            })
        }
    }
}

fn lost_point(p: f64, v_lower: f64, xi0: f64) -> BoundPoint {
    BoundPoint {
        p,
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
        alpha: 0.0,
        beta: 0.0,
        v_lower,
        xi0,
        status: IdStatus::Lost,
    }
}

fn mean_binned(centers: &[f64], f: &[f64]) -> f64 {
    centers.iter().zip(f).map(|(c, w)| c * w).sum()
}

fn kept_rows<'a>(sample: &'a Sample, fit: &PropensityFit) -> (Vec<&'a crate::dgp::Row>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut phat = Vec::new();
    for (i, row) in sample.rows.iter().enumerate() {
        if fit.kept[i] {
            rows.push(row);
            phat.push(fit.fitted[i]);
        }
    }
    (rows, phat)
}

/// Effect of treatment on the probability of staying in the sample:
/// the derivative of E[S | P = p].
pub fn selection_mte(
    sample: &Sample,
    fit: &PropensityFit,
    p: f64,
    config: &SmootherConfig,
) -> Result<f64, BoundsError> {
    let (rows, phat) = kept_rows(sample, fit);
    let h = resolve_bandwidth(config, &phat);
    let s: Vec<f64> = rows.iter().map(|r| f64::from(r.s)).collect();
    Ok(local_derivative(&s, &phat, p, 1.0, h, config.kernel)?)
}

/// Ratio-of-derivatives effect that is valid as the unconditional effect
/// at V = p only when selection and potential outcomes are independent
/// given V:
///
///   d/dp E[Y S D | P] / d/dp E[S D | P]
///     - d/dp E[Y S (1-D) | P] / d/dp E[S (1-D) | P].
pub fn unconditional_mte(
    sample: &Sample,
    fit: &PropensityFit,
    p: f64,
    config: &SmootherConfig,
) -> Result<f64, BoundsError> {
    let (rows, phat) = kept_rows(sample, fit);
    let h = resolve_bandwidth(config, &phat);
    let deriv = |resp: Vec<f64>| local_derivative(&resp, &phat, p, 1.0, h, config.kernel);
    let num1 = deriv(
        rows.iter()
            .map(|r| r.y * f64::from(r.s) * f64::from(r.d))
            .collect(),
    )?;
    let den1 = deriv(
        rows.iter()
            .map(|r| f64::from(r.s) * f64::from(r.d))
            .collect(),
    )?;
    let num0 = deriv(
        rows.iter()
            .map(|r| r.y * f64::from(r.s) * f64::from(1 - r.d))
            .collect(),
    )?;
    let den0 = deriv(
        rows.iter()
            .map(|r| f64::from(r.s) * f64::from(1 - r.d))
            .collect(),
    )?;
    for den in [den1, den0] {
        if den.abs() < 1e-4 {
            return Err(BoundsError::VanishingDenominator { p, value: den });
        }
    }
    Ok(num1 / den1 - num0 / den0)
}

/// The local-IV slope on the selected subsample, d/dp E[Y | P = p, S = 1].
/// Not an interpretable treatment effect under sample selection; exposed
/// to demonstrate how far it drifts from the bounded target.
pub fn liv_naive(
    sample: &Sample,
    fit: &PropensityFit,
    p: f64,
    config: &SmootherConfig,
) -> Result<f64, BoundsError> {
    let mut phat = Vec::new();
    let mut y = Vec::new();
    for (i, row) in sample.rows.iter().enumerate() {
        if fit.kept[i] && row.s == 1 {
            phat.push(fit.fitted[i]);
            y.push(row.y);
        }
    }
    let h = resolve_bandwidth(config, &phat);
    Ok(local_derivative(&y, &phat, p, 1.0, h, config.kernel)?)
}
