//! Exact population quantities of the synthetic model in [`crate::dgp`]:
//! selection margins, trimming shares, the target effect curve, bounds
//! under every assumption tier, and the local-IV estimand on the selected
//! sample. Everything here is a deterministic function of the structural
//! parameters, which makes it the ground truth for estimator tests.

use crate::dgp::DgpConfig;
use crate::num::{integrate, norm_ppf, NormalMixture, NumericError, Tail, SQRT_2};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("evaluation point {p} outside (0, 1)")]
    BadEvaluationPoint { p: f64 },
    #[error("probability {value} outside [0, 1]")]
    BadProbability { value: f64 },
    #[error("selection probability vanishes at p = {p}")]
    NoSelectedMass { p: f64 },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// The identification regimes the bounds are derived under, ordered from
/// weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Tier {
    /// No restriction on the selection mechanism; trimming shares come
    /// from the Frechet lower bound on the always-observed mass.
    NoRestriction,
    /// Selection responds monotonically to treatment; the untreated
    /// always-observed mean is point identified.
    Monotone,
    /// Monotonicity plus stochastic dominance of the always-observed
    /// treated outcome, which removes the lower trim.
    MonotonePlusDominance,
    /// Treatment does not affect selection; the effect is point
    /// identified.
    NoSelectionEffect,
}

/// Identification status of a bound at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IdStatus {
    /// Point identified (the interval is degenerate).
    Identified,
    /// Partially identified with finite endpoints.
    Partial,
    /// Identification lost: the trimming share is zero and the bounds are
    /// the infinite sentinels.
    Lost,
    /// Not computable from the available inputs (estimation-side only).
    Nonestimable,
}

/// Closed-form building blocks at one evaluation point.
#[derive(Debug, Clone)]
pub struct ClosedForms {
    /// P[S_0 = 1 | V = p]; equals the always-observed mass under
    /// monotone selection.
    pub m0: f64,
    /// P[S_1 = 1 | V = p].
    pub m1: f64,
    /// Trimming share under monotone selection, m0 / m1.
    pub alpha: f64,
    /// Trimming share of the treated arm from the Frechet lower bound.
    pub alpha_frechet: f64,
    /// Trimming share of the untreated arm from the Frechet lower bound.
    pub beta_frechet: f64,
    /// Frechet lower bound on the always-observed mass.
    pub v_lower: f64,
    /// The target effect at this point.
    pub mte: f64,
    /// Conditional law of the untreated outcome given S_0 = 1, V = p.
    pub mix0: NormalMixture,
    /// Conditional law of the treated outcome given S_1 = 1, V = p.
    pub mix1: NormalMixture,
}

/// Evaluates the model's closed forms at `p`. The selection margins are
/// m_d(p) = Phi(delta0 sqrt(2) + delta1 sqrt(2) d - Phi^{-1}(p)) and the
/// conditional outcome laws are equal-weight unit-variance normal
/// mixtures centered at +/- beta loadings times Phi^{-1}(p).
pub fn closed_forms(config: &DgpConfig, p: f64) -> Result<ClosedForms, OracleError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(OracleError::BadEvaluationPoint { p });
    }
    let t = norm_ppf(p);
    let m0 = crate::num::norm_cdf(config.delta0 * SQRT_2 - t);
    let m1 = crate::num::norm_cdf(config.delta0 * SQRT_2 + config.delta1 * SQRT_2 - t);
    let v_lower = (m0 + m1 - 1.0).max(0.0);
    Ok(ClosedForms {
        m0,
        m1,
        alpha: m0 / m1,
        alpha_frechet: v_lower / m1,
        beta_frechet: v_lower / m0,
        v_lower,
        mte: true_mte(config, p)?,
        mix0: NormalMixture::new(config.beta01 * t, -config.beta00 * t),
        mix1: NormalMixture::new(config.beta11 * t, -config.beta10 * t),
    })
}

/// The target effect: E[Y_1* - Y_0* | always observed, V = p]
/// = (beta11 - beta10 - beta01 + beta00) Phi^{-1}(p) / 2.
pub fn true_mte(config: &DgpConfig, p: f64) -> Result<f64, OracleError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(OracleError::BadEvaluationPoint { p });
    }
    Ok((config.beta11 - config.beta10 - config.beta01 + config.beta00) * norm_ppf(p) / 2.0)
}

/// Sharp interval for a joint probability from its marginals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrechetInterval {
    pub lower: f64,
    pub upper: f64,
}

pub fn frechet_interval(m0: f64, m1: f64) -> Result<FrechetInterval, OracleError> {
    for &v in &[m0, m1] {
        if !(0.0..=1.0).contains(&v) {
            return Err(OracleError::BadProbability { value: v });
        }
    }
    Ok(FrechetInterval {
        lower: (m0 + m1 - 1.0).max(0.0),
        upper: m0.min(m1),
    })
}

/// Bounds (or point value) at one evaluation point under one tier.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TierBounds {
    pub lower: f64,
    pub upper: f64,
    /// Treated-arm trimming share actually used.
    pub alpha: f64,
    /// Untreated-arm trimming share (NaN outside the no-restriction tier).
    pub beta: f64,
    pub v_lower: f64,
    /// Untreated always-observed mean where point identified, NaN
    /// otherwise.
    pub xi0: f64,
    pub status: IdStatus,
}

/// Population bounds at `p` under `tier`, from trimmed means of the
/// closed-form mixtures.
pub fn true_bounds(config: &DgpConfig, p: f64, tier: Tier) -> Result<TierBounds, OracleError> {
    let cf = closed_forms(config, p)?;
    let xi0 = cf.mix0.mean();
    match tier {
        Tier::NoRestriction => {
            if cf.v_lower <= 0.0 {
                return Ok(TierBounds {
                    lower: f64::NEG_INFINITY,
                    upper: f64::INFINITY,
                    alpha: 0.0,
                    beta: 0.0,
                    v_lower: 0.0,
                    xi0: f64::NAN,
                    status: IdStatus::Lost,
                });
            }
            let a = cf.alpha_frechet.min(1.0);
            let b = cf.beta_frechet.min(1.0);
            let lower = cf.mix1.tail_mean(a, Tail::Lower)? - cf.mix0.tail_mean(b, Tail::Upper)?;
            let upper = cf.mix1.tail_mean(a, Tail::Upper)? - cf.mix0.tail_mean(b, Tail::Lower)?;
            Ok(TierBounds {
                lower,
                upper,
                alpha: a,
                beta: b,
                v_lower: cf.v_lower,
                xi0: f64::NAN,
                status: if a >= 1.0 && b >= 1.0 {
                    IdStatus::Identified
                } else {
                    IdStatus::Partial
                },
            })
        }
        Tier::Monotone | Tier::MonotonePlusDominance => {
            let a = cf.alpha.min(1.0);
            let upper = cf.mix1.tail_mean(a, Tail::Upper)? - xi0;
            let lower = if tier == Tier::Monotone {
                cf.mix1.tail_mean(a, Tail::Lower)? - xi0
            } else {
                cf.mix1.mean() - xi0
            };
            Ok(TierBounds {
                lower,
                upper,
                alpha: a,
                beta: f64::NAN,
                v_lower: cf.v_lower,
                xi0,
                status: if a >= 1.0 {
                    IdStatus::Identified
                } else {
                    IdStatus::Partial
                },
            })
        }
        Tier::NoSelectionEffect => {
            let point = cf.mix1.mean() - cf.mix0.mean();
            Ok(TierBounds {
                lower: point,
                upper: point,
                alpha: 1.0,
                beta: f64::NAN,
                v_lower: cf.v_lower,
                xi0,
                status: IdStatus::Identified,
            })
        }
    }
}

/// E[S | P(Z) = p]: treated rows select at the m1 margin below p,
/// untreated rows at the m0 margin above p.
pub fn mean_s_given_p(config: &DgpConfig, p: f64) -> Result<f64, OracleError> {
    let c = *config;
    let treated = integrate(|v| margins(&c, v).1, 0.0, p, 1e-10)?;
    let untreated = integrate(|v| margins(&c, v).0, p, 1.0, 1e-10)?;
    Ok(treated + untreated)
}

/// E[S D | P(Z) = p].
pub fn mean_sd_given_p(config: &DgpConfig, p: f64) -> Result<f64, OracleError> {
    let c = *config;
    Ok(integrate(|v| margins(&c, v).1, 0.0, p, 1e-10)?)
}

/// E[S (1 - D) | P(Z) = p].
pub fn mean_s_untreated_given_p(config: &DgpConfig, p: f64) -> Result<f64, OracleError> {
    let c = *config;
    Ok(integrate(|v| margins(&c, v).0, p, 1.0, 1e-10)?)
}

/// E[Y S | P(Z) = p]; uses the independence of outcomes and selection
/// given the latent factor, under which E[Y_d* | V = v] is the mixture
/// mean (beta_{d,1} - beta_{d,0}) Phi^{-1}(v) / 2.
pub fn mean_ys_given_p(config: &DgpConfig, p: f64) -> Result<f64, OracleError> {
    let c = *config;
    let slope1 = (c.beta11 - c.beta10) / 2.0;
    let slope0 = (c.beta01 - c.beta00) / 2.0;
    let treated = integrate(
        |v| {
            let v = clamp_unit(v);
            margins(&c, v).1 * slope1 * norm_ppf(v)
        },
        0.0,
        p,
        1e-10,
    )?;
    let untreated = integrate(
        |v| {
            let v = clamp_unit(v);
            margins(&c, v).0 * slope0 * norm_ppf(v)
        },
        p,
        1.0,
        1e-10,
    )?;
    Ok(treated + untreated)
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(1e-15, 1.0 - 1e-15)
}

fn margins(config: &DgpConfig, v: f64) -> (f64, f64) {
    let t = norm_ppf(clamp_unit(v));
    (
        crate::num::norm_cdf(config.delta0 * SQRT_2 - t),
        crate::num::norm_cdf(config.delta0 * SQRT_2 + config.delta1 * SQRT_2 - t),
    )
}

/// The local-IV estimand evaluated on the selected sample,
///
///   LIV(p) = E[Y_1 - Y_0 | V = p] / E[S | P = p]
///            - E[Y S | P = p] (m1(p) - m0(p)) / E[S | P = p]^2,
///
/// where Y_d = Y_d* S_d. It mixes the intensive and extensive selection
/// margins and is exposed only to quantify how far it strays from the
/// target effect.
pub fn liv_estimand(config: &DgpConfig, p: f64) -> Result<f64, OracleError> {
    let cf = closed_forms(config, p)?;
    let es = mean_s_given_p(config, p)?;
    if es <= 1e-12 {
        return Err(OracleError::NoSelectedMass { p });
    }
    let t = norm_ppf(p);
    let dy = cf.m1 * (config.beta11 - config.beta10) / 2.0 * t
        - cf.m0 * (config.beta01 - config.beta00) / 2.0 * t;
    let eys = mean_ys_given_p(config, p)?;
    Ok(dy / es - eys * (cf.m1 - cf.m0) / (es * es))
}

/// Everything the oracle knows at one evaluation point, in the layout the
/// CSV emitter writes.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCurvePoint {
    pub p: f64,
    pub alpha: f64,
    pub alpha_frechet: f64,
    pub beta_frechet: f64,
    pub v_lower: f64,
    pub mte: f64,
    pub lb1: f64,
    pub ub1: f64,
    pub lb2: f64,
    pub ub2: f64,
    pub lb3: f64,
    pub ub3: f64,
    pub xi0: f64,
    pub liv: f64,
    pub status: IdStatus,
}

/// Bounds under all tiers plus the local-IV estimand at `p`. The status
/// reported is the weakest tier's (lost when the Frechet share is zero).
pub fn oracle_point(config: &DgpConfig, p: f64) -> Result<OracleCurvePoint, OracleError> {
    let cf = closed_forms(config, p)?;
    let b1 = true_bounds(config, p, Tier::NoRestriction)?;
    let b2 = true_bounds(config, p, Tier::Monotone)?;
    let b3 = true_bounds(config, p, Tier::MonotonePlusDominance)?;
    Ok(OracleCurvePoint {
        p,
        alpha: cf.alpha,
        alpha_frechet: cf.alpha_frechet,
        beta_frechet: cf.beta_frechet,
        v_lower: cf.v_lower,
        mte: cf.mte,
        lb1: b1.lower,
        ub1: b1.upper,
        lb2: b2.lower,
        ub2: b2.upper,
        lb3: b3.lower,
        ub3: b3.upper,
        xi0: b2.xi0,
        liv: liv_estimand(config, p)?,
        status: b1.status,
    })
}
