//! Distributional bounds: for a measurable outcome set A, bound the
//! difference of set probabilities of the two potential outcomes among
//! the always-observed at each evaluation point.

use crate::oracle::IdStatus;
use crate::smoother::ConditionalOutcomeTable;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DmteError {
    #[error("bin range {lo}..={hi} outside grid with {bins} bins")]
    BadRange { lo: usize, hi: usize, bins: usize },
    #[error("empty outcome set")]
    EmptySet,
}

/// Union of outcome-grid bins, stored as sorted deduplicated indices.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeSet {
    pub bins: Vec<usize>,
}

impl OutcomeSet {
    pub fn from_ranges(ranges: &[(usize, usize)], num_bins: usize) -> Result<Self, DmteError> {
        let mut bins = Vec::new();
        for &(lo, hi) in ranges {
            if hi >= num_bins || lo > hi {
                return Err(DmteError::BadRange {
                    lo,
                    hi,
                    bins: num_bins,
                });
            }
            bins.extend(lo..=hi);
        }
        bins.sort_unstable();
        bins.dedup();
        if bins.is_empty() {
            return Err(DmteError::EmptySet);
        }
        Ok(Self { bins })
    }

    fn mass(&self, f: &[f64]) -> f64 {
        self.bins.iter().map(|&b| f[b]).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DmtePoint {
    pub p: f64,
    pub p_a1: f64,
    pub p_a0: f64,
    pub lower: f64,
    pub upper: f64,
    pub status: IdStatus,
}

/// Bound arithmetic on the raw shares, exposed separately so the exact
/// formulas can be brute-force checked over a (pA1, alpha) grid.
pub fn dmte_terms(p_a1: f64, alpha: f64) -> (f64, f64) {
    // The lower ratio is a probability, but rounding in the subtraction
    // can push it a few ulps past one (e.g. shares 1.0 and 0.02); cap it.
    let lower_term = ((p_a1 - (1.0 - alpha)) / alpha).clamp(0.0, 1.0);
    let upper_term = (p_a1 / alpha).min(1.0);
    (lower_term, upper_term)
}

/// Bounds on the set-probability contrast at one table. The treated-arm
/// share is bounded by trimming mass into or out of A; the untreated
/// share is point-identified, as its mean is.
pub fn dmte_bounds(table: &ConditionalOutcomeTable, set: &OutcomeSet) -> DmtePoint {
    if table.status == IdStatus::Nonestimable {
        return DmtePoint {
            p: table.p,
            p_a1: f64::NAN,
            p_a0: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
            status: IdStatus::Nonestimable,
        };
    }
    let p_a1 = set.mass(&table.f1);
    let p_a0 = set.mass(&table.f0);
    let alpha = table.alpha_hat;
    if alpha <= 0.0 {
        return DmtePoint {
            p: table.p,
            p_a1,
            p_a0,
            lower: -1.0,
            upper: 1.0,
            status: IdStatus::Lost,
        };
    }
    let (lower_term, upper_term) = dmte_terms(p_a1, alpha);
    DmtePoint {
        p: table.p,
        p_a1,
        p_a0,
        lower: lower_term - p_a0,
        upper: upper_term - p_a0,
        status: if alpha >= 1.0 {
            IdStatus::Identified
        } else {
            IdStatus::Partial
        },
    }
}
