//! Bounds with a discrete multi-valued instrument: the propensity score
//! takes finitely many values, the continuum of evaluation points is
//! replaced by a ladder of score levels, and each adjacent pair yields a
//! bounded complier effect via difference quotients of cell means.

use crate::dgp::Sample;
use crate::npbounds::{bounds_at, BoundsError};
use crate::oracle::{IdStatus, Tier};
use crate::smoother::{assemble_table, OutcomeGrid};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscreteError {
    #[error("instrument cell {label} has propensity {p} on the boundary; score must be interior")]
    DegenerateCell { label: String, p: f64 },
    #[error("need at least two distinct score levels, found {found}")]
    TooFewLevels { found: usize },
    #[error("interval index {ell} out of range 1..={max}")]
    BadInterval { ell: usize, max: usize },
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

/// Cell means at one instrument level. `mass1[k]` is the cell mean of
/// 1{Y in bin k} S D, `mass0[k]` of 1{Y in bin k} S (1 - D).
#[derive(Debug, Clone, Serialize)]
pub struct LadderLevel {
    pub label: String,
    pub p: f64,
    pub count: usize,
    pub e_sd: f64,
    pub e_s1md: f64,
    pub mass1: Vec<f64>,
    pub mass0: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscreteLadder {
    pub levels: Vec<LadderLevel>,
    pub grid: OutcomeGrid,
}

#[derive(Debug, Clone, Serialize)]
pub struct LateEntry {
    pub ell: usize,
    pub p_lo: f64,
    pub p_hi: f64,
    pub alpha_tilde: f64,
    pub lower: f64,
    pub upper: f64,
    pub status: IdStatus,
}

fn cell_key(z: &[f64]) -> String {
    z.iter()
        .map(|v| format!("{:.12e}", v))
        .collect::<Vec<_>>()
        .join(",")
}

/// Groups rows by exact instrument value, computes per-cell means, sorts
/// the cells by estimated score, and merges cells whose scores coincide
/// (the partition cannot be refined across equal scores).
pub fn build_ladder(sample: &Sample, grid: &OutcomeGrid) -> Result<DiscreteLadder, DiscreteError> {
    use std::collections::BTreeMap;
    let k = grid.num_bins();
    struct Acc {
        count: usize,
        d: f64,
        sd: f64,
        s1md: f64,
        mass1: Vec<f64>,
        mass0: Vec<f64>,
    }
    let mut cells: BTreeMap<String, Acc> = BTreeMap::new();
    for row in &sample.rows {
        let acc = cells.entry(cell_key(&row.z)).or_insert_with(|| Acc {
            count: 0,
            d: 0.0,
            sd: 0.0,
            s1md: 0.0,
            mass1: vec![0.0; k],
            mass0: vec![0.0; k],
        });
        acc.count += 1;
        acc.d += f64::from(row.d);
        let sd = f64::from(row.s) * f64::from(row.d);
        let su = f64::from(row.s) * f64::from(1 - row.d);
        acc.sd += sd;
        acc.s1md += su;
        if row.s == 1 {
            for b in 0..k {
                if row.y >= grid.edges[b] && row.y <= grid.edges[b + 1] {
                    acc.mass1[b] += sd;
                    acc.mass0[b] += su;
                }
            }
        }
    }
    let mut levels: Vec<LadderLevel> = cells
        .into_iter()
        .map(|(label, acc)| {
            let n = acc.count as f64;
            LadderLevel {
                label,
                p: acc.d / n,
                count: acc.count,
                e_sd: acc.sd / n,
                e_s1md: acc.s1md / n,
                mass1: acc.mass1.iter().map(|m| m / n).collect(),
                mass0: acc.mass0.iter().map(|m| m / n).collect(),
            }
        })
        .collect();
    for level in &levels {
        if level.p <= 0.0 || level.p >= 1.0 {
            return Err(DiscreteError::DegenerateCell {
                label: level.label.clone(),
                p: level.p,
            });
        }
    }
    levels.sort_by(|a, b| a.p.total_cmp(&b.p));
    // Merge levels with numerically identical scores by count-weighted
    // pooling of every cell mean.
    let mut merged: Vec<LadderLevel> = Vec::with_capacity(levels.len());
    for level in levels {
        if let Some(last) = merged.last_mut() {
            if (level.p - last.p).abs() < 1e-10 {
                let (na, nb) = (last.count as f64, level.count as f64);
                let w = na + nb;
                let pool = |a: f64, b: f64| (na * a + nb * b) / w;
                last.p = pool(last.p, level.p);
                last.e_sd = pool(last.e_sd, level.e_sd);
                last.e_s1md = pool(last.e_s1md, level.e_s1md);
                for b in 0..k {
                    last.mass1[b] = pool(last.mass1[b], level.mass1[b]);
                    last.mass0[b] = pool(last.mass0[b], level.mass0[b]);
                }
                last.count += level.count;
                last.label = format!("{}|{}", last.label, level.label);
                continue;
            }
        }
        merged.push(level);
    }
    if merged.len() < 2 {
        return Err(DiscreteError::TooFewLevels {
            found: merged.len(),
        });
    }
    Ok(DiscreteLadder {
        levels: merged,
        grid: grid.clone(),
    })
}

/// Bounds for interval `ell` (between level ell-1 and level ell, 1-based):
/// the trimming share is the difference quotient
///
///   alpha_tilde = (E[S(1-D) | lo] - E[S(1-D) | hi]) / (E[SD | hi] - E[SD | lo])
///
/// and the within-interval outcome distributions are the matching
/// difference quotients of the binned cell masses, cleaned as estimated
/// tables are. The untreated arm is point-identified and the treated arm
/// trimmed at alpha_tilde.
pub fn late_bounds(
    ladder: &DiscreteLadder,
    ell: usize,
    fractional: bool,
) -> Result<LateEntry, DiscreteError> {
    let max = ladder.levels.len() - 1;
    if ell < 1 || ell > max {
        return Err(DiscreteError::BadInterval { ell, max });
    }
    let lo = &ladder.levels[ell - 1];
    let hi = &ladder.levels[ell];
    let pi1 = hi.e_sd - lo.e_sd;
    let pi0 = lo.e_s1md - hi.e_s1md;
    if pi1 > 0.0 && pi0 == 0.0 {
        // No selection response over the interval: the trimming share is
        // zero and the interval effect is unbounded.
        return Ok(LateEntry {
            ell,
            p_lo: lo.p,
            p_hi: hi.p,
            alpha_tilde: 0.0,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            status: IdStatus::Lost,
        });
    }
    if pi1 <= 0.0 || pi0 < 0.0 {
        // A nonpositive treated-arm quotient (or negative untreated one)
        // contradicts the model's monotone-selection implication; bounds
        // are suppressed rather than clamped into shape.
        return Ok(LateEntry {
            ell,
            p_lo: lo.p,
            p_hi: hi.p,
            alpha_tilde: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
            status: IdStatus::Nonestimable,
        });
    }
    let k = ladder.grid.num_bins();
    let gamma1: Vec<f64> = (0..k).map(|b| hi.mass1[b] - lo.mass1[b]).collect();
    let gamma0: Vec<f64> = (0..k).map(|b| lo.mass0[b] - hi.mass0[b]).collect();
    let table = assemble_table(
        0.5 * (lo.p + hi.p),
        ladder.grid.centers.clone(),
        pi0,
        pi1,
        gamma0,
        gamma1,
        false,
    );
    let b = bounds_at(&table, Tier::Monotone, fractional)?;
    Ok(LateEntry {
        ell,
        p_lo: lo.p,
        p_hi: hi.p,
        alpha_tilde: table.alpha_hat,
        lower: b.lower,
        upper: b.upper,
        status: b.status,
    })
}

/// All intervals of the ladder in order.
pub fn all_late_bounds(
    ladder: &DiscreteLadder,
    fractional: bool,
) -> Result<Vec<LateEntry>, DiscreteError> {
    (1..ladder.levels.len())
        .map(|ell| late_bounds(ladder, ell, fractional))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{Row, Sample};
    use approx::assert_abs_diff_eq;

    fn toy_grid() -> OutcomeGrid {
        OutcomeGrid::new(vec![-0.5, 0.5, 1.5]).unwrap()
    }

    fn level(p: f64, e_sd: f64, e_s1md: f64, mass1: Vec<f64>, mass0: Vec<f64>) -> LadderLevel {
        LadderLevel {
            label: format!("{p}"),
            p,
            count: 100,
            e_sd,
            e_s1md,
            mass1,
            mass0,
        }
    }

    #[test]
    fn alpha_tilde_from_difference_quotients() {
        // E[S(1-D)] falls 0.5 -> 0.4 while E[SD] rises 0.3 -> 0.5.
        let ladder = DiscreteLadder {
            grid: toy_grid(),
            levels: vec![
                level(0.3, 0.3, 0.5, vec![0.1, 0.2], vec![0.25, 0.25]),
                level(0.7, 0.5, 0.4, vec![0.2, 0.3], vec![0.2, 0.2]),
            ],
        };
        let e = late_bounds(&ladder, 1, false).unwrap();
        assert_abs_diff_eq!(e.alpha_tilde, 0.5, epsilon = 1e-12);
        assert!(e.lower <= e.upper);
    }

    #[test]
    fn equal_selection_and_treatment_response_collapses() {
        // The selection drop matches the treatment rise: alpha_tilde = 1
        // and the interval effect is point-identified.
        let ladder = DiscreteLadder {
            grid: toy_grid(),
            levels: vec![
                level(0.3, 0.3, 0.5, vec![0.15, 0.15], vec![0.25, 0.25]),
                level(0.7, 0.5, 0.3, vec![0.25, 0.25], vec![0.15, 0.1]),
            ],
        };
        let e = late_bounds(&ladder, 1, false).unwrap();
        assert_abs_diff_eq!(e.alpha_tilde, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.lower, e.upper, epsilon = 1e-12);
        assert_eq!(e.status, IdStatus::Identified);
    }

    #[test]
    fn no_selection_change_loses_the_interval() {
        let ladder = DiscreteLadder {
            grid: toy_grid(),
            levels: vec![
                level(0.3, 0.3, 0.5, vec![0.15, 0.15], vec![0.25, 0.25]),
                level(0.7, 0.5, 0.5, vec![0.25, 0.25], vec![0.25, 0.25]),
            ],
        };
        let e = late_bounds(&ladder, 1, false).unwrap();
        assert_eq!(e.status, IdStatus::Lost);
        assert!(e.lower.is_infinite() && e.upper.is_infinite());
    }

    #[test]
    fn negative_quotient_is_flagged() {
        // Treated share falls as the score rises: testable implication
        // violated, bounds withheld.
        let ladder = DiscreteLadder {
            grid: toy_grid(),
            levels: vec![
                level(0.3, 0.5, 0.4, vec![0.25, 0.25], vec![0.2, 0.2]),
                level(0.7, 0.3, 0.5, vec![0.15, 0.15], vec![0.25, 0.25]),
            ],
        };
        let e = late_bounds(&ladder, 1, false).unwrap();
        assert_eq!(e.status, IdStatus::Nonestimable);
        assert!(e.lower.is_nan());
    }

    #[allow(clippy::type_complexity)]
    fn sample_from_cells(cells: &[(f64, &[(f64, u8, u8)])]) -> Sample {
        let rows = cells
            .iter()
            .flat_map(|(z, rows)| {
                rows.iter().map(move |&(y, s, d)| Row {
                    y,
                    s,
                    d,
                    z: vec![*z],
                })
            })
            .collect();
        Sample {
            rows,
            latent: None,
            x: None,
        }
    }

    #[test]
    fn ladder_sorts_and_merges_cells() {
        // Three z codes; two of them share the same cell treatment rate.
        let a: Vec<(f64, u8, u8)> = vec![(0.0, 1, 1), (0.0, 1, 0), (1.0, 1, 0), (1.0, 0, 0)];
        let b: Vec<(f64, u8, u8)> = vec![(0.0, 1, 1), (1.0, 1, 1), (0.0, 1, 0), (1.0, 0, 1)];
        let c: Vec<(f64, u8, u8)> = vec![(1.0, 1, 1), (0.0, 1, 0), (0.0, 1, 0), (1.0, 0, 1)];
        // Cells fed out of score order on purpose.
        let sample = sample_from_cells(&[(9.0, &b), (2.0, &a), (5.0, &c)]);
        let ladder = build_ladder(&sample, &toy_grid()).unwrap();
        // b has rate 3/4; c has rate 2/4; a has rate 1/4 -> sorted a, c, b.
        assert_eq!(ladder.levels.len(), 3);
        assert!(ladder.levels.windows(2).all(|w| w[0].p < w[1].p));
        assert_abs_diff_eq!(ladder.levels[0].p, 0.25);
        // Duplicate the middle cell under a new code: same score, merged.
        let sample = sample_from_cells(&[(9.0, &b), (2.0, &a), (5.0, &c), (7.0, &c)]);
        let ladder = build_ladder(&sample, &toy_grid()).unwrap();
        assert_eq!(ladder.levels.len(), 3);
        assert_eq!(ladder.levels[1].count, 8);
    }

    #[test]
    fn boundary_score_cell_is_rejected() {
        let all_treated: Vec<(f64, u8, u8)> = vec![(0.0, 1, 1), (1.0, 1, 1)];
        let mixed: Vec<(f64, u8, u8)> = vec![(0.0, 1, 1), (1.0, 1, 0)];
        let sample = sample_from_cells(&[(1.0, &all_treated), (2.0, &mixed)]);
        assert!(matches!(
            build_ladder(&sample, &toy_grid()),
            Err(DiscreteError::DegenerateCell { .. })
        ));
    }

    #[test]
    fn alpha_tilde_ignores_outcome_scale() {
        let mixed_lo: Vec<(f64, u8, u8)> = vec![(0.0, 1, 0), (1.0, 1, 0), (0.0, 1, 1), (1.0, 0, 0)];
        let mixed_hi: Vec<(f64, u8, u8)> = vec![(0.0, 1, 1), (1.0, 1, 1), (0.0, 1, 0), (1.0, 0, 1)];
        let sample = sample_from_cells(&[(0.0, &mixed_lo), (1.0, &mixed_hi)]);
        let ladder = build_ladder(&sample, &toy_grid()).unwrap();
        let base = late_bounds(&ladder, 1, false).unwrap();
        let mut scaled = sample.clone();
        for r in &mut scaled.rows {
            r.y *= 100.0;
        }
        let grid = OutcomeGrid::new(vec![-50.0, 50.0, 150.0]).unwrap();
        let ladder = build_ladder(&scaled, &grid).unwrap();
        let big = late_bounds(&ladder, 1, false).unwrap();
        assert_abs_diff_eq!(base.alpha_tilde, big.alpha_tilde, epsilon = 1e-12);
    }
}
