//! Logit propensity score estimation with fitted-probability clamping and
//! common-support trimming.

use crate::dgp::Sample;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PropensityError {
    #[error("design matrix is rank deficient; collinear columns: {columns:?}")]
    RankDeficient { columns: Vec<usize> },
    #[error(
        "perfect separation detected along direction {direction:?}; the likelihood is unbounded"
    )]
    Separation { direction: Vec<f64> },
    #[error("Newton iteration did not converge within {iterations} steps (gradient sup-norm {gradient:e})")]
    NoConvergence { iterations: usize, gradient: f64 },
    #[error("need more rows ({rows}) than coefficients ({coefficients})")]
    TooFewRows { rows: usize, coefficients: usize },
    #[error("treatment indicator is constant; the propensity score is degenerate")]
    ConstantTreatment,
}

/// Which columns enter the linear index next to the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IndexSpec {
    /// Intercept and the instrument columns.
    LinearInZ,
    /// Intercept, instrument columns, and covariate columns.
    LinearInZx,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropensityConfig {
    /// Clamp band for fitted probabilities: kept values live in
    /// [lambda, 1 - lambda].
    pub lambda_trim: f64,
    /// Tail share removed from each end of the overlapping fitted-score
    /// distribution.
    pub support_trim_pct: f64,
    pub spec: IndexSpec,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            lambda_trim: 0.001,
            support_trim_pct: 0.01,
            spec: IndexSpec::LinearInZ,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PropensityFit {
    /// Intercept first, then the index columns in design order.
    pub coefficients: Vec<f64>,
    /// Clamped fitted probability per row.
    pub fitted: Vec<f64>,
    /// True where the row survives the common-support trim.
    pub kept: Vec<bool>,
    pub log_likelihood: f64,
}

fn design(sample: &Sample, spec: IndexSpec) -> Vec<Vec<f64>> {
    sample
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![1.0];
            row.extend_from_slice(&r.z);
            if spec == IndexSpec::LinearInZx {
                if let Some(x) = &sample.x {
                    row.extend_from_slice(&x[i]);
                }
            }
            row
        })
        .collect()
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn log_likelihood(x: &[Vec<f64>], d: &[f64], beta: &[f64]) -> f64 {
    x.iter()
        .zip(d)
        .map(|(xi, &di)| {
            let eta: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            // log Lambda(eta) if d = 1, log(1 - Lambda(eta)) otherwise,
            // computed in the numerically stable log1p form.
            di * eta - soft_plus(eta)
        })
        .sum()
}

fn soft_plus(t: f64) -> f64 {
    if t > 35.0 {
        t
    } else {
        t.exp().ln_1p()
    }
}

#[allow(clippy::needless_range_loop)]
fn solve_symmetric(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>, Vec<usize>> {
    // Gaussian elimination with partial pivoting; near-zero pivots name
    // the offending columns.
    let m = b.len();
    let scale: Vec<f64> = (0..m).map(|j| a[j][j].abs().max(1e-300)).collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut bad = Vec::new();
    for k in 0..m {
        let (piv, pv) = (k..m)
            .map(|i| (i, a[i][k].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pv <= 1e-10 * scale[k].max(1.0) {
            bad.push(perm[k]);
            continue;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        perm.swap(k, piv);
        for i in (k + 1)..m {
            let f = a[i][k] / a[k][k];
            for j in k..m {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    if !bad.is_empty() {
        return Err(bad);
    }
    let mut x = vec![0.0; m];
    for k in (0..m).rev() {
        let mut s = b[k];
        for j in (k + 1)..m {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

/// Fits the logit score by Newton-Raphson with step halving, clamps the
/// fitted probabilities, and marks the rows surviving the common-support
/// trim. Convergence requires a gradient sup-norm below 1e-8.
#[allow(clippy::needless_range_loop)]
pub fn fit_logit(
    sample: &Sample,
    config: &PropensityConfig,
) -> Result<PropensityFit, PropensityError> {
    let x = design(sample, config.spec);
    let d: Vec<f64> = sample.rows.iter().map(|r| f64::from(r.d)).collect();
    let n = x.len();
    let m = x.first().map_or(0, Vec::len);
    if n <= m {
        return Err(PropensityError::TooFewRows {
            rows: n,
            coefficients: m,
        });
    }
    if d.iter().all(|&v| v == d[0]) {
        return Err(PropensityError::ConstantTreatment);
    }

    let mut beta = vec![0.0; m];
    let mut ll = log_likelihood(&x, &d, &beta);
    let max_iter = 100;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    // The likelihood is a sum of n terms, so near the optimum its float
    // noise (and the smallest attainable gradient) scales like sqrt(n);
    // below this the iteration has converged at working precision.
    let stall_tol = 1e-6 * (n as f64).sqrt();
    for iter in 0..max_iter {
        let mut grad = vec![0.0; m];
        let mut hess = vec![vec![0.0; m]; m];
        for (xi, &di) in x.iter().zip(&d) {
            let eta: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = logistic(eta);
            let w = mu * (1.0 - mu);
            for j in 0..m {
                grad[j] += (di - mu) * xi[j];
                for k in j..m {
                    hess[j][k] += w * xi[j] * xi[k];
                }
            }
        }
        for j in 0..m {
            for k in 0..j {
                hess[j][k] = hess[k][j];
            }
        }
        grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_norm < 1e-8 {
            converged = true;
            break;
        }
        let mut rhs = grad.clone();
        let step = match solve_symmetric(&mut hess, &mut rhs) {
            Ok(s) => s,
            Err(columns) => {
                if iter == 0 {
                    return Err(PropensityError::RankDeficient { columns });
                }
                // A Hessian collapsing later in the iteration means the
                // weights vanished: fitted values have gone degenerate.
                return Err(separation_error(&beta));
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let trial_ll = log_likelihood(&x, &d, &trial);
            if trial_ll >= ll {
                beta = trial;
                ll = trial_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // The likelihood cannot be improved along the Newton direction
            // even with tiny steps: treat as converged if the gradient is
            // already small at working precision.
            if grad_norm < stall_tol {
                converged = true;
            }
            break;
        }
        if beta.iter().any(|b| b.abs() > 1e3) {
            return Err(separation_error(&beta));
        }
    }
    // A fit that classifies every row essentially perfectly means the
    // likelihood is unbounded (perfect separation): the MLE does not
    // exist, whether or not the iteration happened to stop.
    let perfect = x.iter().zip(&d).all(|(xi, &di)| {
        let eta: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
        (di - logistic(eta)).abs() < 1e-6
    });
    if perfect {
        return Err(separation_error(&beta));
    }
    if !converged && grad_norm >= stall_tol {
        return Err(PropensityError::NoConvergence {
            iterations: max_iter,
            gradient: grad_norm,
        });
    }

    let lambda = config.lambda_trim;
    let fitted: Vec<f64> = x
        .iter()
        .map(|xi| {
            let eta: f64 = xi.iter().zip(&beta).map(|(a, b)| a * b).sum();
            logistic(eta).clamp(lambda, 1.0 - lambda)
        })
        .collect();

    let kept = support_mask(&fitted, &d, config.support_trim_pct);
    Ok(PropensityFit {
        coefficients: beta,
        fitted,
        kept,
        log_likelihood: ll,
    })
}

fn separation_error(beta: &[f64]) -> PropensityError {
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-300);
    PropensityError::Separation {
        direction: beta.iter().map(|b| b / norm).collect(),
    }
}

/// Keeps rows whose fitted score lies in the overlap of the treated and
/// untreated score ranges, minus `trim_pct` of mass from each tail of the
/// overlap distribution (rank based, so the removed shares are exact up
/// to ties).
fn support_mask(fitted: &[f64], d: &[f64], trim_pct: f64) -> Vec<bool> {
    let bounds = |group: f64| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (p, &di) in fitted.iter().zip(d) {
            if di == group {
                lo = lo.min(*p);
                hi = hi.max(*p);
            }
        }
        (lo, hi)
    };
    let (lo1, hi1) = bounds(1.0);
    let (lo0, hi0) = bounds(0.0);
    let ov_lo = lo1.max(lo0);
    let ov_hi = hi1.min(hi0);
    let mut in_overlap: Vec<f64> = fitted
        .iter()
        .copied()
        .filter(|p| (ov_lo..=ov_hi).contains(p))
        .collect();
    if in_overlap.is_empty() {
        return vec![false; fitted.len()];
    }
    in_overlap.sort_by(f64::total_cmp);
    let cut = ((in_overlap.len() as f64) * trim_pct).floor() as usize;
    let q_lo = in_overlap[cut.min(in_overlap.len() - 1)];
    let q_hi = in_overlap[in_overlap.len() - 1 - cut.min(in_overlap.len() - 1)];
    fitted
        .iter()
        .map(|p| (ov_lo..=ov_hi).contains(p) && *p >= q_lo && *p <= q_hi)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DgpConfig, Row, Sample};
    use approx::assert_abs_diff_eq;

    fn toy_sample(pairs: &[(f64, u8)]) -> Sample {
        Sample {
            rows: pairs
                .iter()
                .map(|&(z, d)| Row {
                    y: 0.0,
                    s: 1,
                    d,
                    z: vec![z],
                })
                .collect(),
            latent: None,
            x: None,
        }
    }

    #[test]
    fn intercept_only_recovers_sample_mean() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push((0.0, u8::from(i < 3)));
        }
        let sample = toy_sample(&rows);
        // Zero out the z column influence by making it constant; the
        // fitted probability must equal the treated share everywhere.
        let fit = fit_logit(
            &sample,
            &PropensityConfig {
                lambda_trim: 0.0,
                support_trim_pct: 0.0,
                spec: IndexSpec::LinearInZ,
            },
        );
        // A constant z column duplicates the intercept: rank deficient.
        assert!(matches!(fit, Err(PropensityError::RankDeficient { .. })));

        // With distinct but uninformative z the mean-fitted identity from
        // the score equations still holds.
        let rows: Vec<(f64, u8)> = (0..40)
            .map(|i| (f64::from(i % 5), u8::from(i % 3 == 0)))
            .collect();
        let sample = toy_sample(&rows);
        let fit = fit_logit(
            &sample,
            &PropensityConfig {
                lambda_trim: 0.0,
                support_trim_pct: 0.0,
                spec: IndexSpec::LinearInZ,
            },
        )
        .unwrap();
        let mean_fit = fit.fitted.iter().sum::<f64>() / 40.0;
        let mean_d = rows.iter().map(|r| f64::from(r.1)).sum::<f64>() / 40.0;
        assert_abs_diff_eq!(mean_fit, mean_d, epsilon = 1e-9);
    }

    #[test]
    fn misspecified_fit_tracks_true_score() {
        let sample = generate(&DgpConfig::panel_a(), 10_000, 5);
        let fit = fit_logit(&sample, &PropensityConfig::default()).unwrap();
        let mad: f64 = sample
            .rows
            .iter()
            .zip(&fit.fitted)
            .map(|(r, &p)| (p - crate::num::norm_cdf(r.z[0])).abs())
            .sum::<f64>()
            / sample.len() as f64;
        // Logit-in-z approximates Phi(z) closely but not exactly.
        assert!(mad > 1e-4, "misspecification should not vanish, mad={mad}");
        assert!(mad < 0.03, "fit should track the true score, mad={mad}");
        assert!(fit.fitted.iter().all(|p| (0.001..=0.999).contains(p)));
    }

    #[test]
    fn log_likelihood_and_order_invariance() {
        let sample = generate(&DgpConfig::panel_b(), 2_000, 9);
        let fit = fit_logit(&sample, &PropensityConfig::default()).unwrap();
        let mut reversed = sample.clone();
        reversed.rows.reverse();
        let fit_rev = fit_logit(&reversed, &PropensityConfig::default()).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&fit_rev.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn separation_is_reported() {
        let rows: Vec<(f64, u8)> = (0..60)
            .map(|i| {
                let z = f64::from(i) / 10.0 - 3.0;
                (z, u8::from(z > 0.0))
            })
            .collect();
        let err = fit_logit(&toy_sample(&rows), &PropensityConfig::default()).unwrap_err();
        assert!(matches!(err, PropensityError::Separation { .. }), "{err}");
    }

    #[test]
    fn support_trim_removes_tails() {
        let sample = generate(&DgpConfig::panel_a(), 20_000, 2);
        let cfg = PropensityConfig {
            support_trim_pct: 0.05,
            ..PropensityConfig::default()
        };
        let fit = fit_logit(&sample, &cfg).unwrap();
        let kept = fit.kept.iter().filter(|&&k| k).count();
        let frac = kept as f64 / sample.len() as f64;
        assert!(frac > 0.80 && frac < 0.95, "kept fraction {frac}");
    }
}
