//! Aggregation of the pointwise bound curve into conventional treatment
//! effect parameters (ATE, ATT, ATU, LATE, policy-relevant effects) via
//! the weighted-integral representations.

use crate::num::trapezoid;
use crate::oracle::IdStatus;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("weight normalizer is zero (parameter undefined)")]
    ZeroNormalizer,
    #[error("grids are misaligned or shorter than two points")]
    BadGrid,
    #[error("LATE interval requires 0 <= lo < hi <= 1, got ({lo}, {hi})")]
    BadInterval { lo: f64, hi: f64 },
}

/// Tabulated monotone CDF of the propensity score under a policy,
/// evaluated by linear interpolation.
#[derive(Debug, Clone, Serialize)]
pub struct TabulatedCdf {
    pub p: Vec<f64>,
    pub value: Vec<f64>,
}

impl TabulatedCdf {
    pub fn eval(&self, p: f64) -> f64 {
        if p <= self.p[0] {
            return self.value[0];
        }
        if p >= *self.p.last().unwrap() {
            return *self.value.last().unwrap();
        }
        let idx = self.p.partition_point(|&t| t < p);
        let (p0, p1) = (self.p[idx - 1], self.p[idx]);
        let (v0, v1) = (self.value[idx - 1], self.value[idx]);
        if p1 > p0 {
            v0 + (v1 - v0) * (p - p0) / (p1 - p0)
        } else {
            v0
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub enum WeightSpec {
    Ate,
    Att,
    Atu,
    Late {
        lo: f64,
        hi: f64,
    },
    Prte {
        base: TabulatedCdf,
        policy: TabulatedCdf,
    },
}

impl WeightSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            WeightSpec::Ate => "ate",
            WeightSpec::Att => "att",
            WeightSpec::Atu => "atu",
            WeightSpec::Late { .. } => "late",
            WeightSpec::Prte { .. } => "prte",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateBound {
    pub kind: String,
    pub lower: f64,
    pub upper: f64,
    pub weight_integral: f64,
    pub lost_mass: f64,
    pub status: IdStatus,
}

/// Cumulative trapezoid integral of a tabulated density, so that the
/// returned vector is F(p_i) with F(p_0) = 0.
fn cumulative(p: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for i in 1..p.len() {
        out[i] = out[i - 1] + 0.5 * (f[i] + f[i - 1]) * (p[i] - p[i - 1]);
    }
    out
}

/// Evaluates the weight for one estimand on a shared p-grid and
/// normalizes it to integrate to one by the trapezoid rule.
///
/// `pi0` is the always-observed untreated density pi_0(p) (nonnegative
/// under monotone selection); `f_p` is the density of the propensity
/// score on the same grid.
pub fn weight_curve(
    spec: &WeightSpec,
    p_grid: &[f64],
    pi0: &[f64],
    f_p: &[f64],
) -> Result<Vec<f64>, AggregateError> {
    if p_grid.len() < 2 || pi0.len() != p_grid.len() || f_p.len() != p_grid.len() {
        return Err(AggregateError::BadGrid);
    }
    let raw: Vec<f64> = match spec {
        WeightSpec::Ate => pi0.to_vec(),
        WeightSpec::Att => {
            let cdf = cumulative(p_grid, f_p);
            let total = *cdf.last().unwrap();
            p_grid
                .iter()
                .enumerate()
                .map(|(i, _)| (total - cdf[i]) * pi0[i])
                .collect()
        }
        WeightSpec::Atu => {
            let cdf = cumulative(p_grid, f_p);
            p_grid
                .iter()
                .enumerate()
                .map(|(i, _)| cdf[i] * pi0[i])
                .collect()
        }
        WeightSpec::Late { lo, hi } => {
            if !(0.0..1.0).contains(lo) || *hi > 1.0 || lo >= hi {
                return Err(AggregateError::BadInterval { lo: *lo, hi: *hi });
            }
            p_grid
                .iter()
                .zip(pi0)
                .map(|(&p, &w)| if p >= *lo && p <= *hi { w } else { 0.0 })
                .collect()
        }
        WeightSpec::Prte { base, policy } => p_grid
            .iter()
            .zip(pi0)
            .map(|(&p, &w)| (policy.eval(p) - base.eval(p)) * w)
            .collect(),
    };
    let norm = trapezoid(p_grid, &raw);
    if norm.abs() < 1e-12 {
        return Err(AggregateError::ZeroNormalizer);
    }
    Ok(raw.iter().map(|w| w / norm).collect())
}

/// Integrates a bound curve against a normalized weight by the
/// trapezoid rule. Weight mass sitting on non-finite (lost or not
/// estimable) curve points is accounted separately; if any shows up the
/// aggregate is reported lost rather than silently renormalized.
pub fn aggregate_bounds(
    kind: &str,
    p_grid: &[f64],
    lower: &[f64],
    upper: &[f64],
    weight: &[f64],
) -> Result<AggregateBound, AggregateError> {
    let n = p_grid.len();
    if n < 2 || lower.len() != n || upper.len() != n || weight.len() != n {
        return Err(AggregateError::BadGrid);
    }
    let finite: Vec<bool> = lower
        .iter()
        .zip(upper)
        .map(|(l, u)| l.is_finite() && u.is_finite())
        .collect();
    let masked: Vec<f64> = weight
        .iter()
        .zip(&finite)
        .map(|(&w, &ok)| if ok { w } else { 0.0 })
        .collect();
    let total_mass = trapezoid(p_grid, weight);
    let kept_mass = trapezoid(p_grid, &masked);
    let lost_mass = total_mass - kept_mass;
    if lost_mass > 1e-9 {
        return Ok(AggregateBound {
            kind: kind.to_string(),
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            weight_integral: total_mass,
            lost_mass,
            status: IdStatus::Lost,
        });
    }
    let wl: Vec<f64> = lower.iter().zip(weight).map(|(b, w)| b * w).collect();
    let wu: Vec<f64> = upper.iter().zip(weight).map(|(b, w)| b * w).collect();
    Ok(AggregateBound {
        kind: kind.to_string(),
        lower: trapezoid(p_grid, &wl),
        upper: trapezoid(p_grid, &wu),
        weight_integral: total_mass,
        lost_mass: 0.0,
        status: IdStatus::Partial,
    })
}

/// Kernel density of the fitted propensity scores on a grid
/// (Epanechnikov, rule-of-thumb bandwidth), for use as f_P when the
/// score distribution is estimated rather than known.
pub fn score_density(phat: &[f64], p_grid: &[f64]) -> Vec<f64> {
    let n = phat.len() as f64;
    let mean = phat.iter().sum::<f64>() / n;
    let var = phat.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let h = (1.06 * var.sqrt() * n.powf(-0.2)).max(1e-6);
    p_grid
        .iter()
        .map(|&p| {
            let mut acc = 0.0;
            for &q in phat {
                let u = (q - p) / h;
                if u.abs() < 1.0 {
                    acc += 0.75 * (1.0 - u * u);
                }
            }
            acc / (n * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_pi0_ate_weight_is_flat_one() {
        let p = grid(101);
        let pi0 = vec![0.37; 101];
        let fp = vec![1.0; 101];
        let w = weight_curve(&WeightSpec::Ate, &p, &pi0, &fp).unwrap();
        for v in &w {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_score_att_weight_is_two_one_minus_p() {
        let p = grid(1001);
        let pi0 = vec![1.0; 1001];
        let fp = vec![1.0; 1001];
        let w = weight_curve(&WeightSpec::Att, &p, &pi0, &fp).unwrap();
        for (i, &pi) in p.iter().enumerate() {
            assert_abs_diff_eq!(w[i], 2.0 * (1.0 - pi), epsilon = 1e-9);
        }
        // And normalization as a whole.
        assert_abs_diff_eq!(trapezoid(&p, &w), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn late_weight_is_flat_on_window() {
        let p = grid(1001);
        let pi0 = vec![2.5; 1001];
        let fp = vec![1.0; 1001];
        let w = weight_curve(&WeightSpec::Late { lo: 0.2, hi: 0.7 }, &p, &pi0, &fp).unwrap();
        // 1/(0.7-0.2), up to the trapezoid half-bin at each window edge.
        assert_abs_diff_eq!(w[500], 2.0, epsilon = 0.01);
        assert_abs_diff_eq!(w[100], 0.0);
        assert_abs_diff_eq!(w[900], 0.0);
    }

    #[test]
    fn constant_bounds_aggregate_to_themselves() {
        let p = grid(101);
        let lo = vec![-0.4; 101];
        let hi = vec![1.3; 101];
        let w = vec![1.0; 101];
        let agg = aggregate_bounds("ate", &p, &lo, &hi, &w).unwrap();
        assert_abs_diff_eq!(agg.lower, -0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.upper, 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.weight_integral, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lost_points_under_weight_mass_lose_the_aggregate() {
        let p = grid(11);
        let mut lo = vec![0.0; 11];
        let hi = vec![1.0; 11];
        lo[5] = f64::NEG_INFINITY;
        let w = vec![1.0; 11];
        let agg = aggregate_bounds("ate", &p, &lo, &hi, &w).unwrap();
        assert!(matches!(agg.status, IdStatus::Lost));
        assert!(agg.lost_mass > 0.0);
    }

    #[test]
    fn prte_identical_policies_undefined() {
        let p = grid(51);
        let cdf = TabulatedCdf {
            p: p.clone(),
            value: p.clone(),
        };
        let spec = WeightSpec::Prte {
            base: cdf.clone(),
            policy: cdf,
        };
        let pi0 = vec![1.0; 51];
        let fp = vec![1.0; 51];
        assert!(matches!(
            weight_curve(&spec, &p, &pi0, &fp),
            Err(AggregateError::ZeroNormalizer)
        ));
    }

    #[test]
    fn score_density_integrates_to_about_one() {
        let phat: Vec<f64> = (0..5000)
            .map(|i| 0.1 + 0.8 * (i as f64 + 0.5) / 5000.0)
            .collect();
        let p = grid(401);
        let f = score_density(&phat, &p);
        assert_abs_diff_eq!(trapezoid(&p, &f), 1.0, epsilon = 0.01);
    }

    #[test]
    fn tabulated_cdf_interpolates() {
        let cdf = TabulatedCdf {
            p: vec![0.0, 0.5, 1.0],
            value: vec![0.0, 0.4, 1.0],
        };
        assert_abs_diff_eq!(cdf.eval(0.25), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(cdf.eval(0.75), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(cdf.eval(-1.0), 0.0);
        assert_abs_diff_eq!(cdf.eval(2.0), 1.0);
    }
}
