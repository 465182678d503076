//! Shared numerics: the standard normal distribution, adaptive
//! Gauss-Kronrod quadrature, bisection root finding, trapezoid
//! integration on grids, and two-component normal mixtures with
//! tail-mean evaluation.

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error(
        "quadrature did not converge: achieved error {achieved:e} exceeds tolerance {requested:e}"
    )]
    QuadratureNoConvergence { achieved: f64, requested: f64 },
    #[error("root not bracketed on [{lo}, {hi}]")]
    RootNotBracketed { lo: f64, hi: f64 },
    #[error("argument {value} outside the open unit interval")]
    OutsideUnitInterval { value: f64 },
}

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.5066282746310002;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF via the complementary error function, accurate to
/// machine precision over the whole real line.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile. Acklam's rational approximation refined by
/// two Halley steps against `norm_cdf`, giving relative accuracy well
/// below 1e-12 on (0, 1).
pub fn norm_ppf(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        if p == 1.0 {
            return f64::INFINITY;
        }
        return f64::NAN;
    }
    let x = acklam(p);
    // Halley refinement: needs only the CDF error and the density.
    let mut x = x;
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        x -= u / (1.0 + x * u / 2.0);
    }
    x
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

// Gauss-Kronrod 7-15 nodes and weights on [-1, 1] (QUADPACK constants).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (j, &x) in XGK.iter().enumerate() {
        let fsum = if x == 0.0 {
            f(c)
        } else {
            f(c - h * x) + f(c + h * x)
        };
        kronrod += WGK[j] * fsum;
        // Gauss nodes are every other Kronrod node, starting from index 1.
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]`. Bisects the
/// worst interval until the summed error estimate drops below `tol`, and
/// reports the achieved estimate when the interval budget runs out.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, NumericError> {
    if a == b {
        return Ok(0.0);
    }
    struct Seg {
        a: f64,
        b: f64,
        val: f64,
        err: f64,
    }
    let (val, err) = gk15(&f, a, b);
    let mut segs = vec![Seg { a, b, val, err }];
    for _ in 0..2000 {
        let total_err: f64 = segs.iter().map(|s| s.err).sum();
        if total_err <= tol {
            return Ok(segs.iter().map(|s| s.val).sum());
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.err.total_cmp(&y.1.err))
            .map(|(i, _)| i)
            .unwrap();
        let Seg { a, b, .. } = segs.swap_remove(worst);
        let m = 0.5 * (a + b);
        let (v1, e1) = gk15(&f, a, m);
        let (v2, e2) = gk15(&f, m, b);
        segs.push(Seg {
            a,
            b: m,
            val: v1,
            err: e1,
        });
        segs.push(Seg {
            a: m,
            b,
            val: v2,
            err: e2,
        });
    }
    let achieved: f64 = segs.iter().map(|s| s.err).sum();
    if achieved <= tol {
        Ok(segs.iter().map(|s| s.val).sum())
    } else {
        Err(NumericError::QuadratureNoConvergence {
            achieved,
            requested: tol,
        })
    }
}

/// Bisection root finding for a continuous function with a sign change on
/// `[lo, hi]`. Converges unconditionally for monotone CDF-type inputs.
pub fn bisect<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, xtol: f64) -> Result<f64, NumericError> {
    let (mut lo, mut hi) = (lo, hi);
    let flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(NumericError::RootNotBracketed { lo, hi });
    }
    while hi - lo > xtol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Trapezoid rule on a (not necessarily uniform) grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}

/// Which tail of a distribution a trimmed mean conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    Lower,
    Upper,
}

/// Equal-weight mixture of two unit-variance normals. This is the family
/// of conditional outcome distributions produced by the synthetic model,
/// and the object trimmed means are taken over.
#[derive(Debug, Clone, Copy)]
pub struct NormalMixture {
    pub means: [f64; 2],
}

impl NormalMixture {
    pub fn new(m1: f64, m2: f64) -> Self {
        Self { means: [m1, m2] }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        0.5 * norm_cdf(y - self.means[0]) + 0.5 * norm_cdf(y - self.means[1])
    }

    pub fn pdf(&self, y: f64) -> f64 {
        0.5 * norm_pdf(y - self.means[0]) + 0.5 * norm_pdf(y - self.means[1])
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.means[0] + self.means[1])
    }

    /// Quantile by bisection; the mixture CDF is strictly increasing.
    pub fn quantile(&self, q: f64) -> Result<f64, NumericError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(NumericError::OutsideUnitInterval { value: q });
        }
        let mut lo = self.means[0].min(self.means[1]) - 10.0;
        let mut hi = self.means[0].max(self.means[1]) + 10.0;
        while self.cdf(lo) > q {
            lo -= 10.0;
        }
        while self.cdf(hi) < q {
            hi += 10.0;
        }
        bisect(|y| self.cdf(y) - q, lo, hi, 1e-10)
    }

    /// Mean of the tail carrying probability mass `share`. For the lower
    /// tail this is E[Y | Y <= F^{-1}(share)]; the upper tail conditions
    /// on Y > F^{-1}(1 - share). A share of one returns the plain mean.
    ///
    /// Computed by adaptive quadrature of y dF over the tail, with the
    /// half line mapped to the unit interval via y = q -/+ t/(1-t).
    pub fn tail_mean(&self, share: f64, tail: Tail) -> Result<f64, NumericError> {
        if !(share > 0.0 && share <= 1.0) {
            return Err(NumericError::OutsideUnitInterval { value: share });
        }
        if share >= 1.0 {
            return Ok(self.mean());
        }
        let q = match tail {
            Tail::Lower => self.quantile(share)?,
            Tail::Upper => self.quantile(1.0 - share)?,
        };
        let g = |t: f64| {
            if t >= 1.0 - 1e-14 {
                return 0.0;
            }
            let w = 1.0 - t;
            let y = match tail {
                Tail::Lower => q - t / w,
                Tail::Upper => q + t / w,
            };
            y * self.pdf(y) / (w * w)
        };
        let integral = integrate(g, 0.0, 1.0, 1e-10)?;
        Ok(integral / share)
    }
}
