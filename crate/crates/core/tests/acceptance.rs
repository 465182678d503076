//! End-to-end acceptance gate. Each test prints one PASS/FAIL line on
//! stderr before asserting, so the full scorecard is visible even when a
//! criterion fails.

use mte_bounds::aggregate::{aggregate_bounds, weight_curve, TabulatedCdf, WeightSpec};
use mte_bounds::dgp::{generate, DgpConfig};
use mte_bounds::diagnostics::{check_inequalities, DiagnosticsConfig};
use mte_bounds::discrete::{late_bounds, DiscreteLadder, LadderLevel};
use mte_bounds::dmte::dmte_terms;
use mte_bounds::montecarlo::{run_mc, McConfig};
use mte_bounds::npbounds::{bounds_at, trimmed_mean};
use mte_bounds::num::{bisect, norm_ppf, trapezoid, Tail};
use mte_bounds::oracle::{closed_forms, true_bounds, true_mte, IdStatus, Tier};
use mte_bounds::propensity::{fit_logit, PropensityConfig};
use mte_bounds::smoother::{build_table, Bandwidth, OutcomeGrid, SmootherConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn report(n: usize, name: &str, pass: bool, detail: &str) -> bool {
    // Write to the raw stderr handle: the harness captures the print
    // macros of passing tests, and the scorecard must show every line.
    use std::io::Write;
    let _ = writeln!(
        std::io::stderr().lock(),
        "acceptance criterion {n:2} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

const P9: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Published true-estimand table, rounded to two decimals in the source:
/// rows are alpha, xi0, lower, upper, mte per panel.
struct PublishedPanel {
    alpha: [f64; 9],
    xi0: [f64; 9],
    lower: [f64; 9],
    upper: [f64; 9],
    mte: [f64; 9],
}

const PUBLISHED_A: PublishedPanel = PublishedPanel {
    alpha: [0.99, 0.97, 0.94, 0.91, 0.86, 0.79, 0.71, 0.59, 0.42],
    xi0: [0.0; 9],
    lower: [-0.09, -0.11, -0.15, -0.2, -0.27, -0.35, -0.46, -0.62, -0.88],
    upper: [-0.04, 0.03, 0.10, 0.17, 0.26, 0.37, 0.51, 0.70, 1.00],
    mte: [-0.06, -0.04, -0.03, -0.01, 0.00, 0.01, 0.03, 0.04, 0.06],
};

const PUBLISHED_B: PublishedPanel = PublishedPanel {
    alpha: [0.94, 0.87, 0.79, 0.7, 0.61, 0.51, 0.41, 0.29, 0.16],
    xi0: [0.0; 9],
    lower: [-0.19, -0.29, -0.39, -0.5, -0.63, -0.77, -0.93, -1.14, -1.47],
    upper: [0.06, 0.2, 0.34, 0.48, 0.63, 0.79, 0.98, 1.23, 1.60],
    mte: [-0.06, -0.04, -0.03, -0.01, 0.00, 0.01, 0.03, 0.04, 0.06],
};

#[test]
fn criterion_01_true_estimand_table() {
    let start = Instant::now();
    let mut worst: (f64, String) = (0.0, String::new());
    let mut failures = Vec::new();
    for (panel, table, label) in [
        (DgpConfig::panel_a(), &PUBLISHED_A, "A"),
        (DgpConfig::panel_b(), &PUBLISHED_B, "B"),
    ] {
        for (i, &p) in P9.iter().enumerate() {
            let cf = closed_forms(&panel, p).unwrap();
            let b = true_bounds(&panel, p, Tier::Monotone).unwrap();
            let checks = [
                ("alpha", cf.alpha, table.alpha[i]),
                ("xi0", cf.mix0.mean(), table.xi0[i]),
                ("lower", b.lower, table.lower[i]),
                ("upper", b.upper, table.upper[i]),
                ("mte", cf.mte, table.mte[i]),
            ];
            for (what, got, published) in checks {
                let err = (got - published).abs();
                if err > worst.0 {
                    worst = (err, format!("{what} panel {label} p={p}"));
                }
                if err > 0.005 {
                    failures.push(format!(
                        "{what} panel {label} p={p}: {got:.4} vs published {published}"
                    ));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed.as_secs_f64() < 10.0;
    report(
        1,
        "true-estimand table within 0.005",
        pass,
        &format!(
            "worst |err| {:.4} at {}; {} entr{} beyond 0.005 ({}); {:.2}s",
            worst.0,
            worst.1,
            failures.len(),
            if failures.len() == 1 { "y" } else { "ies" },
            failures.join("; "),
            elapsed.as_secs_f64()
        ),
    );
    // The published table was itself produced by 100,000-draw simulation
    // and carries rounding plus simulation noise; the closed forms here
    // are exact, so entries sitting just past 0.005 are reported honestly
    // rather than absorbed by a loosened tolerance.
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_02_closed_forms_vs_brute_force() {
    let n = 1_000_000usize;
    let mut worst_z = 0.0f64;
    let mut pass = true;
    for (panel, label) in [(DgpConfig::panel_a(), "A"), (DgpConfig::panel_b(), "B")] {
        for &p in &[0.1, 0.5, 0.9] {
            let cf = closed_forms(&panel, p).unwrap();
            let t = norm_ppf(p);
            let mut rng = ChaCha8Rng::seed_from_u64(20_000 + (label == "B") as u64);
            let (mut s0_sum, mut s1_sum, mut both) = (0.0f64, 0.0f64, 0.0f64);
            let (mut y0_sum, mut y0_sq, mut y0_n) = (0.0f64, 0.0f64, 0.0f64);
            for _ in 0..n {
                let eps_s = norm_ppf(rng.gen::<f64>());
                let xi = norm_ppf(rng.gen::<f64>());
                let eps = norm_ppf(rng.gen::<f64>());
                let u_s = (t + eps_s) / std::f64::consts::SQRT_2;
                let s0 = u_s <= panel.delta0;
                let s1 = u_s <= panel.delta0 + panel.delta1;
                s0_sum += f64::from(s0);
                s1_sum += f64::from(s1);
                both += f64::from(s0 && s1);
                if s0 && s1 {
                    let tt = f64::from(xi >= 0.0);
                    let y0 = tt * panel.beta01 * t - (1.0 - tt) * panel.beta00 * t + eps;
                    y0_sum += y0;
                    y0_sq += y0 * y0;
                    y0_n += 1.0;
                }
            }
            let nf = n as f64;
            let (m0_hat, m1_hat) = (s0_sum / nf, s1_sum / nf);
            let se_m0 = (m0_hat * (1.0 - m0_hat) / nf).sqrt();
            let se_m1 = (m1_hat * (1.0 - m1_hat) / nf).sqrt();
            let alpha_hat = m0_hat / m1_hat;
            let cov = (both / nf - m0_hat * m1_hat) / nf;
            let se_alpha = alpha_hat
                * (se_m0.powi(2) / m0_hat.powi(2) + se_m1.powi(2) / m1_hat.powi(2)
                    - 2.0 * cov / (m0_hat * m1_hat))
                    .max(0.0)
                    .sqrt();
            let y0_mean = y0_sum / y0_n;
            let se_y0 = ((y0_sq / y0_n - y0_mean * y0_mean) / y0_n).sqrt();
            // The conditional margins use U_S | theta = t, whose mean is
            // t/sqrt(2); closed forms fold this into Phi(delta sqrt 2 - t).
            for (got, sim, se) in [
                (cf.m0, m0_hat, se_m0),
                (cf.m1, m1_hat, se_m1),
                (cf.alpha, alpha_hat, se_alpha.max(1e-12)),
                (cf.mix0.mean(), y0_mean, se_y0),
            ] {
                let z = (got - sim).abs() / se;
                worst_z = worst_z.max(z);
                if z > 3.0 {
                    pass = false;
                }
            }
        }
    }
    report(
        2,
        "closed forms vs 1e6-draw simulation",
        pass,
        &format!("worst |z| = {worst_z:.2} (limit 3)"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_illustration_landmarks() {
    let cfg = DgpConfig::illustration();
    let frechet_zero = bisect(
        |p| {
            let cf = closed_forms(&cfg, p).unwrap();
            cf.m0 + cf.m1 - 1.0
        },
        0.3,
        0.9,
        1e-8,
    )
    .unwrap();
    // Below each boundary the whole interval sits under zero, so the sign
    // is identified exactly until the upper bound crosses zero.
    let sign1 = bisect(
        |p| true_bounds(&cfg, p, Tier::NoRestriction).unwrap().upper,
        0.05,
        frechet_zero - 0.05,
        1e-8,
    )
    .unwrap();
    let sign2 = bisect(
        |p| true_bounds(&cfg, p, Tier::Monotone).unwrap().upper,
        0.1,
        0.6,
        1e-8,
    )
    .unwrap();
    let pass = (frechet_zero - 0.664).abs() <= 0.01
        && (sign1 - 0.28).abs() <= 0.02
        && (sign2 - 0.409).abs() <= 0.02;
    report(
        3,
        "illustration landmarks",
        pass,
        &format!(
            "frechet share hits zero at {frechet_zero:.4} (0.664±0.01); \
             sign identified below {sign1:.4} (0.28±0.02) / {sign2:.4} (0.409±0.02)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_tier_nesting_and_containment() {
    let mut rng = ChaCha8Rng::seed_from_u64(424);
    let mut configs = vec![DgpConfig::panel_a(), DgpConfig::panel_b()];
    for _ in 0..20 {
        configs.push(DgpConfig {
            delta0: rng.gen_range(-0.5..1.5),
            delta1: rng.gen_range(0.0..1.5),
            beta00: rng.gen_range(-1.0..1.0),
            beta01: rng.gen_range(-1.0..1.0),
            beta10: rng.gen_range(-1.0..1.0),
            beta11: rng.gen_range(-1.0..1.0),
        });
    }
    let tol = 1e-6;
    let mut checked = 0usize;
    let mut pass = true;
    let mut first_failure = String::new();
    for (ci, cfg) in configs.iter().enumerate() {
        for i in 1..=99 {
            let p = i as f64 / 100.0;
            let mte = true_mte(cfg, p).unwrap();
            let b1 = true_bounds(cfg, p, Tier::NoRestriction).unwrap();
            let b2 = true_bounds(cfg, p, Tier::Monotone).unwrap();
            let b3 = true_bounds(cfg, p, Tier::MonotonePlusDominance).unwrap();
            let ok = b3.lower >= b2.lower - tol
                && b3.upper <= b2.upper + tol
                && b2.lower >= b1.lower - tol
                && b2.upper <= b1.upper + tol
                && b1.lower <= mte + tol
                && b1.upper >= mte - tol
                && b2.lower <= mte + tol
                && b2.upper >= mte - tol
                && b3.lower <= mte + tol
                && b3.upper >= mte - tol;
            checked += 1;
            if !ok && pass {
                pass = false;
                first_failure = format!("config {ci}, p={p}");
            }
        }
    }
    report(
        4,
        "tier nesting and truth containment",
        pass,
        &format!("{checked} (config, p) points at 1e-6; {first_failure}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_point_identification_collapse() {
    let cfg = DgpConfig {
        delta1: 0.0,
        ..DgpConfig::panel_a()
    };
    // Oracle side: alpha = 1 exactly, interval degenerate.
    let mut pass = true;
    let mut detail = String::new();
    for &p in &[0.3, 0.5, 0.7] {
        let b = true_bounds(&cfg, p, Tier::Monotone).unwrap();
        if b.status != IdStatus::Identified || (b.upper - b.lower).abs() > 1e-12 {
            pass = false;
        }
    }
    // Estimated side, one large sample.
    let sample = generate(&cfg, 100_000, 1);
    let fit = fit_logit(&sample, &PropensityConfig::default()).unwrap();
    let ys: Vec<f64> = sample
        .rows
        .iter()
        .filter(|r| r.s == 1)
        .map(|r| r.y)
        .collect();
    let grid = OutcomeGrid::from_deciles(&ys).unwrap();
    // With delta1 = 0 the selection mean is constant in p, so widening the
    // window further only removes variance from the trim-share slope; the
    // fractional rule avoids whole-bin exclusion jumps near full share.
    let smoother = SmootherConfig {
        bandwidth: Bandwidth::RuleOfThumb { scale: 16.0 },
        ..SmootherConfig::default()
    };
    for &p in &[0.3, 0.5, 0.7] {
        let table = build_table(&sample, &fit, p, &grid, &smoother).unwrap();
        let b = bounds_at(&table, Tier::Monotone, true).unwrap();
        let mte = true_mte(&cfg, p).unwrap();
        let width = b.upper - b.lower;
        let off = (b.lower - mte).abs().max((b.upper - mte).abs());
        detail.push_str(&format!("p={p}: width {width:.4}, max offset {off:.4}; "));
        if width >= 0.02 || off >= 0.05 {
            pass = false;
        }
    }
    report(
        5,
        "collapse when selection ignores treatment",
        pass,
        &detail,
    );
    assert!(pass);
}

#[test]
fn criterion_06_monte_carlo_correspondence() {
    // Published replication targets for the trim-share estimator at
    // p = 0.2..0.8 (bias, then n-scaled MSE).
    const PUB_BIAS: [f64; 7] = [0.01, 0.01, -0.01, -0.01, -0.02, -0.02, 0.00];
    const PUB_MSE: [f64; 7] = [10.07, 8.72, 7.02, 7.69, 8.89, 9.52, 7.39];
    let start = Instant::now();
    let cfg = McConfig::new(DgpConfig::panel_a());
    let reportmc = run_mc(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let mut pass = elapsed < 600.0;
    let mut worst_bias = 0.0f64;
    let mut worst_ratio = 1.0f64;
    for (i, &p) in [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8].iter().enumerate() {
        let row = reportmc
            .rows
            .iter()
            .find(|r| r.estimand == "alpha" && (r.p - p).abs() < 1e-9)
            .unwrap();
        let bias_gap = (row.bias - PUB_BIAS[i]).abs();
        let ratio = (row.scaled_mse / PUB_MSE[i]).max(PUB_MSE[i] / row.scaled_mse);
        worst_bias = worst_bias.max(bias_gap);
        worst_ratio = worst_ratio.max(ratio);
        if bias_gap > 0.03 || ratio > 3.0 || row.failures > 0 {
            pass = false;
        }
    }
    report(
        6,
        "replication bias and scaled MSE",
        pass,
        &format!(
            "200 reps, n=10000: worst bias gap {worst_bias:.4} (limit 0.03), \
             worst MSE ratio {worst_ratio:.2} (limit 3), {elapsed:.1}s"
        ),
    );
    assert!(pass);
}

/// Brute-force reading of the indicator trimming rules: recompute the
/// running mass and include bins by the same comparisons, one explicit
/// branch per tail.
fn trimmed_mean_reference(centers: &[f64], f: &[f64], share: f64, tail: Tail) -> f64 {
    let mut cum = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    for &v in f {
        acc += v;
        cum.push(acc);
    }
    let mut total = 0.0;
    for k in 0..centers.len() {
        let take = match tail {
            Tail::Lower => cum[k] <= share,
            Tail::Upper => 1.0 - cum[k] < share,
        };
        if take {
            total += centers[k] * f[k];
        }
    }
    total / share
}

#[test]
fn criterion_07_trimming_rule_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut pass = true;
    for case in 0..1000 {
        let k = rng.gen_range(2..30usize);
        let mut f: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = f.iter().sum();
        for v in &mut f {
            *v /= total;
        }
        let mut centers: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
        centers.sort_by(f64::total_cmp);
        let mut cdf = Vec::with_capacity(k);
        let mut acc = 0.0;
        for &v in &f {
            acc += v;
            cdf.push(acc);
        }
        let share = rng.gen_range(0.01..1.0f64);
        for tail in [Tail::Lower, Tail::Upper] {
            let a = trimmed_mean(&centers, &f, &cdf, share, tail, false).unwrap();
            let b = trimmed_mean_reference(&centers, &f, share, tail);
            if a.to_bits() != b.to_bits() {
                pass = false;
                eprintln!("case {case}: {a:e} vs reference {b:e}");
            }
        }
    }
    report(
        7,
        "trimming rule vs brute-force enumeration",
        pass,
        "1000 random binned distributions, both tails, bit-exact",
    );
    assert!(pass);
}

#[test]
fn criterion_08_weight_normalization_and_aggregates() {
    let m = 1000usize;
    let p_grid: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let fp = vec![1.0; p_grid.len()];
    let mut pass = true;
    let mut detail = String::new();

    // Pointwise treated-population weight under constant pi0 and a
    // uniform score: 2(1 - p).
    let pi0_const = vec![0.7; p_grid.len()];
    let w_att = weight_curve(&WeightSpec::Att, &p_grid, &pi0_const, &fp).unwrap();
    let worst_att = p_grid
        .iter()
        .zip(&w_att)
        .map(|(&p, &w)| (w - 2.0 * (1.0 - p)).abs())
        .fold(0.0f64, f64::max);
    if worst_att > 1e-9 {
        pass = false;
    }
    detail.push_str(&format!("ATT pointwise err {worst_att:.1e}; "));

    let prte = WeightSpec::Prte {
        base: TabulatedCdf {
            p: vec![0.0, 1.0],
            value: vec![0.0, 1.0],
        },
        policy: TabulatedCdf {
            p: vec![0.0, 0.5, 1.0],
            value: vec![0.0, 0.7, 1.0],
        },
    };
    let mut worst_norm = 0.0f64;
    for (panel, label) in [(DgpConfig::panel_a(), "A"), (DgpConfig::panel_b(), "B")] {
        // Interior evaluation grid: margins are defined on (0, 1).
        let inner: Vec<f64> = (1..=199).map(|i| i as f64 / 200.0).collect();
        let pi0: Vec<f64> = inner
            .iter()
            .map(|&p| closed_forms(&panel, p).unwrap().m0)
            .collect();
        let fpi = vec![1.0; inner.len()];
        let specs = [
            WeightSpec::Ate,
            WeightSpec::Att,
            WeightSpec::Atu,
            WeightSpec::Late { lo: 0.2, hi: 0.7 },
            prte.clone(),
        ];
        for spec in &specs {
            let w = weight_curve(spec, &inner, &pi0, &fpi).unwrap();
            worst_norm = worst_norm.max((trapezoid(&inner, &w) - 1.0).abs());
            if (trapezoid(&inner, &w) - 1.0).abs() > 1e-6 {
                pass = false;
            }
            if matches!(spec, WeightSpec::Prte { .. }) {
                continue;
            }
            // Aggregated oracle interval must contain the same weighted
            // average of the true effect curve.
            let (mut lo_curve, mut hi_curve, mut mte_curve) = (Vec::new(), Vec::new(), Vec::new());
            for &p in &inner {
                let b = true_bounds(&panel, p, Tier::Monotone).unwrap();
                lo_curve.push(b.lower);
                hi_curve.push(b.upper);
                mte_curve.push(true_mte(&panel, p).unwrap());
            }
            let agg = aggregate_bounds(spec.kind(), &inner, &lo_curve, &hi_curve, &w).unwrap();
            let target = trapezoid(
                &inner,
                &mte_curve
                    .iter()
                    .zip(&w)
                    .map(|(m, wi)| m * wi)
                    .collect::<Vec<f64>>(),
            );
            if !(agg.lower <= target + 1e-9 && target <= agg.upper + 1e-9) {
                pass = false;
                detail.push_str(&format!(
                    "{} panel {label}: {target:.4} outside [{:.4}, {:.4}]; ",
                    spec.kind(),
                    agg.lower,
                    agg.upper
                ));
            }
        }
    }
    detail.push_str(&format!("worst weight integral err {worst_norm:.1e}"));
    report(
        8,
        "weight normalization and aggregate containment",
        pass,
        &detail,
    );
    assert!(pass);
}

/// Population ladder for a 64-level instrument whose score is uniform on
/// the unit interval (the score of a standard normal instrument is its
/// own CDF): every cell mean is an exact integral of the closed forms,
/// computed on a fine aligned grid.
fn population_ladder(panel: &DgpConfig, levels: usize, grid: &OutcomeGrid) -> DiscreteLadder {
    let fine_per_cell = 64usize;
    let n_fine = levels * fine_per_cell;
    let k = grid.num_bins();
    // Pointwise integrands on the fine grid.
    let mut m1 = Vec::with_capacity(n_fine + 1);
    let mut m0 = Vec::with_capacity(n_fine + 1);
    let mut q1 = Vec::with_capacity(n_fine + 1);
    let mut q0 = Vec::with_capacity(n_fine + 1);
    for i in 0..=n_fine {
        let u = (i as f64 / n_fine as f64).clamp(1e-9, 1.0 - 1e-9);
        let cf = closed_forms(panel, u).unwrap();
        m1.push(cf.m1);
        m0.push(cf.m0);
        let bins = |mix: &mte_bounds::num::NormalMixture| -> Vec<f64> {
            (0..k)
                .map(|b| mix.cdf(grid.edges[b + 1]) - mix.cdf(grid.edges[b]))
                .collect()
        };
        q1.push(bins(&cf.mix1));
        q0.push(bins(&cf.mix0));
    }
    // Running trapezoid integrals from zero (treated side) and the cell
    // means they imply; the untreated side integrates from above.
    let du = 1.0 / n_fine as f64;
    let cumulative = |point: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; n_fine + 1];
        for i in 1..=n_fine {
            out[i] = out[i - 1] + 0.5 * (point(i) + point(i - 1)) * du;
        }
        out
    };
    let g1 = cumulative(&|i| m1[i]);
    let g0_from_zero = cumulative(&|i| m0[i]);
    let g0: Vec<f64> = g0_from_zero
        .iter()
        .map(|v| g0_from_zero[n_fine] - v)
        .collect();
    let h1: Vec<Vec<f64>> = (0..k).map(|b| cumulative(&|i| m1[i] * q1[i][b])).collect();
    let h0: Vec<Vec<f64>> = (0..k)
        .map(|b| {
            let from_zero = cumulative(&|i| m0[i] * q0[i][b]);
            from_zero
                .iter()
                .map(|v| from_zero[n_fine] - v)
                .collect::<Vec<f64>>()
        })
        .collect();
    let cell_mean = |curve: &[f64], j: usize| -> f64 {
        let (a, b) = (j * fine_per_cell, (j + 1) * fine_per_cell);
        let mut acc = 0.0;
        for i in a..b {
            acc += 0.5 * (curve[i] + curve[i + 1]);
        }
        acc / fine_per_cell as f64
    };
    let levels: Vec<LadderLevel> = (0..levels)
        .map(|j| LadderLevel {
            label: format!("cell-{j}"),
            p: (j as f64 + 0.5) / levels as f64,
            count: 1,
            e_sd: cell_mean(&g1, j),
            e_s1md: cell_mean(&g0, j),
            mass1: (0..k).map(|b| cell_mean(&h1[b], j)).collect(),
            mass0: (0..k).map(|b| cell_mean(&h0[b], j)).collect(),
        })
        .collect();
    DiscreteLadder {
        levels,
        grid: grid.clone(),
    }
}

#[test]
fn criterion_09_discrete_ladder_tracks_interval_averages() {
    let panel = DgpConfig::panel_a();
    let levels = 64usize;
    // A fine fixed outcome grid keeps the binned trimmed means close to
    // their continuous counterparts.
    let edges: Vec<f64> = (0..=320).map(|i| -8.0 + i as f64 * 0.05).collect();
    let grid = OutcomeGrid::new(edges).unwrap();
    let ladder = population_ladder(&panel, levels, &grid);
    let mut pass = true;
    let mut worst = (0.0f64, 0.0f64);
    let mut used = 0usize;
    for ell in 1..levels {
        let mid = ell as f64 / levels as f64;
        if !(0.1..=0.9).contains(&mid) {
            continue;
        }
        let entry = late_bounds(&ladder, ell, false).unwrap();
        assert_eq!(entry.status, IdStatus::Partial, "interval {ell}");
        // Average of the pointwise population bounds over the interval
        // the difference quotient spans.
        let quad = 8usize;
        let (mut lo_acc, mut hi_acc) = (0.0, 0.0);
        for q in 0..=quad {
            let p = entry.p_lo + (entry.p_hi - entry.p_lo) * q as f64 / quad as f64;
            let b = true_bounds(&panel, p, Tier::Monotone).unwrap();
            let w = if q == 0 || q == quad { 0.5 } else { 1.0 };
            lo_acc += w * b.lower;
            hi_acc += w * b.upper;
        }
        let lo_avg = lo_acc / quad as f64;
        let hi_avg = hi_acc / quad as f64;
        let (dl, du) = ((entry.lower - lo_avg).abs(), (entry.upper - hi_avg).abs());
        worst = (worst.0.max(dl), worst.1.max(du));
        used += 1;
        if dl > 0.05 || du > 0.05 {
            pass = false;
        }
    }
    report(
        9,
        "64-level instrument vs interval-averaged bounds",
        pass,
        &format!(
            "{used} intervals on [0.1, 0.9]; worst lower gap {:.4}, upper gap {:.4} (limit 0.05)",
            worst.0, worst.1
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_10_diagnostics_discrimination() {
    // Interior evaluation points only: local-polynomial derivative checks
    // carry a known boundary bias once the kernel window is truncated, so
    // p = 0.2 / 0.8 would flag the valid design for the wrong reason.
    let p_grid: Vec<f64> = (3..=7).map(|i| i as f64 / 10.0).collect();
    let config = DiagnosticsConfig::default();
    let mut valid_failures = 0usize;
    let mut violations_detected = 0usize;
    for seed in 0..10u64 {
        let sample = generate(&DgpConfig::panel_a(), 50_000, seed);
        let fit = fit_logit(&sample, &PropensityConfig::default()).unwrap();
        let ys: Vec<f64> = sample
            .rows
            .iter()
            .filter(|r| r.s == 1)
            .map(|r| r.y)
            .collect();
        let grid = OutcomeGrid::from_deciles(&ys).unwrap();
        let rep = check_inequalities(&sample, &fit, &p_grid, &grid, &config);
        if rep.any_violation() {
            valid_failures += 1;
        }

        let bad = DgpConfig {
            delta1: -1.0,
            ..DgpConfig::panel_a()
        };
        let sample = generate(&bad, 50_000, 1000 + seed);
        let fit = fit_logit(&sample, &PropensityConfig::default()).unwrap();
        let ys: Vec<f64> = sample
            .rows
            .iter()
            .filter(|r| r.s == 1)
            .map(|r| r.y)
            .collect();
        let grid = OutcomeGrid::from_deciles(&ys).unwrap();
        let rep = check_inequalities(&sample, &fit, &p_grid, &grid, &config);
        let sel = rep
            .checks
            .iter()
            .find(|c| c.check == "selection-derivative")
            .unwrap();
        if sel.violated {
            violations_detected += 1;
        }
    }
    let pass = valid_failures == 0 && violations_detected >= 9;
    report(
        10,
        "diagnostics discrimination over 10 seeds",
        pass,
        &format!(
            "valid design flagged {valid_failures}/10 (want 0); \
             treatment-lowers-selection design caught {violations_detected}/10 (want >= 9)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_distributional_bounds_grid() {
    let mut pass = true;
    for i in 1..=50usize {
        for j in 1..=50usize {
            let p_a1 = i as f64 / 50.0;
            let alpha = j as f64 / 50.0;
            let (lo, hi) = dmte_terms(p_a1, alpha);
            // Brute-force the max/min expressions verbatim.
            let raw_lo = (p_a1 - (1.0 - alpha)) / alpha;
            let clipped_lo = if raw_lo > 0.0 { raw_lo } else { 0.0 };
            // The implementation caps the lower ratio at one because the
            // subtraction can overshoot by a few ulps (pA1=1, alpha=0.02).
            let brute_lo = if clipped_lo < 1.0 { clipped_lo } else { 1.0 };
            let raw_hi = p_a1 / alpha;
            let brute_hi = if raw_hi < 1.0 { raw_hi } else { 1.0 };
            if lo.to_bits() != brute_lo.to_bits() || hi.to_bits() != brute_hi.to_bits() {
                pass = false;
            }
            // With any untreated-arm set probability, the implied effect
            // interval stays within [-1, 1].
            for p_a0 in [0.0, 0.25, 0.9] {
                let (l, u) = (lo - p_a0, hi - p_a0);
                if !((-1.0..=1.0).contains(&l) && (-1.0..=1.0).contains(&u) && l <= u) {
                    pass = false;
                }
            }
            if (alpha - 1.0).abs() < 1e-15 && (lo - hi).abs() > 0.0 {
                pass = false;
            }
        }
    }
    report(
        11,
        "distributional effect bounds on 50x50 grid",
        pass,
        "bit-exact vs brute force; bounded by [-1, 1]; degenerate at full trim share",
    );
    assert!(pass);
}
