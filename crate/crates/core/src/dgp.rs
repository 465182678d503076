//! Synthetic data generator: a normal-factor model with endogenous
//! treatment and sample selection.
//!
//! One latent factor theta drives both the treatment resistance
//! V = Phi(theta) and the selection index U_S = (theta + eps_S)/sqrt(2).
//! Treatment is D = 1{V <= Phi(Z)} for a standard normal instrument Z,
//! selection is S_d = 1{U_S <= delta0 + delta1 d}, and a binary type
//! T = 1{xi >= 0} switches the sign of the outcome loading on theta:
//!
//!   Y_d* = [T beta_{d,1} - (1 - T) beta_{d,0}] theta + eps
//!
//! with an additive independent standard normal disturbance eps. The
//! disturbance is what makes the conditional outcome laws at V = p the
//! unit-variance normal mixtures the oracle module evaluates; without it
//! those laws would be two-point distributions and every closed form in
//! [`crate::oracle`] would fail.

use crate::num::norm_ppf;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Structural parameters of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    /// Selection intercept delta0.
    pub delta0: f64,
    /// Selection shift of the treated arm delta1. Negative values produce
    /// data that violate selection monotonicity, on purpose; the
    /// diagnostics tests rely on that.
    pub delta1: f64,
    pub beta00: f64,
    pub beta01: f64,
    pub beta10: f64,
    pub beta11: f64,
}

impl DgpConfig {
    /// First simulation design: mild selection, large trimming share.
    pub fn panel_a() -> Self {
        Self {
            delta0: 0.75,
            delta1: 1.5,
            beta00: 0.1,
            beta01: 0.1,
            beta10: 0.1,
            beta11: 0.2,
        }
    }

    /// Second simulation design: severe selection, small trimming share.
    pub fn panel_b() -> Self {
        Self {
            delta0: 0.2,
            delta1: 2.0,
            beta00: 0.1,
            beta01: 0.1,
            beta10: 0.1,
            beta11: 0.2,
        }
    }

    /// Parameters of the bounds illustration (strongly heterogeneous
    /// returns for one latent type).
    pub fn illustration() -> Self {
        Self {
            delta0: 0.1,
            delta1: 0.4,
            beta00: 1.0,
            beta01: 1.0,
            beta10: 1.0,
            beta11: 5.0,
        }
    }
}

/// Latent state of one simulated row, retained for oracle-based testing.
/// Estimators must never read these fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentDraw {
    pub theta: f64,
    pub eps_s: f64,
    pub z: f64,
    pub xi: f64,
    pub t: u8,
    pub v: f64,
    pub u_s: f64,
    pub y0: f64,
    pub y1: f64,
    pub s0: u8,
    pub s1: u8,
}

/// One observed record. `y` is zero whenever the outcome is censored
/// (`s == 0`), mirroring Y = Y* S.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub y: f64,
    pub s: u8,
    pub d: u8,
    pub z: Vec<f64>,
}

/// Observed records plus optional latent truth and covariates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub rows: Vec<Row>,
    pub latent: Option<Vec<LatentDraw>>,
    pub x: Option<Vec<Vec<f64>>>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Draws `n` rows from the model. Normal variates are produced by the
/// inverse-CDF transform of ChaCha8 uniforms, five per row in a fixed
/// order (theta, eps_S, Z, xi, eps), so seeded output is stable across
/// platforms and releases.
pub fn generate(config: &DgpConfig, n: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = std_normal(&mut rng);
        let eps_s = std_normal(&mut rng);
        let z = std_normal(&mut rng);
        let xi = std_normal(&mut rng);
        let eps = std_normal(&mut rng);

        let t = u8::from(xi >= 0.0);
        let v = crate::num::norm_cdf(theta);
        let u_s = (theta + eps_s) / crate::num::SQRT_2;
        let tf = f64::from(t);
        let y0 = (tf * config.beta01 - (1.0 - tf) * config.beta00) * theta + eps;
        let y1 = (tf * config.beta11 - (1.0 - tf) * config.beta10) * theta + eps;
        let s0 = u8::from(u_s <= config.delta0);
        let s1 = u8::from(u_s <= config.delta0 + config.delta1);

        let d = u8::from(v <= crate::num::norm_cdf(z));
        let s = if d == 1 { s1 } else { s0 };
        let y_star = if d == 1 { y1 } else { y0 };
        let y = if s == 1 { y_star } else { 0.0 };

        rows.push(Row {
            y,
            s,
            d,
            z: vec![z],
        });
        latent.push(LatentDraw {
            theta,
            eps_s,
            z,
            xi,
            t,
            v,
            u_s,
            y0,
            y1,
            s0,
            s1,
        });
    }
    Sample {
        rows,
        latent: Some(latent),
        x: None,
    }
}

fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    // gen() on f64 yields a uniform in [0, 1); shift by half an ulp-scale
    // step to keep the quantile finite.
    let u: f64 = rng.gen();
    norm_ppf(u.clamp(1e-300, 1.0 - 1e-16))
}

/// Writes the sample as CSV with header `y,s,d,z[,x1..xq]`, appending the
/// latent columns `theta,v,s0,s1,y0,y1` when requested.
pub fn write_csv<W: Write>(sample: &Sample, with_latent: bool, out: &mut W) -> std::io::Result<()> {
    let nz = sample.rows.first().map_or(1, |r| r.z.len());
    let nx = sample
        .x
        .as_ref()
        .and_then(|x| x.first())
        .map_or(0, Vec::len);
    let mut header = String::from("y,s,d");
    if nz == 1 {
        header.push_str(",z");
    } else {
        for j in 1..=nz {
            header.push_str(&format!(",z{j}"));
        }
    }
    for j in 1..=nx {
        header.push_str(&format!(",x{j}"));
    }
    if with_latent {
        header.push_str(",theta,v,s0,s1,y0,y1");
    }
    writeln!(out, "{header}")?;
    for (i, row) in sample.rows.iter().enumerate() {
        let mut line = format!("{},{},{}", row.y, row.s, row.d);
        for z in &row.z {
            line.push_str(&format!(",{z}"));
        }
        if let Some(x) = &sample.x {
            for v in &x[i] {
                line.push_str(&format!(",{v}"));
            }
        }
        if with_latent {
            let l = &sample.latent.as_ref().expect("latent truth requested")[i];
            line.push_str(&format!(
                ",{},{},{},{},{},{}",
                l.theta, l.v, l.s0, l.s1, l.y0, l.y1
            ));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a sample from CSV with header `y,s,d,z[,x1..xq]` (multiple `z`
/// columns are accepted as `z1..zr`). Latent columns are ignored.
pub fn read_csv<R: std::io::BufRead>(input: R) -> Result<Sample, CsvError> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(CsvError::Empty)?.map_err(CsvError::Io)?;
    let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let find = |name: &str| cols.iter().position(|c| c == name);
    let iy = find("y").ok_or_else(|| CsvError::MissingColumn("y".into()))?;
    let is = find("s").ok_or_else(|| CsvError::MissingColumn("s".into()))?;
    let id = find("d").ok_or_else(|| CsvError::MissingColumn("d".into()))?;
    let z_cols: Vec<usize> = if let Some(iz) = find("z") {
        vec![iz]
    } else {
        let mut zc = Vec::new();
        for j in 1.. {
            match find(&format!("z{j}")) {
                Some(i) => zc.push(i),
                None => break,
            }
        }
        if zc.is_empty() {
            return Err(CsvError::MissingColumn("z".into()));
        }
        zc
    };
    let mut x_cols = Vec::new();
    for j in 1.. {
        match find(&format!("x{j}")) {
            Some(i) => x_cols.push(i),
            None => break,
        }
    }

    let mut rows = Vec::new();
    let mut xs = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(CsvError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<f64, CsvError> {
            fields
                .get(i)
                .ok_or(CsvError::ShortRow { line: lineno + 2 })?
                .trim()
                .parse()
                .map_err(|_| CsvError::BadNumber { line: lineno + 2 })
        };
        let y = get(iy)?;
        let s = get(is)? as u8;
        let d = get(id)? as u8;
        if s > 1 || d > 1 {
            return Err(CsvError::BadIndicator { line: lineno + 2 });
        }
        let z = z_cols.iter().map(|&i| get(i)).collect::<Result<_, _>>()?;
        if !x_cols.is_empty() {
            xs.push(x_cols.iter().map(|&i| get(i)).collect::<Result<_, _>>()?);
        }
        rows.push(Row { y, s, d, z });
    }
    Ok(Sample {
        rows,
        latent: None,
        x: if xs.is_empty() { None } else { Some(xs) },
    })
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("input is empty")]
    Empty,
    #[error(transparent)]
    Io(std::io::Error),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("line {line}: too few fields")]
    ShortRow { line: usize },
    #[error("line {line}: unparseable number")]
    BadNumber { line: usize },
    #[error("line {line}: s and d must be 0 or 1")]
    BadIndicator { line: usize },
}
