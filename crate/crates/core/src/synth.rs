//! Synthetic regression designs with known conditional laws.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::transform::tau;
use crate::{Error, Matrix, Result, TghParams};

/// Closed-form curves on `[0, 1]`, addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Curve {
    /// `sin(2 pi x)`
    Sin2Pi,
    /// `0.5 + 0.4 cos(2 pi x)^2`
    Cos2Band,
    /// `0.8 (2x - 1)`
    SkewLinear,
    /// `0.3 x^2`
    TailQuadratic,
    /// `3 + 2x`
    Dof3To5,
    /// `3 + 10x`
    Dof3To13,
    Const(f64),
}

impl Curve {
    pub const NAMED: [Curve; 6] = [
        Curve::Sin2Pi,
        Curve::Cos2Band,
        Curve::SkewLinear,
        Curve::TailQuadratic,
        Curve::Dof3To5,
        Curve::Dof3To13,
    ];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Curve::Sin2Pi => (2.0 * PI * x).sin(),
            Curve::Cos2Band => 0.5 + 0.4 * (2.0 * PI * x).cos().powi(2),
            Curve::SkewLinear => 0.8 * (2.0 * x - 1.0),
            Curve::TailQuadratic => 0.3 * x * x,
            Curve::Dof3To5 => 3.0 + 2.0 * x,
            Curve::Dof3To13 => 3.0 + 10.0 * x,
            Curve::Const(c) => c,
        }
    }
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Curve::Sin2Pi => f.write_str("sin_2pi"),
            Curve::Cos2Band => f.write_str("cos2_band"),
            Curve::SkewLinear => f.write_str("skew_linear"),
            Curve::TailQuadratic => f.write_str("tail_quadratic"),
            Curve::Dof3To5 => f.write_str("dof_3_5"),
            Curve::Dof3To13 => f.write_str("dof_3_13"),
            Curve::Const(c) => write!(f, "const:{c}"),
        }
    }
}

impl std::str::FromStr for Curve {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(v) = s.strip_prefix("const:") {
            let c: f64 = v
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad constant curve `{s}`")))?;
            return Ok(Curve::Const(c));
        }
        Curve::NAMED
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown curve `{s}`")))
    }
}

impl TryFrom<String> for Curve {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Curve> for String {
    fn from(c: Curve) -> Self {
        c.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GAndHFunctions {
    pub mu: Curve,
    pub sigma: Curve,
    pub g: Curve,
    pub h: Curve,
}

impl Default for GAndHFunctions {
    fn default() -> Self {
        Self {
            mu: Curve::Sin2Pi,
            sigma: Curve::Cos2Band,
            g: Curve::SkewLinear,
            h: Curve::TailQuadratic,
        }
    }
}

impl GAndHFunctions {
    pub fn params_at(&self, x: f64) -> Result<TghParams> {
        TghParams::new(
            self.mu.eval(x),
            self.sigma.eval(x),
            self.g.eval(x),
            self.h.eval(x),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentTFunctions {
    pub mu: Curve,
    pub sigma: Curve,
    pub nu: Curve,
}

impl Default for StudentTFunctions {
    fn default() -> Self {
        Self {
            mu: Curve::Sin2Pi,
            sigma: Curve::Cos2Band,
            nu: Curve::Dof3To5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl StudentTParams {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "student-t needs finite mu and sigma > 0, got ({mu}, {sigma})"
            )));
        }
        if !(nu > 0.0) {
            return Err(Error::InvalidParameter(format!("nu = {nu} must be positive")));
        }
        Ok(Self { mu, sigma, nu })
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let t = (y - self.mu) / self.sigma;
        let nu = self.nu;
        libm::lgamma(0.5 * (nu + 1.0)) - libm::lgamma(0.5 * nu)
            - 0.5 * (nu * PI).ln()
            - self.sigma.ln()
            - 0.5 * (nu + 1.0) * (t * t / nu).ln_1p()
    }
}

impl StudentTFunctions {
    pub fn params_at(&self, x: f64) -> Result<StudentTParams> {
        StudentTParams::new(self.mu.eval(x), self.sigma.eval(x), self.nu.eval(x))
    }
}

/// Per-row parameters of the law each target was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    GAndH(Vec<TghParams>),
    StudentT(Vec<StudentTParams>),
}

impl Truth {
    /// Exact log density of `y[i]` under row `i`'s generating law.
    pub fn log_density(&self, i: usize, y: f64, cfg: &crate::InverseSolverConfig) -> Result<f64> {
        match self {
            Truth::GAndH(p) => crate::transform::log_density(y, &p[i], cfg),
            Truth::StudentT(p) => Ok(p[i].log_density(y)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub feature_names: Vec<String>,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub truth: Truth,
    pub seed: u64,
    /// Human-readable description of the generating curves.
    pub description: serde_json::Value,
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    Ok(())
}

/// `x ~ U(0,1)`, `y = mu(x) + sigma(x) tau_{g(x),h(x)}(Z)`.
pub fn generate_gandh(n: usize, fns: &GAndHFunctions, seed: u64) -> Result<SynthDataset> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        let p = fns.params_at(x)?;
        ys.push(p.mu + p.sigma * tau(z, p.shape())?);
        xs.push(x);
        truth.push(p);
    }
    Ok(SynthDataset {
        feature_names: vec!["x".into()],
        x: Matrix::from_vec(n, 1, xs),
        y: ys,
        truth: Truth::GAndH(truth),
        seed,
        description: serde_json::json!({ "design": "gandh", "functions": fns }),
    })
}

/// Chi-squared variate: a sum of squared normals for integer `nu`, gamma sampling otherwise.
fn chi_squared(rng: &mut ChaCha8Rng, nu: f64) -> Result<f64> {
    if nu.fract() == 0.0 && nu <= 64.0 {
        Ok((0..nu as usize)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * z
            })
            .sum())
    } else {
        let d = ChiSquared::new(nu)
            .map_err(|e| Error::InvalidParameter(format!("chi-squared({nu}): {e}")))?;
        Ok(d.sample(rng))
    }
}

/// `x ~ U(0,1)`, `y = mu(x) + sigma(x) T` with `T = Z / sqrt(V / nu(x))`, `V ~ chi2(nu(x))`.
pub fn generate_student_t(n: usize, fns: &StudentTFunctions, seed: u64) -> Result<SynthDataset> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let p = fns.params_at(x)?;
        let z: f64 = rng.sample(StandardNormal);
        let v = chi_squared(&mut rng, p.nu)?;
        ys.push(p.mu + p.sigma * z / (v / p.nu).sqrt());
        xs.push(x);
        truth.push(p);
    }
    Ok(SynthDataset {
        feature_names: vec!["x".into()],
        x: Matrix::from_vec(n, 1, xs),
        y: ys,
        truth: Truth::StudentT(truth),
        seed,
        description: serde_json::json!({ "design": "student_t", "functions": fns }),
    })
}

pub const SPATIAL_FIRST_YEAR: i32 = 1982;
pub const SPATIAL_LAST_YEAR: i32 = 2016;

/// True parameters of the spatial design at a (lat, lon, year) cell.
pub fn spatial_params(lat: f64, lon: f64, year: f64) -> Result<TghParams> {
    let u = (lat + 60.0) / 130.0;
    let v = (lon + 180.0) / 360.0;
    let t = (year - SPATIAL_FIRST_YEAR as f64) / (SPATIAL_LAST_YEAR - SPATIAL_FIRST_YEAR) as f64;
    TghParams::new(
        (PI * u).sin() * (2.0 * PI * v).cos() + 0.8 * t,
        0.3 + 0.4 * u + 0.2 * t,
        0.4 + 0.4 * v,
        0.1 + 0.2 * u,
    )
}

/// Gridded-style rows `(lat, lon, year)` with a g-and-h target whose location trends in
/// year; a stand-in for flattened crop-yield rasters.
pub fn generate_spatial(n: usize, seed: u64) -> Result<SynthDataset> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(3 * n);
    let mut ys = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let lat = rng.random_range(-60.0..70.0);
        let lon = rng.random_range(-180.0..180.0);
        let year = rng.random_range(SPATIAL_FIRST_YEAR..=SPATIAL_LAST_YEAR) as f64;
        let z: f64 = rng.sample(StandardNormal);
        let p = spatial_params(lat, lon, year)?;
        ys.push(p.mu + p.sigma * tau(z, p.shape())?);
        xs.extend([lat, lon, year]);
        truth.push(p);
    }
    Ok(SynthDataset {
        feature_names: vec!["lat".into(), "lon".into(), "year".into()],
        x: Matrix::from_vec(n, 3, xs),
        y: ys,
        truth: Truth::GAndH(truth),
        seed,
        description: serde_json::json!({ "design": "spatial" }),
    })
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Header: the feature columns, `y`, then the true parameters
    /// (`mu, sigma, g, h` or `mu, sigma, nu`).
    pub fn header(&self) -> Vec<String> {
        let mut h = self.feature_names.clone();
        h.push("y".into());
        let extra: &[&str] = match self.truth {
            Truth::GAndH(_) => &["mu", "sigma", "g", "h"],
            Truth::StudentT(_) => &["mu", "sigma", "nu"],
        };
        h.extend(extra.iter().map(|s| s.to_string()));
        h
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        let mut rec: Vec<String> = Vec::new();
        for i in 0..self.len() {
            rec.clear();
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            rec.push(self.y[i].to_string());
            match &self.truth {
                Truth::GAndH(p) => {
                    let p = p[i];
                    rec.extend([p.mu, p.sigma, p.g, p.h].map(|v| v.to_string()));
                }
                Truth::StudentT(p) => {
                    let p = p[i];
                    rec.extend([p.mu, p.sigma, p.nu].map(|v| v.to_string()));
                }
            }
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `path` (CSV) and `path` with a `.json` extension describing the design.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let meta = serde_json::json!({
            "n": self.len(),
            "seed": self.seed,
            "features": self.feature_names,
            "target": "y",
            "generator": self.description,
        });
        let side = path.with_extension("json");
        std::fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n")
            .map_err(|e| Error::io(side, e))?;
        Ok(())
    }
}
