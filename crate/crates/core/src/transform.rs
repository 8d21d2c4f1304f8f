//! The Tukey g-and-h transform
//!
//! ```text
//! tau_{g,h}(z) = (exp(g z) - 1) / g * exp(h z^2 / 2)      (g != 0)
//! tau_{0,h}(z) = z * exp(h z^2 / 2)
//! ```
//!
//! together with its derivatives, a bisection inverse, the density of
//! `Y = mu + sigma * tau(Z)`, quantiles and sampling.
//!
//! Internally every derivative is expressed relative to the bracket
//! `B(z) = exp(g z) + h z (exp(g z) - 1) / g`, so `tau'(z) = B(z) exp(h z^2 / 2)` and the
//! ratios needed by the implicit-function identities are formed in log space. This keeps
//! them finite where `exp(g z)` or `exp(h z^2 / 2)` alone would overflow or underflow.

use std::cell::Cell;
use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::normal::{self, HALF_LN_2PI};
use crate::roots::bisect;
use crate::{Error, Result};

/// Below this `|g|` the transform switches to its `g = 0` form and the series for
/// `d tau / d g`; the closed forms cancel catastrophically there.
pub const SMALL_G: f64 = 1e-5;

/// Shape of the transform: skewness `g` and tail heaviness `h >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub g: f64,
    pub h: f64,
}

impl ShapeParams {
    pub const IDENTITY: ShapeParams = ShapeParams { g: 0.0, h: 0.0 };

    pub fn new(g: f64, h: f64) -> Result<Self> {
        let p = ShapeParams { g, h };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.g.is_finite() || !self.h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "shape parameters must be finite (g = {}, h = {})",
                self.g, self.h
            )));
        }
        if self.h < 0.0 {
            return Err(Error::InvalidParameter(format!("h = {} < 0", self.h)));
        }
        Ok(())
    }

    #[inline]
    fn small_g(&self) -> bool {
        self.g.abs() < SMALL_G
    }
}

/// One g-and-h distribution: `Y = mu + sigma * tau_{g,h}(Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TghParams {
    pub mu: f64,
    pub sigma: f64,
    pub g: f64,
    pub h: f64,
}

impl TghParams {
    pub fn new(mu: f64, sigma: f64, g: f64, h: f64) -> Result<Self> {
        let p = TghParams { mu, sigma, g, h };
        p.validate()?;
        Ok(p)
    }

    /// Gaussian `N(mu, sigma^2)`, i.e. `g = h = 0`.
    pub fn gaussian(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu and sigma must be finite (mu = {}, sigma = {})",
                self.mu, self.sigma
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "sigma = {} must be positive",
                self.sigma
            )));
        }
        self.shape().validate()
    }

    #[inline]
    pub fn shape(&self) -> ShapeParams {
        ShapeParams {
            g: self.g,
            h: self.h,
        }
    }

    /// `(y - mu) / sigma`.
    #[inline]
    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.mu) / self.sigma
    }
}

/// Settings for [`tau_inverse`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseSolverConfig {
    /// Final bracket width, in `z` units.
    pub abs_tolerance: f64,
    pub max_bisection_iters: u32,
    /// Half-width of the first bracket `[-L, L]`.
    pub initial_half_width: f64,
    pub max_bracket_doublings: u32,
}

impl Default for InverseSolverConfig {
    fn default() -> Self {
        Self {
            abs_tolerance: 1e-12,
            max_bisection_iters: 200,
            initial_half_width: 8.0,
            max_bracket_doublings: 60,
        }
    }
}

impl InverseSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "solver abs_tolerance = {} must be positive",
                self.abs_tolerance
            )));
        }
        if self.max_bisection_iters < 1 {
            return Err(Error::InvalidParameter(
                "solver max_bisection_iters must be at least 1".into(),
            ));
        }
        if !(self.initial_half_width > 0.0) || !self.initial_half_width.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "solver initial_half_width = {} must be positive",
                self.initial_half_width
            )));
        }
        Ok(())
    }
}

thread_local! {
    static INVERSE_SOLVES: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`tau_inverse`] solves performed so far on the calling thread.
pub fn inverse_solve_count() -> u64 {
    INVERSE_SOLVES.with(Cell::get)
}

fn require_finite(z: f64, what: &str) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} = {z} is not finite")))
    }
}

#[inline]
fn log_add_exp(x: f64, y: f64) -> f64 {
    if y == f64::NEG_INFINITY {
        return x;
    }
    if x == f64::NEG_INFINITY {
        return y;
    }
    let m = x.max(y);
    m + (-(x - y).abs()).exp().ln_1p()
}

/// `ln |(exp(g z) - 1) / g|`, or `ln |z|` on the small-g branch.
#[inline]
fn ln_abs_m(z: f64, p: ShapeParams) -> f64 {
    if p.small_g() {
        return z.abs().ln();
    }
    let a = p.g * z;
    let ln_num = if a > 0.0 {
        a + (-(-a).exp_m1()).ln()
    } else {
        (-a.exp_m1()).ln()
    };
    ln_num - p.g.abs().ln()
}

/// `ln phi(a)` with `phi(a) = (exp(a) (a - 1) + 1) / a^2 > 0`, so that
/// `d tau / d g = z^2 phi(g z) exp(h z^2 / 2)`.
#[inline]
fn ln_phi(a: f64) -> f64 {
    if a.abs() < 0.1 {
        // sum_{j>=0} (j + 1) / (j + 2)! a^j
        const COEF: [f64; 9] = [
            1.0 / 2.0,
            1.0 / 3.0,
            1.0 / 8.0,
            1.0 / 30.0,
            1.0 / 144.0,
            1.0 / 840.0,
            1.0 / 5760.0,
            1.0 / 45360.0,
            1.0 / 403200.0,
        ];
        let s = COEF.iter().rev().fold(0.0, |acc, c| acc * a + c);
        s.ln()
    } else if a > 0.0 {
        a + (a - 1.0 + (-a).exp()).ln() - 2.0 * a.ln()
    } else {
        ((a - 1.0) * a.exp()).ln_1p() - 2.0 * (-a).ln()
    }
}

/// Everything the derivatives need at one point `z`, relative to `B(z)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalTerms {
    z: f64,
    g_eff: f64,
    h: f64,
    ln_b: f64,
    /// `exp(g z) / B`
    e_over_b: f64,
    /// `((exp(g z) - 1) / g) / B`
    m_over_b: f64,
    /// `(d/dg (exp(g z) - 1) / g) / B`
    mg_over_b: f64,
}

impl LocalTerms {
    pub(crate) fn at(z: f64, p: ShapeParams) -> Self {
        let ln_abs_z = z.abs().ln();
        let ln_m = ln_abs_m(z, p);
        if p.small_g() {
            let ln_b = (p.h * z * z).ln_1p();
            let inv_b = (-ln_b).exp();
            let series = 0.5 + p.g * z / 3.0;
            let mg = if z == 0.0 { 0.0 } else { z * z * series };
            return LocalTerms {
                z,
                g_eff: 0.0,
                h: p.h,
                ln_b,
                e_over_b: inv_b,
                m_over_b: z * inv_b,
                mg_over_b: mg * inv_b,
            };
        }
        let a = p.g * z;
        let ln_p = if p.h > 0.0 && z != 0.0 {
            p.h.ln() + ln_abs_z + ln_m
        } else {
            f64::NEG_INFINITY
        };
        let ln_b = log_add_exp(a, ln_p);
        let (m_over_b, mg_over_b) = if z == 0.0 {
            (0.0, 0.0)
        } else {
            (
                z.signum() * (ln_m - ln_b).exp(),
                (2.0 * ln_abs_z + ln_phi(a) - ln_b).exp(),
            )
        };
        LocalTerms {
            z,
            g_eff: p.g,
            h: p.h,
            ln_b,
            e_over_b: (a - ln_b).exp(),
            m_over_b,
            mg_over_b,
        }
    }

    #[inline]
    pub(crate) fn ln_b(&self) -> f64 {
        self.ln_b
    }

    #[inline]
    pub(crate) fn ln_tau_prime(&self) -> f64 {
        self.ln_b + 0.5 * self.h * self.z * self.z
    }

    /// `d ln B / d z`
    #[inline]
    pub(crate) fn dlnb_dz(&self) -> f64 {
        self.g_eff * self.e_over_b + self.h * self.m_over_b + self.h * self.z * self.e_over_b
    }

    /// `d ln B / d g` at fixed `z`
    #[inline]
    pub(crate) fn dlnb_dg(&self) -> f64 {
        self.z * self.e_over_b + self.h * self.z * self.mg_over_b
    }

    /// `d ln B / d h` at fixed `z`
    #[inline]
    pub(crate) fn dlnb_dh(&self) -> f64 {
        self.z * self.m_over_b
    }

    /// `d tau^{-1} / d g = -(d tau / d g) / tau'`
    #[inline]
    pub(crate) fn dinv_dg(&self) -> f64 {
        -self.mg_over_b
    }

    /// `d tau^{-1} / d h = -(z^2 / 2) tau / tau'`
    #[inline]
    pub(crate) fn dinv_dh(&self) -> f64 {
        -0.5 * self.z * self.z * self.m_over_b
    }

    /// `d tau^{-1} / d z_tilde = 1 / tau'`
    #[inline]
    pub(crate) fn dinv_dztilde(&self) -> f64 {
        (-self.ln_tau_prime()).exp()
    }
}

#[inline]
fn tau_unchecked(z: f64, p: ShapeParams) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let core = if p.small_g() {
        z
    } else {
        (p.g * z).exp_m1() / p.g
    };
    core * (0.5 * p.h * z * z).exp()
}

fn overflow(op: &'static str, z: f64, p: ShapeParams) -> Error {
    Error::Overflow {
        op,
        z,
        g: p.g,
        h: p.h,
    }
}

/// `tau_{g,h}(z)`; strictly increasing in `z`, with `tau(0) = 0`.
pub fn tau(z: f64, p: ShapeParams) -> Result<f64> {
    require_finite(z, "z")?;
    let v = tau_unchecked(z, p);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(overflow("tau", z, p))
    }
}

/// `tau'(z) = [exp(g z) + h z (exp(g z) - 1) / g] exp(h z^2 / 2)`, always positive.
pub fn tau_prime(z: f64, p: ShapeParams) -> Result<f64> {
    require_finite(z, "z")?;
    let v = ln_tau_prime(z, p).exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(overflow("tau_prime", z, p))
    }
}

/// `ln tau'(z)`, finite wherever `z` is.
pub fn ln_tau_prime(z: f64, p: ShapeParams) -> f64 {
    LocalTerms::at(z, p).ln_tau_prime()
}

/// `d tau / d g = [exp(g z)(g z - 1) + 1] / g^2 * exp(h z^2 / 2)`.
pub fn dtau_dg(z: f64, p: ShapeParams) -> Result<f64> {
    require_finite(z, "z")?;
    if z == 0.0 {
        return Ok(0.0);
    }
    let ln_phi_term = if p.small_g() {
        (0.5 + p.g * z / 3.0).ln()
    } else {
        ln_phi(p.g * z)
    };
    let v = (2.0 * z.abs().ln() + ln_phi_term + 0.5 * p.h * z * z).exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(overflow("dtau_dg", z, p))
    }
}

/// `d tau / d h = (z^2 / 2) tau(z)`.
pub fn dtau_dh(z: f64, p: ShapeParams) -> Result<f64> {
    let v = 0.5 * z * z * tau(z, p)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(overflow("dtau_dh", z, p))
    }
}

/// Sign of `tau(z) - target`. When `tau(z)` leaves the `f64` range the magnitudes are
/// compared through `ln |tau(z)|`.
fn compare_tau(z: f64, p: ShapeParams, target: f64) -> Ordering {
    let v = tau_unchecked(z, p);
    if v.is_finite() {
        return v.partial_cmp(&target).unwrap_or(Ordering::Equal);
    }
    let ln_tau = ln_abs_m(z, p) + 0.5 * p.h * z * z;
    if z > 0.0 {
        if target <= 0.0 {
            Ordering::Greater
        } else {
            ln_tau.total_cmp(&target.ln())
        }
    } else if target >= 0.0 {
        Ordering::Less
    } else {
        (-target).ln().total_cmp(&ln_tau)
    }
}

/// `tau^{-1}(z_tilde)` by bracket doubling from `[-L, L]` followed by bisection.
pub fn tau_inverse(z_tilde: f64, p: ShapeParams, cfg: &InverseSolverConfig) -> Result<f64> {
    require_finite(z_tilde, "z_tilde")?;
    INVERSE_SOLVES.with(|c| c.set(c.get() + 1));

    let mut half = cfg.initial_half_width;
    let mut doublings = 0;
    loop {
        let below = compare_tau(-half, p, z_tilde) != Ordering::Greater;
        let above = compare_tau(half, p, z_tilde) != Ordering::Less;
        if below && above {
            break;
        }
        if doublings >= cfg.max_bracket_doublings {
            return Err(Error::BracketNotFound {
                z_tilde,
                g: p.g,
                h: p.h,
                doublings,
            });
        }
        half *= 2.0;
        doublings += 1;
    }
    Ok(bisect(
        -half,
        half,
        cfg.abs_tolerance,
        cfg.max_bisection_iters,
        |z| compare_tau(z, p, z_tilde),
    ))
}

/// `z_hat = tau^{-1}(z_tilde)` together with its partial derivatives, from one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseDerivatives {
    pub z_hat: f64,
    pub d_ztilde: f64,
    pub d_g: f64,
    pub d_h: f64,
}

pub fn tau_inverse_with_derivatives(
    z_tilde: f64,
    p: ShapeParams,
    cfg: &InverseSolverConfig,
) -> Result<InverseDerivatives> {
    let z_hat = tau_inverse(z_tilde, p, cfg)?;
    let t = LocalTerms::at(z_hat, p);
    Ok(InverseDerivatives {
        z_hat,
        d_ztilde: t.dinv_dztilde(),
        d_g: t.dinv_dg(),
        d_h: t.dinv_dh(),
    })
}

/// `1 / tau'(tau^{-1}(z_tilde))`.
pub fn dtauinv_dztilde(z_tilde: f64, p: ShapeParams, cfg: &InverseSolverConfig) -> Result<f64> {
    Ok(tau_inverse_with_derivatives(z_tilde, p, cfg)?.d_ztilde)
}

/// `-(d tau / d g)(z_hat) / tau'(z_hat)`.
pub fn dtauinv_dg(z_tilde: f64, p: ShapeParams, cfg: &InverseSolverConfig) -> Result<f64> {
    Ok(tau_inverse_with_derivatives(z_tilde, p, cfg)?.d_g)
}

/// `-(d tau / d h)(z_hat) / tau'(z_hat)`.
pub fn dtauinv_dh(z_tilde: f64, p: ShapeParams, cfg: &InverseSolverConfig) -> Result<f64> {
    Ok(tau_inverse_with_derivatives(z_tilde, p, cfg)?.d_h)
}

/// `ln f_Y(y) = -ln sigma - ln tau'(z_hat) - z_hat^2 / 2 - ln(2 pi) / 2`.
pub fn log_density(y: f64, params: &TghParams, cfg: &InverseSolverConfig) -> Result<f64> {
    params.validate()?;
    require_finite(y, "y")?;
    let z_hat = tau_inverse(params.standardize(y), params.shape(), cfg)?;
    Ok(log_density_at(z_hat, params))
}

pub(crate) fn log_density_at(z_hat: f64, params: &TghParams) -> f64 {
    -params.sigma.ln() - ln_tau_prime(z_hat, params.shape()) - 0.5 * z_hat * z_hat - HALF_LN_2PI
}

/// `mu + sigma * tau(Phi^{-1}(alpha))`.
pub fn quantile(alpha: f64, params: &TghParams) -> Result<f64> {
    params.validate()?;
    let z = normal::quantile(alpha)?;
    Ok(params.mu + params.sigma * tau(z, params.shape())?)
}

/// `n` seeded draws of `mu + sigma * tau(Z)`.
pub fn sample(params: &TghParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            Ok(params.mu + params.sigma * tau(z, params.shape())?)
        })
        .collect()
}
