//! Per-sample negative log-likelihoods and their gradients.
//!
//! The training loss for a g-and-h head drops the `ln(2 pi) / 2` constant:
//!
//! ```text
//! l = ln[exp(g z) + h z (exp(g z) - 1) / g] + ln sigma + (1 + h) / 2 * z^2,
//! z = tau^{-1}((y - mu) / sigma)
//! ```
//!
//! The Gaussian baseline drops the same constant, so the two are directly comparable.
//! Full log densities (constant included) live in [`crate::transform::log_density`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::transform::{tau_inverse, InverseSolverConfig, LocalTerms, TghParams};
use crate::{Error, Result};

/// A loss value with its gradient with respect to the distribution parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValueAndGrad<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
}

/// Bounds used to map raw network outputs onto valid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub sigma_floor: f64,
    pub g_max: f64,
    pub h_max: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            sigma_floor: 1e-4,
            g_max: 2.0,
            h_max: 0.5,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.sigma_floor) || !ok(self.g_max) || !ok(self.h_max) {
            return Err(Error::InvalidParameter(format!(
                "link bounds must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameters produced by [`link`] and the diagonal of the link Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linked {
    pub params: TghParams,
    pub derivs: [f64; 4],
}

/// `mu = r0`, `sigma = softplus(r1) + floor`, `g = g_max tanh(r2)`,
/// `h = h_max logistic(r3)`.
pub fn link(raw: [f64; 4], cfg: &LinkConfig) -> Linked {
    let s = logistic(raw[1]);
    let t = raw[2].tanh();
    let l = logistic(raw[3]);
    Linked {
        params: TghParams {
            mu: raw[0],
            sigma: softplus(raw[1]) + cfg.sigma_floor,
            g: cfg.g_max * t,
            h: cfg.h_max * l,
        },
        derivs: [1.0, s, cfg.g_max * (1.0 - t * t), cfg.h_max * l * (1.0 - l)],
    }
}

/// Negative log-likelihood of `y` (without the `ln(2 pi) / 2` constant) and its gradient
/// with respect to `(mu, sigma, g, h)`. Performs exactly one inverse solve.
pub fn nll_and_grad(
    y: f64,
    params: &TghParams,
    cfg: &InverseSolverConfig,
) -> Result<LossValueAndGrad<4>> {
    params.validate()?;
    let TghParams { sigma, h, .. } = *params;
    let z_tilde = params.standardize(y);
    let z = tau_inverse(z_tilde, params.shape(), cfg)?;
    let t = LocalTerms::at(z, params.shape());

    let value = t.ln_b() + sigma.ln() + 0.5 * (1.0 + h) * z * z;

    // total derivative of the loss along z_hat, then through z_hat's dependencies
    let dl_dz = t.dlnb_dz() + (1.0 + h) * z;
    let dz_dzt = t.dinv_dztilde();
    let grad = [
        dl_dz * dz_dzt * (-1.0 / sigma),
        1.0 / sigma + dl_dz * dz_dzt * (-z_tilde / sigma),
        t.dlnb_dg() + dl_dz * t.dinv_dg(),
        t.dlnb_dh() + 0.5 * z * z + dl_dz * t.dinv_dh(),
    ];
    Ok(LossValueAndGrad { value, grad })
}

/// `ln sigma + (y - mu)^2 / (2 sigma^2)` and its gradient with respect to `(mu, sigma)`.
pub fn gaussian_nll_and_grad(y: f64, mu: f64, sigma: f64) -> LossValueAndGrad<2> {
    let r = (y - mu) / sigma;
    LossValueAndGrad {
        value: sigma.ln() + 0.5 * r * r,
        grad: [-r / sigma, (1.0 - r * r) / sigma],
    }
}

/// Mean loss over a batch plus the per-sample (unscaled) gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub mean: f64,
    pub grads: Vec<[f64; 4]>,
}

/// Mean of [`nll_and_grad`] over paired samples. The mean (not the sum) keeps learning
/// rates independent of batch size.
pub fn batch_nll(y: &[f64], params: &[TghParams], cfg: &InverseSolverConfig) -> Result<BatchLoss> {
    if y.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "batch_nll targets vs parameters",
            expected: y.len(),
            got: params.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let per_sample: Vec<LossValueAndGrad<4>> = y
        .par_iter()
        .zip(params.par_iter())
        .enumerate()
        .map(|(i, (&yi, p))| nll_and_grad(yi, p, cfg).map_err(|e| e.at_sample(i)))
        .collect::<Result<_>>()?;
    let total: f64 = per_sample.iter().map(|l| l.value).sum();
    Ok(BatchLoss {
        mean: total / y.len() as f64,
        grads: per_sample.into_iter().map(|l| l.grad).collect(),
    })
}

/// Which likelihood a network head is trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Tukey,
    Gaussian,
}

impl LossKind {
    pub fn head_dim(self) -> usize {
        match self {
            LossKind::Tukey => 4,
            LossKind::Gaussian => 2,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tukey" => Ok(LossKind::Tukey),
            "gaussian" => Ok(LossKind::Gaussian),
            other => Err(Error::InvalidParameter(format!("unknown loss `{other}`"))),
        }
    }
}

/// A loss selector together with the settings its head needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Likelihood {
    pub kind: LossKind,
    pub link: LinkConfig,
    pub solver: InverseSolverConfig,
}

/// Loss of one head row and its gradient with respect to the raw outputs.
/// Only the first `head_dim` gradient entries are meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLoss {
    pub value: f64,
    pub grad: [f64; 4],
}

impl Likelihood {
    pub fn tukey() -> Self {
        Self::new(LossKind::Tukey)
    }

    pub fn gaussian() -> Self {
        Self::new(LossKind::Gaussian)
    }

    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            link: LinkConfig::default(),
            solver: InverseSolverConfig::default(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.kind.head_dim()
    }

    /// Distribution parameters for one raw head row. Gaussian heads map to `g = h = 0`.
    pub fn params(&self, raw: &[f64]) -> TghParams {
        match self.kind {
            LossKind::Tukey => link([raw[0], raw[1], raw[2], raw[3]], &self.link).params,
            LossKind::Gaussian => TghParams {
                mu: raw[0],
                sigma: softplus(raw[1]) + self.link.sigma_floor,
                g: 0.0,
                h: 0.0,
            },
        }
    }

    pub fn head_loss(&self, raw: &[f64], y: f64) -> Result<HeadLoss> {
        match self.kind {
            LossKind::Tukey => {
                let linked = link([raw[0], raw[1], raw[2], raw[3]], &self.link);
                let l = nll_and_grad(y, &linked.params, &self.solver)?;
                let mut grad = [0.0; 4];
                for k in 0..4 {
                    grad[k] = l.grad[k] * linked.derivs[k];
                }
                Ok(HeadLoss {
                    value: l.value,
                    grad,
                })
            }
            LossKind::Gaussian => {
                let sigma = softplus(raw[1]) + self.link.sigma_floor;
                let l = gaussian_nll_and_grad(y, raw[0], sigma);
                Ok(HeadLoss {
                    value: l.value,
                    grad: [l.grad[0], l.grad[1] * logistic(raw[1]), 0.0, 0.0],
                })
            }
        }
    }

    /// Per-row losses for a batch of raw head rows, evaluated in parallel and returned
    /// in row order.
    pub fn head_losses(&self, raw: &crate::Matrix, y: &[f64]) -> Result<Vec<HeadLoss>> {
        if raw.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "head rows vs targets",
                expected: y.len(),
                got: raw.rows(),
            });
        }
        (0..y.len())
            .into_par_iter()
            .map(|i| self.head_loss(raw.row(i), y[i]).map_err(|e| e.at_sample(i)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.solver.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::inverse_solve_count;

    fn rel(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(floor)
    }

    fn tight() -> InverseSolverConfig {
        InverseSolverConfig {
            abs_tolerance: 1e-15,
            ..Default::default()
        }
    }

    fn fd_grad(y: f64, p: TghParams, step: f64) -> [f64; 4] {
        let cfg = tight();
        let f = |p: TghParams| nll_and_grad(y, &p, &cfg).unwrap().value;
        let mut out = [0.0; 4];
        for k in 0..4 {
            let mut a = p;
            let mut b = p;
            let (pa, pb) = match k {
                0 => (&mut a.mu, &mut b.mu),
                1 => (&mut a.sigma, &mut b.sigma),
                2 => (&mut a.g, &mut b.g),
                _ => (&mut a.h, &mut b.h),
            };
            *pa += step;
            *pb -= step;
            out[k] = (f(a) - f(b)) / (2.0 * step);
        }
        out
    }

    #[test]
    fn link_saturation_limits() {
        let cfg = LinkConfig::default();
        let l = link([0.0, -800.0, 0.0, -800.0], &cfg);
        assert_eq!(l.params.mu, 0.0);
        assert!((l.params.sigma - cfg.sigma_floor).abs() < 1e-300 + 1e-18);
        assert_eq!(l.params.g, 0.0);
        assert!(l.params.h < 1e-300);
    }

    #[test]
    fn link_at_zero() {
        let l = link([1.5, 0.0, 0.0, 0.0], &LinkConfig::default());
        assert_eq!(l.params.mu, 1.5);
        assert!((l.params.sigma - 0.693_247_180_559_945_3).abs() < 1e-15);
        assert_eq!(l.params.g, 0.0);
        assert_eq!(l.params.h, 0.25);
    }

    #[test]
    fn link_derivatives_match_finite_differences() {
        let cfg = LinkConfig::default();
        let step = 1e-6;
        for raw in [[0.3, -1.2, 0.7, 2.0], [-2.0, 3.5, -1.4, -0.6], [0.0, 0.0, 0.0, 0.0]] {
            let d = link(raw, &cfg).derivs;
            for k in 0..4 {
                let mut a = raw;
                let mut b = raw;
                a[k] += step;
                b[k] -= step;
                let get = |r: [f64; 4]| {
                    let p = link(r, &cfg).params;
                    [p.mu, p.sigma, p.g, p.h][k]
                };
                let fd = (get(a) - get(b)) / (2.0 * step);
                assert!(rel(d[k], fd, 1e-12) < 1e-6, "k={k} raw={raw:?}");
            }
        }
    }

    #[test]
    fn gaussian_reduction_at_origin() {
        let l = nll_and_grad(0.0, &TghParams::gaussian(0.0, 1.0).unwrap(), &Default::default())
            .unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(l.grad, [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn value_at_location_is_log_sigma() {
        let p = TghParams::new(2.0, 3.0, 0.8, 0.3).unwrap();
        let l = nll_and_grad(2.0, &p, &Default::default()).unwrap();
        assert!((l.value - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cases = [
            (1.2, TghParams::new(0.3, 0.8, 0.5, 0.1).unwrap()),
            (-2.5, TghParams::new(0.1, 1.4, -0.9, 0.35).unwrap()),
            (4.0, TghParams::new(-1.0, 0.5, 1.7, 0.02).unwrap()),
            (-0.3, TghParams::new(0.0, 2.0, 0.05, 0.49).unwrap()),
            (7.0, TghParams::new(0.0, 1.0, -0.3, 0.2).unwrap()),
        ];
        for (y, p) in cases {
            let got = nll_and_grad(y, &p, &tight()).unwrap().grad;
            let fd = fd_grad(y, p, 1e-5);
            for k in 0..4 {
                assert!(rel(got[k], fd[k], 1e-3) < 1e-5, "k={k} y={y} p={p:?}: {} vs {}", got[k], fd[k]);
            }
        }
    }

    #[test]
    fn gaussian_loss_examples() {
        let l = gaussian_nll_and_grad(0.7, 0.7, 2.0);
        assert_eq!(l.value, 2f64.ln());
        assert_eq!(l.grad[0], 0.0);
        assert_eq!(gaussian_nll_and_grad(1.0, 0.0, 1.0).value, 0.5);
    }

    #[test]
    fn tukey_matches_gaussian_at_zero_shape() {
        let cfg = InverseSolverConfig::default();
        for y in [-3.0, -0.4, 0.0, 1.1, 5.0] {
            for (mu, sigma) in [(0.0, 1.0), (1.5, 0.3), (-2.0, 4.0)] {
                let t = nll_and_grad(y, &TghParams::gaussian(mu, sigma).unwrap(), &cfg).unwrap();
                let g = gaussian_nll_and_grad(y, mu, sigma);
                assert!((t.value - g.value).abs() < 1e-9);
                assert!((t.grad[0] - g.grad[0]).abs() < 1e-9);
                assert!((t.grad[1] - g.grad[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shift_scale_equivariance() {
        let cfg = tight();
        let p = TghParams::new(0.4, 1.3, 0.6, 0.2).unwrap();
        for y in [-2.0, 0.1, 3.3] {
            for (c, s) in [(1.0, 2.0), (-3.0, 0.25)] {
                let moved = TghParams {
                    mu: (p.mu - c) / s,
                    sigma: p.sigma / s,
                    ..p
                };
                let a = nll_and_grad(y, &p, &cfg).unwrap().value;
                let b = nll_and_grad((y - c) / s, &moved, &cfg).unwrap().value + s.ln();
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn one_solve_per_evaluation() {
        let before = inverse_solve_count();
        nll_and_grad(0.9, &TghParams::new(0.0, 1.0, 0.3, 0.1).unwrap(), &Default::default())
            .unwrap();
        assert_eq!(inverse_solve_count() - before, 1);
    }

    #[test]
    fn batch_examples() {
        let cfg = InverseSolverConfig::default();
        let p = TghParams::new(0.2, 1.1, -0.4, 0.15).unwrap();
        let single = nll_and_grad(1.3, &p, &cfg).unwrap();
        let b1 = batch_nll(&[1.3], &[p], &cfg).unwrap();
        assert_eq!(b1.mean, single.value);
        assert_eq!(b1.grads[0], single.grad);
        let b2 = batch_nll(&[1.3, 1.3], &[p, p], &cfg).unwrap();
        assert_eq!(b2.mean, single.value);

        let ys = [0.5, -1.0, 2.5];
        let ps = [
            p,
            TghParams::new(-1.0, 0.5, 0.9, 0.0).unwrap(),
            TghParams::new(1.0, 2.0, 0.0, 0.4).unwrap(),
        ];
        let want: f64 = ys
            .iter()
            .zip(&ps)
            .map(|(y, p)| nll_and_grad(*y, p, &cfg).unwrap().value)
            .sum::<f64>()
            / 3.0;
        assert!((batch_nll(&ys, &ps, &cfg).unwrap().mean - want).abs() < 1e-15);
        assert!(matches!(
            batch_nll(&ys, &ps[..2], &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_is_independent_of_thread_count() {
        let cfg = InverseSolverConfig::default();
        let ys: Vec<f64> = (0..500).map(|i| ((i * 37 % 101) as f64 - 50.0) / 13.0).collect();
        let ps: Vec<TghParams> = (0..500)
            .map(|i| TghParams::new(0.01 * i as f64, 0.5 + 0.002 * i as f64, 0.3, 0.1).unwrap())
            .collect();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| batch_nll(&ys, &ps, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn head_loss_chains_link() {
        let lik = Likelihood::tukey();
        let raw = [0.2, -0.3, 0.4, -1.0];
        let y = 1.7;
        let got = lik.head_loss(&raw, y).unwrap();
        let step = 1e-6;
        let mut tight_lik = lik;
        tight_lik.solver = tight();
        for k in 0..4 {
            let mut a = raw;
            let mut b = raw;
            a[k] += step;
            b[k] -= step;
            let fd = (tight_lik.head_loss(&a, y).unwrap().value
                - tight_lik.head_loss(&b, y).unwrap().value)
                / (2.0 * step);
            assert!(rel(got.grad[k], fd, 1e-3) < 1e-5);
        }

        let gl = Likelihood::gaussian();
        let raw = [0.2, -0.3];
        let got = gl.head_loss(&raw, y).unwrap();
        for k in 0..2 {
            let mut a = raw;
            let mut b = raw;
            a[k] += step;
            b[k] -= step;
            let fd = (gl.head_loss(&a, y).unwrap().value - gl.head_loss(&b, y).unwrap().value)
                / (2.0 * step);
            assert!(rel(got.grad[k], fd, 1e-3) < 1e-6);
        }
    }
}
