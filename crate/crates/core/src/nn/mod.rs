//! Dense feed-forward networks with batch normalization and late-feature injection.
//!
//! Layout conventions:
//!
//! - Inputs are row-major `(batch, input_dim)` matrices. The last `late_features`
//!   columns skip the early layers and are concatenated to the input of the penultimate
//!   layer (the layer just before the head).
//! - Each layer computes `act(bn(x W^T + b))`; weights are stored `(out, in)` row-major.
//! - All trainable parameters live in one flat buffer so the optimizer, gradient
//!   clipping and serialization can treat them uniformly.

mod optim;
mod persist;
mod train;

pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use persist::{decode, encode, FORMAT_VERSION, MAGIC};
pub use train::{evaluate_loss, train, EpochRecord, TrainConfig, TrainData, TrainHistory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    /// Trailing input columns injected before the penultimate layer (0 = none).
    pub late_features: usize,
    pub head_dim: usize,
}

impl NetworkSpec {
    /// Hidden ReLU layers of the given widths followed by an identity head.
    pub fn mlp(
        base_inputs: usize,
        hidden: &[usize],
        batch_norm: bool,
        late_features: usize,
        head_dim: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let n = hidden.len() + 1;
        let inject = (late_features > 0).then(|| n.saturating_sub(2));
        let mut prev = base_inputs;
        for (i, &width) in hidden.iter().enumerate() {
            let extra = if inject == Some(i) { late_features } else { 0 };
            layers.push(LayerSpec {
                in_dim: prev + extra,
                out_dim: width,
                activation: Activation::Relu,
                batch_norm,
            });
            prev = width;
        }
        let extra = if inject == Some(hidden.len()) {
            late_features
        } else {
            0
        };
        layers.push(LayerSpec {
            in_dim: prev + extra,
            out_dim: head_dim,
            activation: Activation::Identity,
            batch_norm: false,
        });
        let spec = NetworkSpec {
            layers,
            late_features,
            head_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Index of the layer receiving the late features.
    pub fn injection_layer(&self) -> Option<usize> {
        (self.late_features > 0).then(|| self.layers.len().saturating_sub(2))
    }

    pub fn input_dim(&self) -> usize {
        match self.injection_layer() {
            Some(0) | None => self.layers[0].in_dim,
            Some(_) => self.layers[0].in_dim + self.late_features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let Some(head) = self.layers.last() else {
            return bad("network has no layers".into());
        };
        if self.layers.iter().any(|l| l.in_dim == 0 || l.out_dim == 0) {
            return bad("layer dimensions must be at least 1".into());
        }
        if head.activation != Activation::Identity || head.batch_norm {
            return bad("the head layer must be identity without batch norm".into());
        }
        if head.out_dim != self.head_dim {
            return bad(format!(
                "head layer has {} outputs but head_dim is {}",
                head.out_dim, self.head_dim
            ));
        }
        if self.late_features > 0 && self.layers.len() < 2 {
            return bad("late features need at least two layers".into());
        }
        let inject = self.injection_layer();
        if inject == Some(0) && self.layers[0].in_dim < self.late_features {
            return bad("first layer narrower than the late features".into());
        }
        for i in 1..self.layers.len() {
            let extra = if inject == Some(i) {
                self.late_features
            } else {
                0
            };
            let want = self.layers[i - 1].out_dim + extra;
            if self.layers[i].in_dim != want {
                return bad(format!(
                    "layer {i} expects {} inputs but receives {want}",
                    self.layers[i].in_dim
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running batch-norm statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Slots {
    w: usize,
    b: usize,
    /// gamma at `bn`, beta at `bn + out`
    bn: Option<usize>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    xhat: Option<Matrix>,
    inv_std: Vec<f64>,
    output: Matrix,
}

struct BatchMoments {
    mean: Vec<f64>,
    var_unbiased: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    bn: BatchNormConfig,
    params: Vec<f64>,
    slots: Vec<Slots>,
    stats: Vec<Option<RunningStats>>,
    cache: Option<Vec<LayerCache>>,
}

fn layout(spec: &NetworkSpec) -> (Vec<Slots>, usize) {
    let mut off = 0;
    let mut slots = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        let w = off;
        off += l.in_dim * l.out_dim;
        let b = off;
        off += l.out_dim;
        let bn = l.batch_norm.then(|| {
            let at = off;
            off += 2 * l.out_dim;
            at
        });
        slots.push(Slots { w, b, bn });
    }
    (slots, off)
}

impl Network {
    /// He-uniform weights, zero biases, unit batch-norm scales.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (slots, n) = layout(&spec);
        let mut params = vec![0.0; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, s) in spec.layers.iter().zip(&slots) {
            let bound = (6.0 / l.in_dim as f64).sqrt();
            for w in &mut params[s.w..s.w + l.in_dim * l.out_dim] {
                *w = rng.random_range(-bound..bound);
            }
            if let Some(at) = s.bn {
                params[at..at + l.out_dim].fill(1.0);
            }
        }
        let stats = spec
            .layers
            .iter()
            .map(|l| {
                l.batch_norm.then(|| RunningStats {
                    mean: vec![0.0; l.out_dim],
                    var: vec![1.0; l.out_dim],
                })
            })
            .collect();
        Ok(Self {
            spec,
            bn: BatchNormConfig::default(),
            params,
            slots,
            stats,
            cache: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn batch_norm_config(&self) -> BatchNormConfig {
        self.bn
    }

    pub fn set_batch_norm_config(&mut self, bn: BatchNormConfig) {
        self.bn = bn;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Running statistics per layer (`None` for layers without batch norm).
    pub fn running_stats(&self) -> &[Option<RunningStats>] {
        &self.stats
    }

    pub(crate) fn running_stats_mut(&mut self) -> &mut [Option<RunningStats>] {
        &mut self.stats
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input columns",
                expected: self.spec.input_dim(),
                got: x.cols(),
            });
        }
        Ok(())
    }

    /// Forward pass. Train mode uses batch statistics, updates the running statistics
    /// and caches activations for [`Network::backward`]; eval mode uses the running
    /// statistics and drops any cache.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        match mode {
            Mode::Eval => {
                self.cache = None;
                self.predict(x)
            }
            Mode::Train => {
                let (out, cache, moments) = self.run(x, true)?;
                let m = self.bn.momentum;
                for (stats, mom) in self.stats.iter_mut().zip(moments) {
                    if let (Some(s), Some(mom)) = (stats, mom) {
                        for j in 0..s.mean.len() {
                            s.mean[j] = (1.0 - m) * s.mean[j] + m * mom.mean[j];
                            s.var[j] = (1.0 - m) * s.var[j] + m * mom.var_unbiased[j];
                        }
                    }
                }
                self.cache = Some(cache);
                Ok(out)
            }
        }
    }

    /// Eval-mode forward pass that leaves the network untouched.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.run(x, false)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: &Matrix,
        train: bool,
    ) -> Result<(Matrix, Vec<LayerCache>, Vec<Option<BatchMoments>>)> {
        self.check_input(x)?;
        let n = x.rows();
        if train && n < 2 && self.spec.layers.iter().any(|l| l.batch_norm) {
            return Err(Error::InvalidParameter(
                "train-mode batch norm needs at least two rows".into(),
            ));
        }
        let inject = self.spec.injection_layer();
        let (mut a, late) = match inject {
            Some(i) if i > 0 => {
                let base = x.cols() - self.spec.late_features;
                (x.column_range(0, base), Some(x.column_range(base, x.cols())))
            }
            _ => (x.clone(), None),
        };

        let mut caches = Vec::new();
        let mut moments = Vec::with_capacity(self.spec.layers.len());
        for (i, (l, s)) in self.spec.layers.iter().zip(&self.slots).enumerate() {
            if inject == Some(i) {
                if let Some(late) = &late {
                    a = a.hstack(late);
                }
            }
            let w = &self.params[s.w..s.w + l.in_dim * l.out_dim];
            let b = &self.params[s.b..s.b + l.out_dim];
            let mut z = a.affine(w, b, l.out_dim);

            let mut xhat = None;
            let mut inv_std = Vec::new();
            let mut mom = None;
            if let Some(at) = s.bn {
                let out = l.out_dim;
                let gamma = &self.params[at..at + out];
                let beta = &self.params[at + out..at + 2 * out];
                let (mean, var) = if train {
                    let (mean, var) = column_moments(&z);
                    let scale = n as f64 / (n as f64 - 1.0);
                    mom = Some(BatchMoments {
                        mean: mean.clone(),
                        var_unbiased: var.iter().map(|v| v * scale).collect(),
                    });
                    (mean, var)
                } else {
                    let st = self.stats[i].as_ref().expect("batch-norm layer has stats");
                    (st.mean.clone(), st.var.clone())
                };
                inv_std = var.iter().map(|v| 1.0 / (v + self.bn.eps).sqrt()).collect();
                let mut xh = z.clone();
                for r in 0..n {
                    let row = xh.row_mut(r);
                    for j in 0..out {
                        row[j] = (row[j] - mean[j]) * inv_std[j];
                    }
                }
                for r in 0..n {
                    let src = xh.row(r);
                    let dst = z.row_mut(r);
                    for j in 0..out {
                        dst[j] = gamma[j] * src[j] + beta[j];
                    }
                }
                if train {
                    xhat = Some(xh);
                }
            }
            moments.push(mom);

            if l.activation == Activation::Relu {
                for v in z.as_mut_slice() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            if train {
                caches.push(LayerCache {
                    input: a,
                    xhat,
                    inv_std,
                    output: z.clone(),
                });
            }
            a = z;
        }
        Ok((a, caches, moments))
    }

    /// Gradients of `sum(head_grad * head)` with respect to every parameter, in the
    /// layout of [`Network::params`]. Consumes the cache of the last train-mode forward.
    pub fn backward(&mut self, head_grad: &Matrix) -> Result<Vec<f64>> {
        let cache = self.cache.take().ok_or(Error::NoForwardCache)?;
        let n = cache[0].input.rows();
        if head_grad.rows() != n || head_grad.cols() != self.spec.head_dim {
            return Err(Error::DimensionMismatch {
                context: "head gradient shape",
                expected: n * self.spec.head_dim,
                got: head_grad.rows() * head_grad.cols(),
            });
        }
        let inject = self.spec.injection_layer();
        let mut grads = vec![0.0; self.params.len()];
        let mut d = head_grad.clone();

        for i in (0..self.spec.layers.len()).rev() {
            let l = self.spec.layers[i];
            let s = self.slots[i];
            let c = &cache[i];
            let out = l.out_dim;

            if l.activation == Activation::Relu {
                for (g, &o) in d.as_mut_slice().iter_mut().zip(c.output.as_slice()) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }

            if let Some(at) = s.bn {
                let xhat = c.xhat.as_ref().expect("train cache holds xhat");
                let gamma = &self.params[at..at + out];
                let mut sum_d = vec![0.0; out];
                let mut sum_dx = vec![0.0; out];
                for r in 0..n {
                    let dr = d.row(r);
                    let xr = xhat.row(r);
                    for j in 0..out {
                        sum_d[j] += dr[j];
                        sum_dx[j] += dr[j] * xr[j];
                    }
                }
                for j in 0..out {
                    grads[at + j] = sum_dx[j];
                    grads[at + out + j] = sum_d[j];
                }
                // dxhat = d * gamma; dz = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                let nf = n as f64;
                for r in 0..n {
                    let xr = xhat.row(r).to_vec();
                    let dr = d.row_mut(r);
                    for j in 0..out {
                        let g = gamma[j];
                        dr[j] = c.inv_std[j] / nf
                            * (nf * g * dr[j] - g * sum_d[j] - xr[j] * g * sum_dx[j]);
                    }
                }
            }

            let inp = l.in_dim;
            {
                let (gw, rest) = grads[s.w..].split_at_mut(inp * out);
                let gb = &mut rest[s.b - s.w - inp * out..][..out];
                for r in 0..n {
                    let dr = d.row(r);
                    let ar = c.input.row(r);
                    for o in 0..out {
                        let dv = dr[o];
                        gb[o] += dv;
                        if dv != 0.0 {
                            let row = &mut gw[o * inp..(o + 1) * inp];
                            for k in 0..inp {
                                row[k] += dv * ar[k];
                            }
                        }
                    }
                }
            }

            if i > 0 {
                let w = &self.params[s.w..s.w + inp * out];
                let keep = if inject == Some(i) {
                    inp - self.spec.late_features
                } else {
                    inp
                };
                let mut da = Matrix::zeros(n, keep);
                for r in 0..n {
                    let dr = d.row(r);
                    let dst = da.row_mut(r);
                    for o in 0..out {
                        let dv = dr[o];
                        if dv != 0.0 {
                            let wr = &w[o * inp..o * inp + keep];
                            for k in 0..keep {
                                dst[k] += dv * wr[k];
                            }
                        }
                    }
                }
                d = da;
            }
        }
        Ok(grads)
    }

    pub(crate) fn from_parts(
        spec: NetworkSpec,
        bn: BatchNormConfig,
        params: Vec<f64>,
        stats: Vec<Option<RunningStats>>,
    ) -> Result<Self> {
        spec.validate()?;
        let (slots, n) = layout(&spec);
        if params.len() != n {
            return Err(Error::Format(format!(
                "expected {n} parameters, found {}",
                params.len()
            )));
        }
        Ok(Self {
            spec,
            bn,
            params,
            slots,
            stats,
            cache: None,
        })
    }
}

/// Per-column mean and biased variance.
fn column_moments(z: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = z.rows() as f64;
    let c = z.cols();
    let mut mean = vec![0.0; c];
    for r in 0..z.rows() {
        for (m, v) in mean.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for r in 0..z.rows() {
        for ((s, v), m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(batch_norm: bool, late: usize) -> Network {
        let spec = NetworkSpec::mlp(3, &[5, 4, 6], batch_norm, late, 4).unwrap();
        let mut net = Network::new(spec, 7).unwrap();
        // positive biases keep pre-activations off the ReLU kink at exactly zero
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for (l, s) in net.spec.layers.clone().iter().zip(net.slots.clone()) {
            for b in &mut net.params[s.b..s.b + l.out_dim] {
                *b = rng.random_range(0.1..0.5);
            }
        }
        net
    }

    fn input(n: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, cols, (0..n * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    /// Scalar objective sum(c * head) with fixed weights c.
    fn objective(net: &mut Network, x: &Matrix, c: &Matrix) -> f64 {
        let mut probe = net.clone();
        let out = probe.forward(x, Mode::Train).unwrap();
        out.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn spec_validation() {
        assert!(NetworkSpec::mlp(2, &[8, 8], true, 1, 4).is_ok());
        let mut spec = NetworkSpec::mlp(2, &[8, 8], true, 1, 4).unwrap();
        assert_eq!(spec.layers[1].in_dim, 9);
        assert_eq!(spec.input_dim(), 3);
        spec.layers[2].batch_norm = true;
        assert!(spec.validate().is_err());
        let mut spec = NetworkSpec::mlp(2, &[8, 8], true, 0, 4).unwrap();
        spec.layers[1].in_dim = 7;
        assert!(spec.validate().is_err());
        assert!(NetworkSpec::mlp(2, &[], false, 1, 4).is_err());
        // two layers: late features enter with the base inputs
        let spec = NetworkSpec::mlp(2, &[8], false, 1, 4).unwrap();
        assert_eq!(spec.layers[0].in_dim, 3);
        assert_eq!(spec.input_dim(), 3);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = toy(false, 0);
        net.params_mut().fill(0.0);
        let out = net.predict(&input(6, 3, 1)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_matches_hand_product() {
        let spec = NetworkSpec {
            layers: vec![LayerSpec {
                in_dim: 2,
                out_dim: 2,
                activation: Activation::Identity,
                batch_norm: false,
            }],
            late_features: 0,
            head_dim: 2,
        };
        let mut net = Network::new(spec, 0).unwrap();
        // W = [[1, 2], [3, 4]], b = [0.5, -1]
        net.params_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0, 0.5, -1.0]);
        let x = Matrix::from_rows(&[vec![1.0, -1.0], vec![2.0, 0.5]]);
        let out = net.predict(&x).unwrap();
        assert_eq!(out.as_slice(), &[-0.5, -2.0, 3.5, 7.0]);
    }

    #[test]
    fn train_mode_batch_norm_standardizes() {
        let mut net = toy(true, 0);
        net.forward(&input(64, 3, 2), Mode::Train).unwrap();
        let cache = net.cache.as_ref().unwrap();
        for c in cache.iter().filter_map(|c| c.xhat.as_ref()) {
            let (mean, var) = column_moments(c);
            for j in 0..mean.len() {
                assert!(mean[j].abs() < 1e-12);
                // eps shifts the variance slightly below one
                assert!((var[j] - 1.0).abs() < 1e-3, "var {}", var[j]);
            }
        }
    }

    #[test]
    fn backward_requires_cache() {
        let mut net = toy(true, 0);
        let g = Matrix::zeros(4, 4);
        assert!(matches!(net.backward(&g), Err(Error::NoForwardCache)));
        net.forward(&input(4, 3, 3), Mode::Train).unwrap();
        net.forward(&input(4, 3, 3), Mode::Eval).unwrap();
        assert!(matches!(net.backward(&g), Err(Error::NoForwardCache)));
    }

    #[test]
    fn zero_head_grad_gives_zero_gradients() {
        let mut net = toy(true, 1);
        net.forward(&input(8, 4, 4), Mode::Train).unwrap();
        let g = net.backward(&Matrix::zeros(8, 4)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_least_squares_gradient() {
        // loss = mean((Xw + b - y)^2): dL/dw = 2/n X^T (Xw + b - y)
        let spec = NetworkSpec::mlp(3, &[], false, 0, 1).unwrap();
        let mut net = Network::new(spec, 5).unwrap();
        let x = input(10, 3, 6);
        let y: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let out = net.forward(&x, Mode::Train).unwrap();
        let n = 10.0;
        let resid: Vec<f64> = (0..10).map(|i| out.get(i, 0) - y[i]).collect();
        let head = Matrix::from_vec(10, 1, resid.iter().map(|r| 2.0 * r / n).collect());
        let g = net.backward(&head).unwrap();
        for k in 0..3 {
            let want: f64 = (0..10).map(|i| x.get(i, k) * resid[i]).sum::<f64>() * 2.0 / n;
            assert!((g[k] - want).abs() < 1e-12);
        }
        let want_b: f64 = resid.iter().sum::<f64>() * 2.0 / n;
        assert!((g[3] - want_b).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (bn, late) in [(false, 0), (true, 0), (true, 2), (false, 1)] {
            let mut net = toy(bn, late);
            let cols = net.spec().input_dim();
            let x = input(7, cols, 8);
            let c = input(7, 4, 9);
            net.forward(&x, Mode::Train).unwrap();
            let g = net.backward(&c).unwrap();
            let step = 1e-6;
            for k in 0..net.num_params() {
                let mut a = net.clone();
                let mut b = net.clone();
                a.params_mut()[k] += step;
                b.params_mut()[k] -= step;
                let fd = (objective(&mut a, &x, &c) - objective(&mut b, &x, &c)) / (2.0 * step);
                let err = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-3);
                assert!(err < 1e-4, "bn={bn} late={late} k={k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn late_features_reach_only_the_penultimate_layer() {
        let mut net = toy(false, 2);
        let x = input(5, 5, 10);
        let base = net.predict(&x).unwrap();
        // first-layer weights never see the late columns
        let spec = net.spec().clone();
        assert_eq!(spec.layers[0].in_dim, 3);
        assert_eq!(spec.layers[2].in_dim, 4 + 2);
        let mut x2 = x.clone();
        x2.set(0, 4, x.get(0, 4) + 1.0);
        let moved = net.predict(&x2).unwrap();
        assert_ne!(base.row(0), moved.row(0));
        assert_eq!(base.row(1), moved.row(1));
        // zeroing the late-column weights of the penultimate layer removes their effect
        let (slots, _) = layout(&spec);
        let s = slots[2];
        for o in 0..6 {
            for k in 4..6 {
                net.params_mut()[s.w + o * 6 + k] = 0.0;
            }
        }
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x2).unwrap());
    }

    #[test]
    fn running_stats_converge_to_population() {
        let spec = NetworkSpec::mlp(1, &[1], true, 0, 1).unwrap();
        let mut net = Network::new(spec, 1).unwrap();
        net.params_mut()[0] = 1.0; // identity weight into the normalized layer
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch = 16_384;
        for _ in 0..1000 {
            let x = Matrix::from_vec(
                batch,
                1,
                (0..batch)
                    .map(|_| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        3.0 + 2.0 * z
                    })
                    .collect(),
            );
            net.forward(&x, Mode::Train).unwrap();
        }
        let st = net.running_stats()[0].as_ref().unwrap();
        assert!((st.mean[0] - 3.0).abs() < 1e-2, "mean {}", st.mean[0]);
        assert!((st.var[0].sqrt() - 2.0).abs() < 1e-2, "var {}", st.var[0]);
    }

    #[test]
    fn running_stats_of_a_repeated_batch_are_exact() {
        let spec = NetworkSpec::mlp(1, &[1], true, 0, 1).unwrap();
        let mut net = Network::new(spec, 1).unwrap();
        net.params_mut()[0] = 1.0;
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 4.0, 9.0]);
        for _ in 0..1000 {
            net.forward(&x, Mode::Train).unwrap();
        }
        let st = net.running_stats()[0].as_ref().unwrap();
        assert!((st.mean[0] - 4.0).abs() < 1e-12);
        // unbiased: sum of squares 9 + 4 + 0 + 25 over 3
        assert!((st.var[0] - 38.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_is_deterministic_and_pure() {
        let mut net = toy(true, 1);
        let x = input(9, 4, 11);
        net.forward(&x, Mode::Train).unwrap();
        let before = net.running_stats().to_vec();
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.running_stats(), &before[..]);
    }

    #[test]
    fn input_width_is_checked() {
        let net = toy(false, 0);
        assert!(matches!(
            net.predict(&input(2, 4, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
