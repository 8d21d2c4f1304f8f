use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_global_norm, Adam, AdamConfig, Mode, Network};
use crate::{Error, Likelihood, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4096,
            optimizer: AdamConfig::default(),
            grad_clip_norm: Some(10.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "batch_size = {} must be at least 2",
                self.batch_size
            )));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "grad_clip_norm = {c} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Borrowed training and validation splits.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train_x: &'a Matrix,
    pub train_y: &'a [f64],
    pub val_x: &'a Matrix,
    pub val_y: &'a [f64],
}

impl TrainData<'_> {
    fn validate(&self) -> Result<()> {
        for (x, y, ctx) in [
            (self.train_x, self.train_y, "training rows vs targets"),
            (self.val_x, self.val_y, "validation rows vs targets"),
        ] {
            if x.rows() != y.len() {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: y.len(),
                    got: x.rows(),
                });
            }
        }
        if self.train_y.is_empty() {
            return Err(Error::EmptySplit("training"));
        }
        if self.val_y.is_empty() {
            return Err(Error::EmptySplit("validation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch training losses seen during the epoch.
    pub train_loss: f64,
    /// Eval-mode mean loss on the validation split after the epoch.
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
}

/// Eval-mode mean loss of `net` on `(x, y)`.
pub fn evaluate_loss(net: &Network, likelihood: &Likelihood, x: &Matrix, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let head = net.predict(x)?;
    let losses = likelihood.head_losses(&head, y)?;
    Ok(losses.iter().map(|l| l.value).sum::<f64>() / y.len() as f64)
}

/// Minibatch Adam training. The network ends up holding the parameters and running
/// statistics of the epoch with the lowest validation loss.
pub fn train(
    net: &mut Network,
    likelihood: &Likelihood,
    data: TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    likelihood.validate()?;
    data.validate()?;
    if net.spec().head_dim != likelihood.head_dim() {
        return Err(Error::DimensionMismatch {
            context: "network head vs likelihood",
            expected: likelihood.head_dim(),
            got: net.spec().head_dim,
        });
    }

    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }

    let head_dim = likelihood.head_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.optimizer.clone(), net.num_params());
    let mut order: Vec<usize> = (0..data.train_y.len()).collect();
    let mut best: Option<(f64, Vec<f64>, Vec<_>)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            // a one-row batch has no batch-norm variance
            if idx.len() < 2 {
                continue;
            }
            let x = data.train_x.select_rows(idx);
            let y: Vec<f64> = idx.iter().map(|&i| data.train_y[i]).collect();
            let diverged = Error::NonFiniteLoss { epoch, batch: b };
            let head = net.forward(&x, Mode::Train)?;
            if !head.as_slice().iter().all(|v| v.is_finite()) {
                return Err(diverged);
            }
            let losses = likelihood.head_losses(&head, &y)?;
            let n = y.len() as f64;
            let loss = losses.iter().map(|l| l.value).sum::<f64>() / n;
            if !loss.is_finite() {
                return Err(diverged);
            }
            let mut head_grad = Matrix::zeros(idx.len(), head_dim);
            for (i, l) in losses.iter().enumerate() {
                for k in 0..head_dim {
                    head_grad.set(i, k, l.grad[k] / n);
                }
            }
            let mut grads = net.backward(&head_grad)?;
            if !grads.iter().all(|v| v.is_finite()) {
                return Err(diverged);
            }
            if let Some(c) = cfg.grad_clip_norm {
                clip_global_norm(&mut grads, c);
            }
            adam.step(net.params_mut(), &grads, epoch);
            loss_sum += loss;
            batches += 1;
        }

        let val_loss = evaluate_loss(net, likelihood, data.val_x, data.val_y)?;
        history.epochs.push(EpochRecord {
            epoch,
            lr: cfg.optimizer.lr_at(epoch),
            train_loss: if batches > 0 {
                loss_sum / batches as f64
            } else {
                f64::NAN
            },
            val_loss,
        });
        let improved = match &best {
            None => true,
            Some((v, _, _)) => val_loss < *v,
        };
        if improved && val_loss.is_finite() {
            best = Some((val_loss, net.params().to_vec(), net.running_stats().to_vec()));
            history.best_epoch = Some(epoch);
        }
    }

    if let Some((_, params, stats)) = best {
        net.params_mut().copy_from_slice(&params);
        net.running_stats_mut().clone_from_slice(&stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear_data(n: usize, sigma: f64, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let xi: f64 = rng.random_range(-1.0..1.0);
            let e: f64 = rng.sample(StandardNormal);
            x.push(xi);
            y.push(1.0 + 2.0 * xi + sigma * e);
        }
        (Matrix::from_vec(n, 1, x), y)
    }

    fn fast_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 128,
            optimizer: AdamConfig {
                lr: 1e-2,
                lr_drop_epochs: vec![15, 25],
                ..Default::default()
            },
            grad_clip_norm: Some(10.0),
            seed: 11,
        }
    }

    #[test]
    fn zero_epochs_leaves_network_untouched() {
        let (x, y) = linear_data(64, 0.5, 1);
        let spec = NetworkSpec::mlp(1, &[8], true, 0, 2).unwrap();
        let mut net = Network::new(spec, 0).unwrap();
        let before = net.params().to_vec();
        let data = TrainData {
            train_x: &x,
            train_y: &y,
            val_x: &x,
            val_y: &y,
        };
        let h = train(&mut net, &Likelihood::gaussian(), data, &fast_cfg(0)).unwrap();
        assert!(h.epochs.is_empty());
        assert_eq!(h.best_epoch, None);
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn same_seed_gives_identical_histories() {
        let (x, y) = linear_data(600, 0.5, 2);
        let (vx, vy) = linear_data(200, 0.5, 3);
        let run = || {
            let spec = NetworkSpec::mlp(1, &[8, 8], true, 0, 4).unwrap();
            let mut net = Network::new(spec, 5).unwrap();
            let data = TrainData {
                train_x: &x,
                train_y: &y,
                val_x: &vx,
                val_y: &vy,
            };
            let h = train(&mut net, &Likelihood::tukey(), data, &fast_cfg(3)).unwrap();
            (h, net.params().to_vec())
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(h1.epochs.len(), 3);
    }

    #[test]
    fn gaussian_head_recovers_noise_scale() {
        let sigma: f64 = 0.3;
        let (x, y) = linear_data(8000, sigma, 4);
        let (vx, vy) = linear_data(4000, sigma, 5);
        let spec = NetworkSpec::mlp(1, &[16, 16], true, 0, 2).unwrap();
        let mut net = Network::new(spec, 6).unwrap();
        let data = TrainData {
            train_x: &x,
            train_y: &y,
            val_x: &vx,
            val_y: &vy,
        };
        let h = train(&mut net, &Likelihood::gaussian(), data, &fast_cfg(30)).unwrap();
        let best = h.epochs[h.best_epoch.unwrap()].val_loss;
        // the loss omits ln(2 pi)/2, so its optimum is ln(sigma) + 1/2
        assert!(
            (best - 0.5 - sigma.ln()).abs() < 0.05,
            "val {best} vs optimum {}",
            sigma.ln() + 0.5
        );
    }

    #[test]
    fn best_validation_parameters_are_kept() {
        let (x, y) = linear_data(400, 0.5, 7);
        let (vx, vy) = linear_data(200, 0.5, 8);
        let spec = NetworkSpec::mlp(1, &[8], false, 0, 2).unwrap();
        let mut net = Network::new(spec, 9).unwrap();
        let data = TrainData {
            train_x: &x,
            train_y: &y,
            val_x: &vx,
            val_y: &vy,
        };
        let lik = Likelihood::gaussian();
        let h = train(&mut net, &lik, data, &fast_cfg(8)).unwrap();
        let best = h.best_epoch.unwrap();
        let min = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(h.epochs[best].val_loss, min);
        assert_eq!(evaluate_loss(&net, &lik, &vx, &vy).unwrap(), min);
    }

    #[test]
    fn non_finite_loss_reports_position() {
        let (x, mut y) = linear_data(64, 0.5, 10);
        y[3] = f64::INFINITY;
        let spec = NetworkSpec::mlp(1, &[4], false, 0, 2).unwrap();
        let mut net = Network::new(spec, 0).unwrap();
        let data = TrainData {
            train_x: &x,
            train_y: &y,
            val_x: &x,
            val_y: &y,
        };
        let cfg = TrainConfig {
            batch_size: 64,
            ..fast_cfg(1)
        };
        let err = train(&mut net, &Likelihood::gaussian(), data, &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch: 0 }), "{err}");
        assert!(err.is_numerical());
    }

    #[test]
    fn head_mismatch_is_rejected() {
        let (x, y) = linear_data(16, 0.5, 1);
        let spec = NetworkSpec::mlp(1, &[4], false, 0, 2).unwrap();
        let mut net = Network::new(spec, 0).unwrap();
        let data = TrainData {
            train_x: &x,
            train_y: &y,
            val_x: &x,
            val_y: &y,
        };
        assert!(train(&mut net, &Likelihood::tukey(), data, &fast_cfg(1)).is_err());
    }
}
