use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{
    cross_entropy, forward_with, loss_and_grad_with, predictions, ModelParams, Workspace, ARCHITECTURE,
};
use super::ModelError;
use crate::csi::ActivityLabel;
use crate::dataset::BalancedSampler;
use crate::dsp::{circular_shift, SpectrogramWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Random circular time shift of every training window.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidConfig(what.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            m: ModelParams::zeros(),
            v: ModelParams::zeros(),
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        let moments = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for ((theta, g), (m, v)) in tensors.zip(moments) {
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                theta[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Fraction in [0, 1].
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the best validation accuracy (ties: lower
    /// validation loss, then the earlier epoch).
    pub params: ModelParams,
    pub best_epoch: usize,
    pub final_params: ModelParams,
    pub history: Vec<EpochRecord>,
}

const EVAL_CHUNK: usize = 32;

fn to_f64(windows: &[SpectrogramWindow]) -> Vec<Array2<f64>> {
    windows.iter().map(|w| w.data.mapv(f64::from)).collect()
}

/// Mean loss and accuracy over `inputs`.
fn score(
    ws: &mut Workspace,
    params: &ModelParams,
    inputs: &[Array2<f64>],
    labels: &[ActivityLabel],
) -> Result<(f64, f64), ModelError> {
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, &y) in inputs.iter().zip(labels) {
        let logits = ws.forward(params, x.view())?;
        loss += cross_entropy(&logits, y);
        correct += usize::from(ActivityLabel::ALL[super::network::argmax(&logits)] == y);
    }
    let n = inputs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Predicted class per window, no augmentation.
pub fn predict(params: &ModelParams, windows: &[SpectrogramWindow]) -> Result<Vec<ActivityLabel>, ModelError> {
    let mut ws = Workspace::new();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(EVAL_CHUNK) {
        let inputs = to_f64(chunk);
        let views: Vec<ArrayView2<'_, f64>> = inputs.iter().map(|x| x.view()).collect();
        out.extend(predictions(&forward_with(&mut ws, params, &views)?));
    }
    Ok(out)
}

/// Trains from a He-initialized network. Each epoch runs
/// `⌈|train| / batch_size⌉` Adam steps on class-balanced batches, then scores
/// the validation split.
pub fn train(
    train_set: &[SpectrogramWindow],
    val_set: &[SpectrogramWindow],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(ModelError::EmptySplit("val"));
    }
    let train_x = to_f64(train_set);
    let train_y: Vec<ActivityLabel> = train_set.iter().map(|w| w.label).collect();
    let val_x = to_f64(val_set);
    let val_y: Vec<ActivityLabel> = val_set.iter().map(|w| w.label).collect();

    let mut params = ModelParams::init(cfg.seed);
    let mut adam = Adam::new(cfg);
    let mut sampler = BalancedSampler::new(&train_y, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut shift_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let steps = train_x.len().div_ceil(cfg.batch_size);
    let mut ws = Workspace::new();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(EpochRecord, ModelParams)> = None;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let picks: Vec<usize> = sampler.by_ref().take(cfg.batch_size).collect();
            let shifted: Vec<Array2<f64>> = if cfg.augment {
                picks
                    .iter()
                    .map(|&k| {
                        let rows = train_x[k].nrows() as i64;
                        circular_shift(train_x[k].view(), shift_rng.gen_range(0..rows))
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let views: Vec<ArrayView2<'_, f64>> = if cfg.augment {
                shifted.iter().map(|x| x.view()).collect()
            } else {
                picks.iter().map(|&k| train_x[k].view()).collect()
            };
            let labels: Vec<ActivityLabel> = picks.iter().map(|&k| train_y[k]).collect();
            let (loss, grads) = loss_and_grad_with(&mut ws, &params, &views, &labels)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, step, loss });
            }
            adam.step(&mut params, &grads);
            loss_sum += loss;
        }
        let (val_loss, val_acc) = score(&mut ws, &params, &val_x, &val_y)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_acc,
            val_loss,
        };
        history.push(record);
        let improves = match &best {
            None => true,
            Some((b, _)) => val_acc > b.val_acc || (val_acc == b.val_acc && val_loss < b.val_loss),
        };
        if improves {
            best = Some((record, params.clone()));
        }
    }
    let (best_record, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params: best_params,
        best_epoch: best_record.epoch,
        final_params: params,
        history,
    })
}

/// Per-epoch curve as comma-separated text with `#` provenance lines.
pub fn history_csv(history: &[EpochRecord], cfg: &TrainConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# wallhack {} training history", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "# architecture: {ARCHITECTURE}");
    let _ = writeln!(
        out,
        "# adam lr={} beta1={} beta2={} eps={} batch={} epochs={} augment={} seed={}",
        cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.batch_size, cfg.epochs, cfg.augment, cfg.seed
    );
    out.push_str("epoch,train_loss,val_acc,val_loss\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6}",
            r.epoch, r.train_loss, r.val_acc, r.val_loss
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::SUBCARRIERS;
    use crate::csi::{AntennaKind, Scenario, SessionMeta};
    use crate::dsp::WINDOW_LEN;

    fn toy_windows(per_class: usize, seed: u64) -> Vec<SpectrogramWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let meta = SessionMeta::without_zone(Scenario::Nlos, AntennaKind::Biquad, 0.0, 0);
        let mut out = Vec::new();
        for label in ActivityLabel::ALL {
            for _ in 0..per_class {
                let level = label.index() as f32 - 1.0;
                let data = Array2::from_shape_fn((WINDOW_LEN, SUBCARRIERS), |_| level + rng.gen_range(-0.5..0.5));
                out.push(SpectrogramWindow {
                    data,
                    label,
                    meta: meta.clone(),
                    source_offset: 0,
                });
            }
        }
        out
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let data = toy_windows(1, 0);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 2,
            epochs: 2,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train(&data, &data, &cfg).unwrap();
        assert_eq!(out.final_params, ModelParams::init(7));
        assert_eq!(out.params, ModelParams::init(7));
        assert_eq!(out.history.len(), 2);
    }

    #[test]
    fn same_seed_same_history() {
        let data = toy_windows(1, 1);
        let cfg = TrainConfig {
            batch_size: 3,
            epochs: 2,
            learning_rate: 1e-3,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&data, &data, &cfg).unwrap();
        let b = train(&data, &data, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(history_csv(&a.history, &cfg), history_csv(&b.history, &cfg));
    }

    #[test]
    fn memorizes_three_samples() {
        let data = toy_windows(1, 2);
        let cfg = TrainConfig {
            batch_size: 3,
            epochs: 2000,
            learning_rate: 1e-2,
            augment: false,
            seed: 1,
            ..TrainConfig::default()
        };
        let inputs = to_f64(&data);
        let labels: Vec<_> = data.iter().map(|w| w.label).collect();
        let views: Vec<_> = inputs.iter().map(|x| x.view()).collect();
        let mut params = ModelParams::init(cfg.seed);
        let mut adam = Adam::new(&cfg);
        let mut steps = 0;
        loop {
            let (loss, g) = super::super::network::loss_and_grad(&params, &views, &labels).unwrap();
            if loss < 0.01 {
                break;
            }
            assert!(steps < 2000, "loss {loss} after {steps} steps");
            adam.step(&mut params, &g);
            steps += 1;
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = toy_windows(1, 0);
        for cfg in [
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                beta1: 1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(train(&data, &data, &cfg), Err(ModelError::InvalidConfig(_))));
        }
        assert!(matches!(
            train(&[], &data, &TrainConfig::default()),
            Err(ModelError::EmptySplit("train"))
        ));
        let missing = &data[..2];
        assert!(matches!(
            train(
                missing,
                &data,
                &TrainConfig {
                    epochs: 1,
                    ..TrainConfig::default()
                }
            ),
            Err(ModelError::Dataset(_))
        ));
    }

    #[test]
    fn history_csv_layout() {
        let h = [EpochRecord {
            epoch: 1,
            train_loss: 1.0,
            val_acc: 0.5,
            val_loss: 0.9,
        }];
        let text = history_csv(&h, &TrainConfig::default());
        let body: Vec<_> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(
            body,
            ["epoch,train_loss,val_acc,val_loss", "1,1.000000,0.500000,0.900000"]
        );
    }
}
