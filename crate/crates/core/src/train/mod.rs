//! Optimization loop: augmentation, AdamW with a cosine schedule, the epoch
//! driver and accuracy metrics.

pub mod metrics;
pub mod optim;

use std::f64::consts::TAU;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{accuracy_metrics, AccuracyReport, MetricsRecord};
pub use optim::{adamw_step, cosine_lr, AdamState, AdamWConfig};

use crate::data::synth::rotate_about_y;
use crate::data::{Dataset, Sample};
use crate::dualnorm::{delta_for, Regime, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::network::{ForwardPass, Phase, PointNormNet};
use crate::tensor::{Float, Graph, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Per-axis translation range of the augmentation.
    pub translate_range: f64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr_init: 0.01,
            lr_final: 0.0001,
            weight_decay: 0.05,
            label_smoothing: 0.2,
            seed: 0,
            precision: Precision::F32,
            translate_range: 0.2,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if self.lr_final.is_nan() || self.lr_final >= self.lr_init || self.lr_final < 0.0 {
            return Err(Error::config(format!(
                "learning rates must satisfy 0 <= lr_final < lr_init, got {} and {}",
                self.lr_final, self.lr_init
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.weight_decay < 0.0 || self.translate_range < 0.0 {
            return Err(Error::config("weight decay and translation range must be >= 0"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        cosine_lr(epoch as f64, self.epochs as f64, self.lr_init, self.lr_final)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

/// Rotation by `angle` about y, then translation by `offset`.
pub fn augment_with(coords: &[Point], angle: f64, offset: [f64; 3]) -> Vec<Point> {
    coords
        .iter()
        .map(|p| {
            let q = rotate_about_y(p, angle);
            [q[0] + offset[0], q[1] + offset[1], q[2] + offset[2]]
        })
        .collect()
}

/// Random rotation about the up axis and random per-axis translation in
/// `[-range, range]`.
pub fn augment(coords: &[Point], range: f64, rng: &mut impl Rng) -> Vec<Point> {
    let angle = rng.random_range(0.0..TAU);
    let offset = std::array::from_fn(|_| {
        if range > 0.0 {
            rng.random_range(-range..=range)
        } else {
            0.0
        }
    });
    augment_with(coords, angle, offset)
}

/// Per-stage spread diagnostic taken from one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageDelta {
    pub stage: usize,
    pub sigma1: f64,
    pub alpha: f64,
    pub delta: f64,
    pub regime: Regime,
}

/// Mean PN standard deviation and mean PN scale of every stage.
pub fn stage_deltas<T: Float>(net: &PointNormNet<T>, g: &Graph<T>, pass: &ForwardPass<T>) -> Vec<StageDelta> {
    pass.pn_sigma
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let s = (*s)?;
            let sig = g.value(s).to_f64();
            let sigma1 = sig.iter().sum::<f64>() / sig.len() as f64;
            let alpha_t = &net.params()[net.layout().stages[i].pn_alpha].value;
            let alpha = alpha_t.to_f64().iter().sum::<f64>() / alpha_t.numel() as f64;
            let r = delta_for(alpha, sigma1, DEFAULT_EPS);
            Some(StageDelta {
                stage: i,
                sigma1,
                alpha,
                delta: r.delta,
                regime: r.regime,
            })
        })
        .collect()
}

/// Result of one training epoch.
#[derive(Clone, Debug)]
pub struct EpochOutcome {
    pub record: MetricsRecord,
    /// Diagnostic from the last batch of the epoch.
    pub deltas: Vec<StageDelta>,
}

/// Model plus optimizer state.
pub struct Trainer<T: Float> {
    pub net: PointNormNet<T>,
    pub state: AdamState<T>,
    pub config: TrainConfig,
}

fn batch_rng(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000);
    rng.set_stream(((epoch as u64) << 8) | stream);
    rng
}

impl<T: Float> Trainer<T> {
    pub fn new(net: PointNormNet<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = AdamState::new(net.params());
        Ok(Self { net, state, config })
    }

    /// Shuffles with a seed derived from `(seed, epoch)`, then runs every
    /// full batch through forward, backward and the optimizer. A final
    /// batch with a single cloud is skipped.
    pub fn train_epoch(&mut self, data: &Dataset, epoch: usize) -> Result<EpochOutcome> {
        self.train_epoch_at(data, epoch, self.config.lr_at(epoch))
    }

    pub fn train_epoch_at(&mut self, data: &Dataset, epoch: usize, lr: f64) -> Result<EpochOutcome> {
        if data.is_empty() {
            return Err(Error::arg("training set is empty"));
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut batch_rng(self.config.seed, epoch, 0));
        let mut aug_rng = batch_rng(self.config.seed, epoch, 1);
        let smoothing = T::of(self.config.label_smoothing);
        let adamw = self.config.adamw();

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut preds = Vec::with_capacity(data.len());
        let mut labels = Vec::with_capacity(data.len());
        let mut deltas = Vec::new();
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let clouds: Vec<Vec<Point>> = chunk
                .iter()
                .map(|&i| {
                    let c = &data.samples[i].coords;
                    if self.config.augment {
                        augment(c, self.config.translate_range, &mut aug_rng)
                    } else {
                        c.clone()
                    }
                })
                .collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| data.samples[i].label).collect();
            let mut g = Graph::new();
            let dropout_seed = batch_rng(self.config.seed, epoch, 2 + b as u64).random();
            let (pass, vars) = self.net.forward(&mut g, &clouds, Phase::Train { dropout_seed })?;
            let loss = g.label_smoothed_ce(pass.logits, &batch_labels, smoothing)?;
            let lv = g.value(loss).item().as_f64();
            if !lv.is_finite() {
                return Err(Error::numeric(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            preds.extend(argmax_rows(g.value(pass.logits)));
            labels.extend_from_slice(&batch_labels);
            loss_sum += lv * chunk.len() as f64;
            seen += chunk.len();
            deltas = stage_deltas(&self.net, &g, &pass);

            g.backward(loss)?;
            let grads: Vec<Option<Tensor<T>>> = vars.iter().map(|&v| g.take_grad(v)).collect();
            let batch_stats = pass.batch_stats;
            drop(g);
            adamw_step(self.net.params_mut(), &grads, &mut self.state, lr, &adamw).map_err(|e| match e {
                Error::Numeric(msg) => Error::numeric(format!("{msg} at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            self.net.update_running(&batch_stats);
        }
        if seen == 0 {
            return Err(Error::arg("no training batch with at least two clouds"));
        }
        let acc = accuracy_metrics(&preds, &labels, data.num_classes)?;
        Ok(EpochOutcome {
            record: MetricsRecord {
                epoch,
                loss: loss_sum / seen as f64,
                overall_accuracy: acc.overall_accuracy,
                mean_class_accuracy: acc.mean_class_accuracy,
                lr,
                wall_seconds: start.elapsed().as_secs_f64(),
            },
            deltas,
        })
    }
}

/// Row-wise argmax of `[batch, classes]` logits, lowest index on ties.
pub fn argmax_rows<T: Float>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Evaluation-mode predictions over a dataset.
pub fn predict_dataset<T: Float>(net: &PointNormNet<T>, data: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(batch_size.max(1)) {
        let clouds: Vec<Vec<Point>> = chunk.iter().map(|s| s.coords.clone()).collect();
        preds.extend(argmax_rows(&net.predict(&clouds)?));
    }
    Ok(preds)
}

/// Overall, mean-class and per-class accuracy on a labeled dataset.
pub fn evaluate<T: Float>(net: &PointNormNet<T>, data: &Dataset, batch_size: usize) -> Result<AccuracyReport> {
    if data.is_empty() {
        return Err(Error::arg("evaluation set is empty"));
    }
    let preds = predict_dataset(net, data, batch_size)?;
    let labels: Vec<usize> = data.samples.iter().map(|s| s.label).collect();
    accuracy_metrics(&preds, &labels, data.num_classes)
}

/// Samples in fixed order, for callers that batch by hand.
pub fn clouds_of(samples: &[Sample]) -> Vec<Vec<Point>> {
    samples.iter().map(|s| s.coords.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_augmentation() {
        let c = vec![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        assert_eq!(augment_with(&c, 0.0, [0.0; 3]), c);
    }

    #[test]
    fn augmentation_is_seeded() {
        let c = vec![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let a = augment(&c, 0.2, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment(&c, 0.2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn config_rejects_inverted_schedule() {
        let c = TrainConfig {
            lr_final: 0.1,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            label_smoothing: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        let t = Tensor::<f64>::from_f64(&[2, 3], &[1.0, 3.0, 3.0, 0.0, -1.0, -2.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
