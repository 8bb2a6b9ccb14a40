//! Dataset splitting, RMSprop, and the epoch loop with early stopping.

mod optimizer;

pub use optimizer::{OptimizerState, RmsPropConfig};

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imageproc::MultiChannelImage;
use crate::model::{predicted_class, ModelError, Network, CLASS_AFFECTED};
use crate::tensor::kernels::{softmax_cross_entropy, softmax_rows};
use crate::tensor::{Tape, TensorError};
use crate::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("optimizer: {0}")]
    Optimizer(String),
    /// `batch` is 1-based; 0 marks the validation pass.
    #[error("non-finite loss at epoch {epoch}, {}", batch_label(*batch))]
    NonFinite { epoch: usize, batch: usize },
    #[error("index {index} out of range for {len} samples")]
    Index { index: usize, len: usize },
    #[error("checkpoint callback failed: {0}")]
    Checkpoint(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn batch_label(batch: usize) -> String {
    match batch {
        0 => "validation pass".into(),
        b => format!("batch {b}"),
    }
}

impl TrainError {
    /// True when the failure stems from a NaN or infinite value.
    pub fn is_non_finite(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. }
                | TrainError::Tensor(TensorError::NonFinite { .. })
                | TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))
        )
    }
}

/// Preprocessed inputs (`7×H×W` each) with their class labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn from_images(images: &[MultiChannelImage], labels: Vec<usize>) -> Self {
        let inputs = images
            .iter()
            .map(|img| {
                img.to_tensor()
                    .reshape(vec![7, img.height(), img.width()])
                    .expect("same element count")
            })
            .collect();
        Self { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stacks the selected samples into an `N×7×H×W` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>), TrainError> {
        let mut refs = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(TrainError::Index {
                    index: i,
                    len: self.len(),
                });
            }
            refs.push(&self.inputs[i]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::stack(&refs)?, labels))
    }
}

/// Sizes of the three partitions; `val` is carved out of the `train` pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl SplitSpec {
    /// `test_fraction` of `total` goes to test; `val_fraction` of the
    /// remaining pool goes to validation. Counts are rounded.
    pub fn from_fractions(
        total: usize,
        test_fraction: f64,
        val_fraction: f64,
        seed: u64,
    ) -> Result<Self, TrainError> {
        for (name, f) in [
            ("test_fraction", test_fraction),
            ("val_fraction", val_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(TrainError::Split(format!(
                    "{name} must lie in [0, 1), got {f}"
                )));
            }
        }
        let test = (total as f64 * test_fraction).round() as usize;
        let train = total - test;
        let val = (train as f64 * val_fraction).round() as usize;
        let spec = Self {
            total,
            train,
            val,
            test,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.train + self.test != self.total {
            return Err(TrainError::Split(format!(
                "train {} + test {} != total {}",
                self.train, self.test, self.total
            )));
        }
        if self.val >= self.train {
            return Err(TrainError::Split(format!(
                "validation {} must be smaller than the training pool {}",
                self.val, self.train
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..total`, then the first `spec.train` indices form
/// the training pool (its first `spec.val` become validation) and the rest
/// form the test set.
pub fn split_dataset(labels: &[usize], spec: &SplitSpec) -> Result<Splits, TrainError> {
    spec.validate()?;
    if labels.len() != spec.total {
        return Err(TrainError::Split(format!(
            "{} labels for a split of {}",
            labels.len(),
            spec.total
        )));
    }
    let mut order: Vec<usize> = (0..spec.total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let test = order.split_off(spec.train);
    let train = order.split_off(spec.val);
    Ok(Splits {
        train,
        val: order,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            learning_rate: RmsPropConfig::default().learning_rate,
            rho: RmsPropConfig::default().rho,
            epsilon: RmsPropConfig::default().epsilon,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            rho: self.rho,
            epsilon: self.epsilon,
        }
    }
}

/// Tracks the best validation loss seen so far and a snapshot taken at
/// that epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopState<S> {
    pub patience: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub best: Option<S>,
    pub epochs_since_improve: usize,
}

/// Smallest decrease that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

impl<S> EarlyStopState<S> {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            best: None,
            epochs_since_improve: 0,
        }
    }

    /// Records an epoch's validation loss, calling `snapshot` on
    /// improvement. Returns whether it improved.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, snapshot: impl FnOnce() -> S) -> bool {
        let improved = if self.best.is_none() {
            true
        } else {
            val_loss < self.best_val_loss - MIN_IMPROVEMENT
        };
        if improved {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.best = Some(snapshot());
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_since_improve >= self.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
            );
        }
        out
    }
}

/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 32;

/// Mean cross-entropy and argmax accuracy over `indices`. Ties predict
/// class 0.
pub fn evaluate_loss(
    network: &Network,
    data: &Dataset,
    indices: &[usize],
) -> Result<Evaluation, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::Split(
            "cannot evaluate an empty index set".into(),
        ));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_BATCH) {
        let (batch, labels) = data.batch(chunk)?;
        let logits = network.forward(&batch)?;
        for (i, &label) in labels.iter().enumerate() {
            let row = logits.batch_item(i);
            let (loss, probs) = softmax_cross_entropy(&row, &[label])?;
            loss_sum += loss;
            let p: Vec<f64> = probs.data().iter().map(|&v| v as f64).collect();
            if predicted_class(&p) == label {
                correct += 1;
            }
        }
    }
    let n = indices.len() as f64;
    Ok(Evaluation {
        loss: loss_sum / n,
        accuracy: correct as f64 / n,
    })
}

/// Affected-class probabilities for `indices`, in order.
pub fn predict_scores(
    network: &Network,
    data: &Dataset,
    indices: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let mut scores = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let (batch, _) = data.batch(chunk)?;
        let logits = network.forward(&batch)?;
        scores.extend(
            softmax_rows(&logits)?
                .into_iter()
                .map(|p| p[CLASS_AFFECTED]),
        );
    }
    Ok(scores)
}

/// Trains `network` in place with RMSprop on `splits.train`, monitoring
/// loss on `splits.val`. Training stops after `patience` epochs without
/// improvement or at `max_epochs`; the network ends with the weights of the
/// best epoch. `on_improve` runs after every improvement, e.g. to write a
/// checkpoint.
pub fn fit<F>(
    network: &mut Network,
    data: &Dataset,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_improve: F,
) -> Result<History, TrainError>
where
    F: FnMut(&Network, &EpochRecord) -> Result<(), Box<dyn std::error::Error + Send + Sync>>,
{
    cfg.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(TrainError::Split(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let shapes: Vec<Vec<usize>> = network
        .parameters()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut optimizer = OptimizerState::new(cfg.optimizer(), &shapes);
    let mut stopper = EarlyStopState::<Network>::new(cfg.patience);
    let mut history = History::default();

    for epoch in 1..=cfg.max_epochs {
        let mut order = splits.train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            cfg.seed.wrapping_add(epoch as u64),
        ));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let non_finite = || TrainError::NonFinite {
                epoch,
                batch: b + 1,
            };
            let (batch, labels) = data.batch(chunk)?;
            let mut tape = Tape::<f32>::new();
            let rec = match network.record(&mut tape, &batch) {
                Err(ModelError::Tensor(TensorError::NonFinite { .. })) => return Err(non_finite()),
                other => other?,
            };
            let logits = tape.value(rec.logits).clone();
            let loss = match tape.softmax_cross_entropy(rec.logits, &labels) {
                Err(TensorError::NonFinite { .. }) => return Err(non_finite()),
                other => other?,
            };
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(non_finite());
            }
            loss_sum += loss_value * chunk.len() as f64;
            for (i, &label) in labels.iter().enumerate() {
                let row = &logits.data()[2 * i..2 * i + 2];
                let pred = if row[1] > row[0] { 1 } else { 0 };
                correct += usize::from(pred == label);
            }
            let mut grads = match tape.backward(loss) {
                Err(TensorError::NonFinite { .. }) => return Err(non_finite()),
                other => other?,
            };
            let grads: Vec<Tensor> = rec
                .params
                .iter()
                .zip(&shapes)
                .map(|(&v, shape)| grads.take(v).unwrap_or_else(|| Tensor::zeros(shape)))
                .collect();
            optimizer.step(&mut network.parameters_mut(), &grads)?;
        }

        let n = splits.train.len() as f64;
        let val = match evaluate_loss(network, data, &splits.val) {
            Ok(val) if val.loss.is_finite() => val,
            Err(e) if !e.is_non_finite() => return Err(e),
            _ => return Err(TrainError::NonFinite { epoch, batch: 0 }),
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
        };
        info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            record.train_loss, record.train_accuracy, record.val_loss, record.val_accuracy
        );
        history.epochs.push(record);
        if stopper.observe(epoch, val.loss, || network.clone()) {
            on_improve(network, &record).map_err(TrainError::Checkpoint)?;
        }
        if stopper.should_stop() {
            debug!(
                "early stop after epoch {epoch}, best epoch {}",
                stopper.best_epoch
            );
            break;
        }
    }

    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best_val_loss;
    if let Some(best) = stopper.best {
        *network = best;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_split_sizes() {
        let labels = vec![0; 7500];
        let spec = SplitSpec {
            total: 7500,
            train: 6000,
            val: 600,
            test: 1500,
            seed: 1,
        };
        let s = split_dataset(&labels, &spec).unwrap();
        assert_eq!(
            (s.train.len(), s.val.len(), s.test.len()),
            (5400, 600, 1500)
        );
    }

    #[test]
    fn inconsistent_split_rejected() {
        let bad = SplitSpec {
            total: 10,
            train: 7,
            val: 2,
            test: 2,
            seed: 0,
        };
        assert!(split_dataset(&[0; 10], &bad).is_err());
        let bad = SplitSpec {
            train: 8,
            val: 8,
            ..bad
        };
        assert!(split_dataset(&[0; 10], &bad).is_err());
    }

    #[test]
    fn fractions_round() {
        let s = SplitSpec::from_fractions(7500, 0.2, 0.1, 0).unwrap();
        assert_eq!((s.train, s.val, s.test), (6000, 600, 1500));
        assert!(SplitSpec::from_fractions(10, 1.0, 0.1, 0).is_err());
    }

    #[test]
    fn early_stop_bookkeeping() {
        let mut st = EarlyStopState::new(2);
        let mut stopped_at = None;
        for (i, &loss) in [1.0, 0.9, 0.95, 0.96, 0.5].iter().enumerate() {
            let epoch = i + 1;
            st.observe(epoch, loss, || epoch);
            if st.should_stop() {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(st.best, Some(2));
        assert_eq!(st.best_val_loss, 0.9);
    }

    #[test]
    fn tiny_decrease_is_not_improvement() {
        let mut st = EarlyStopState::new(5);
        st.observe(1, 1.0, || ());
        assert!(!st.observe(2, 1.0 - 5e-7, || ()));
        assert!(st.observe(3, 1.0 - 2e-6, || ()));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                max_epochs: 0,
                ..TrainConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
