//! Training loop, evaluation, prediction and metrics export.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use crate::data::batch::{Batch, BatchStream, ImageCache};
use crate::data::imageops::{decode_resize, normalize, AugmentConfig};
use crate::data::DatasetIndex;
use crate::error::{Error, Result};
use crate::layers::network::{Mode, Network};
use crate::optim::{adam_step, cross_entropy, softmax_xent_gradient, AdamState};
use crate::tensor::{argmax, Element};

/// Defaults follow the reference experiment: 50 epochs, batch 32,
/// learning rate 0.01, augmentation on.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub augment: bool,
    /// Decoded-image cache keyed by path.
    pub cache: bool,
    /// Prepare batches ahead of the consumer on a worker thread.
    pub prefetch: bool,
    /// Single-threaded, no prefetch, wall-clock column zeroed: two runs
    /// with the same seed produce byte-identical artifacts.
    pub deterministic: bool,
    /// Stop once training accuracy reaches this value (inclusive).
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 42,
            augment: true,
            cache: true,
            prefetch: true,
            deterministic: false,
            stop_at_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::argument("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::argument("batch size must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::argument("learning rate must be > 0"));
        }
        Ok(())
    }
}

/// One row of the training history.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub class_index: usize,
    pub class_name: String,
    pub confidence: f64,
    pub distribution: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    /// rows = true class, cols = predicted class
    pub confusion: Vec<Vec<usize>>,
    pub per_class_recall: Vec<f64>,
    pub samples: usize,
}

/// Train in place over the train split, scoring the validation split after
/// every epoch. `sink` sees each epoch's metrics as they are produced.
pub fn train<E: Element>(
    net: &mut Network<E>,
    train_idx: &DatasetIndex,
    val_idx: &DatasetIndex,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let cache = cfg.cache.then(ImageCache::new);
    let prefetch = cfg.prefetch && !cfg.deterministic;
    let augment = cfg.augment.then(AugmentConfig::default);
    let mut state = AdamState::new(net, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let stream = BatchStream::new(
            train_idx,
            cfg.batch_size,
            cfg.seed,
            epoch,
            augment,
            cache.clone(),
            prefetch,
        )?;
        let mut loss_sum = 0.0;
        let mut correct_sum = 0.0;
        let mut seen = 0usize;
        for batch in stream {
            let Batch {
                x, y, index_in_epoch, ..
            } = batch?;
            let n = y.len();
            let (probs, fwd_cache) = net.forward(x.cast(), Mode::Train)?;
            let loss = cross_entropy(&probs, &y)?;
            if !loss.mean_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {index_in_epoch}"
                )));
            }
            let grad_logits = softmax_xent_gradient(&probs, &y)?;
            let grads = net.backward(fwd_cache.as_ref().expect("train mode"), grad_logits)?;
            adam_step(net, &grads, &mut state)?;
            loss_sum += loss.mean_loss * n as f64;
            correct_sum += loss.batch_accuracy * n as f64;
            seen += n;
        }
        let (train_loss, train_acc) = (loss_sum / seen as f64, correct_sum / seen as f64);
        let report = evaluate_with(net, val_idx, cfg.batch_size, cache.clone())?;
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            train_accuracy: train_acc,
            val_loss: report.loss,
            val_accuracy: report.accuracy,
            wall_seconds: if cfg.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        };
        sink(&metrics);
        history.push(metrics);
        if let Some(target) = cfg.stop_at_train_accuracy {
            if train_acc >= target {
                break;
            }
        }
    }
    Ok(history)
}

/// Score an index without augmentation and without touching parameters.
pub fn evaluate<E: Element>(net: &Network<E>, index: &DatasetIndex) -> Result<EvalReport> {
    evaluate_with(net, index, 32, None)
}

pub fn evaluate_with<E: Element>(
    net: &Network<E>,
    index: &DatasetIndex,
    batch_size: usize,
    cache: Option<Arc<ImageCache>>,
) -> Result<EvalReport> {
    if index.is_empty() {
        return Err(Error::Dataset("evaluation split is empty".into()));
    }
    let k = index.class_names.len();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut loss_sum = 0.0;
    let mut samples = 0usize;
    let stream = BatchStream::new(index, batch_size, 0, 0, None, cache, false)?;
    for batch in stream {
        let Batch { x, y, .. } = batch?;
        let n = y.len();
        let (probs, _) = net.forward(x.cast(), Mode::Infer)?;
        let loss = cross_entropy(&probs, &y)?;
        loss_sum += loss.mean_loss * n as f64;
        let kk = probs.shape().dims()[1];
        for (i, &label) in y.iter().enumerate() {
            let row = &probs.data()[i * kk..(i + 1) * kk];
            confusion[label][argmax(row)?] += 1;
        }
        samples += n;
    }
    let diag: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class_recall = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                0.0
            } else {
                row[i] as f64 / total as f64
            }
        })
        .collect::<Vec<_>>();
    Ok(EvalReport {
        loss: loss_sum / samples as f64,
        accuracy: diag as f64 / samples as f64,
        confusion,
        per_class_recall,
        samples,
    })
}

/// Decode, resize, normalize, run inference, report the argmax class with
/// its confidence and the full distribution.
pub fn predict<E: Element>(
    net: &Network<E>,
    class_names: &[String],
    image_path: &Path,
) -> Result<Prediction> {
    let img = decode_resize(image_path)?;
    let x = normalize(&img);
    let (probs, _) = net.forward(x.cast(), Mode::Infer)?;
    let row: Vec<f64> = probs.data().iter().map(|&v| v.to_f64()).collect();
    let class_index = argmax(&row)?;
    Ok(Prediction {
        class_index,
        class_name: class_names
            .get(class_index)
            .cloned()
            .unwrap_or_else(|| format!("class_{class_index}")),
        confidence: row[class_index],
        distribution: row,
    })
}

/// CSV export of a training history:
/// `epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds`.
pub fn export_metrics(history: &[EpochMetrics], path: &Path) -> Result<()> {
    if history.is_empty() {
        return Err(Error::argument("cannot export an empty history"));
    }
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc,wall_seconds\n");
    for m in history {
        writeln!(
            out,
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.3}",
            m.epoch, m.train_loss, m.train_accuracy, m.val_loss, m.val_accuracy, m.wall_seconds
        )
        .expect("write to string");
    }
    std::fs::write(path, out)?;
    Ok(())
}
