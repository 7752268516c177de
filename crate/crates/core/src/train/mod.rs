//! Training loop, optimizers, evaluation metrics, stream classification and
//! feature-map dumps.

mod features;
mod loss;
mod metrics;
mod optim;
mod stream;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::layers::ForwardCtx;
use crate::models::{save_checkpoint, CheckpointMeta, Model, Variant};
use crate::tensor::Tensor;

pub use features::{dump_feature_maps, write_pgm, FeatureMap};
pub use loss::{cross_entropy_loss, PROB_FLOOR};
pub use metrics::{argmax, confusion_matrix, evaluate, f1_score, predict_dataset, ClassScores, Metrics};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use stream::{sliding_window_classify, window_starts, StreamWindowResult, STREAM_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rescale the joint gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// Write a checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            batch_size: 4,
            epochs: 30,
            seed: 0,
            clip_norm: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// Settings for the reduced desk-scale models on the synthetic dataset:
    /// Adam, batch 8, 30 epochs, lr 1e-3 (3e-4 for the deep VGG stack).
    pub fn desk(variant: Variant) -> Self {
        let learning_rate = match variant {
            Variant::LrcnVgg => 3e-4,
            _ => 1e-3,
        };
        TrainConfig { learning_rate, batch_size: 8, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("clip norm must be positive, got {c}")));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint cadence must be at least 1 epoch"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    /// Mean over the epoch's clips, measured in train mode before each update.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_accuracy,val_loss,val_accuracy";

/// One header line, then one line per epoch; a missing validation set leaves
/// its columns empty.
pub fn history_csv(history: &[HistoryRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for h in history {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            h.epoch,
            h.train_loss,
            h.train_accuracy,
            opt(h.val_loss),
            opt(h.val_accuracy)
        );
    }
    out
}

struct StepStats {
    loss_sum: f64,
    correct: usize,
}

/// Forward and backward over `batch`, then one optimizer update with the
/// mean gradient.
fn step(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    batch: &[&Sample],
    ctx: &mut ForwardCtx,
    clip_norm: Option<f64>,
    at: (usize, usize),
) -> Result<StepStats> {
    let diverged = |what: String| Error::Divergence(format!("epoch {}, step {}: {what}", at.0, at.1));
    let scale = 1.0 / batch.len() as f32;
    let mut grads: Option<Vec<Tensor<f32>>> = None;
    let mut stats = StepStats { loss_sum: 0.0, correct: 0 };
    for s in batch {
        let (logits, cache) = model.forward_logits(&s.clip, ctx)?;
        if !logits.all_finite() {
            return Err(diverged("non-finite logits".into()));
        }
        let p = logits.softmax()?;
        let loss = -(p.data()[s.label] as f64).max(PROB_FLOOR).ln();
        if !loss.is_finite() {
            return Err(diverged(format!("loss {loss}")));
        }
        stats.loss_sum += loss;
        stats.correct += usize::from(argmax(p.data()) == s.label);
        let mut g = p;
        g.data_mut()[s.label] -= 1.0;
        let g = g.scale(scale);
        let param_grads = model.backward(&cache, &g)?;
        match grads.as_mut() {
            None => grads = Some(param_grads),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&param_grads) {
                    a.add_assign(b)?;
                }
            }
        }
    }
    let mut grads = grads.ok_or_else(|| Error::data("empty batch"))?;
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(diverged("non-finite gradient".into()));
    }
    if let Some(c) = clip_norm {
        clip_grad_norm(&mut grads, c);
    }
    opt.step(&mut model.params_mut(), &grads)?;
    Ok(stats)
}

/// Train with seeded per-epoch shuffling. `on_epoch` sees each record as it
/// is produced. Checkpoints `epoch-NNN.ckpt` go to `checkpoint_dir` at the
/// configured cadence.
pub fn train_with(
    model: &mut Model<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&HistoryRecord),
) -> Result<Vec<HistoryRecord>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (k, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let mut ctx = ForwardCtx::training(rng.next_u64());
            let s = step(model, &mut opt, &batch, &mut ctx, cfg.clip_norm, (epoch, k + 1))?;
            loss_sum += s.loss_sum;
            correct += s.correct;
        }
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (preds, _, loss) = predict_dataset(model, val)?;
            let hits = preds.iter().zip(val.labels()).filter(|(p, y)| **p == *y).count();
            (Some(loss), Some(hits as f64 / val.len() as f64))
        };
        let record = HistoryRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        on_epoch(&record);
        history.push(record);
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, checkpoint_dir) {
            if epoch % every == 0 {
                let meta = CheckpointMeta { epoch: epoch as u64, seed: cfg.seed, ..CheckpointMeta::default() };
                save_checkpoint(model, dir.join(format!("epoch-{epoch:03}.ckpt")), &meta)?;
            }
        }
    }
    Ok(history)
}

pub fn train(model: &mut Model<f32>, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Vec<HistoryRecord>> {
    train_with(model, train, val, cfg, None, |_| {})
}

/// Repeated updates on one fixed batch until its eval-mode loss drops below
/// `target` or `max_steps` updates were made. Returns `(steps, final loss)`.
pub fn overfit_batch(
    model: &mut Model<f32>,
    batch: &Dataset,
    cfg: &TrainConfig,
    max_steps: usize,
    target: f64,
) -> Result<(usize, f64)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::data("overfit batch is empty"));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<&Sample> = batch.samples.iter().collect();
    let mut loss = predict_dataset(model, batch)?.2;
    let mut steps = 0;
    while steps < max_steps && loss >= target {
        steps += 1;
        let mut ctx = ForwardCtx::training(rng.next_u64());
        step(model, &mut opt, &samples, &mut ctx, cfg.clip_norm, (1, steps))?;
        loss = predict_dataset(model, batch)?.2;
    }
    Ok((steps, loss))
}
