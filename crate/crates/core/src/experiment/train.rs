use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::FeatureImage;
use crate::autodiff::init::rng;
use crate::autodiff::{Adam, Graph, Scalar};
use crate::chat::TokenSequence;
use crate::error::{invalid, Error, Result};
use crate::fusion::FusionModel;

use super::{evaluate_metrics, Metrics, PlateauScheduler, Sample};

/// Optimisation and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    /// Minimum decrease of the best validation loss that counts as progress.
    pub min_delta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub repetitions: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 3,
            early_stop_patience: 6,
            min_delta: 1e-6,
            max_epochs: 200,
            batch_size: 8,
            seed: 0,
            val_fraction: 0.35,
            repetitions: 5,
        }
    }
}

impl TrainConfig {
    /// Learning rate of the reference setup, too slow for randomly
    /// initialised encoders but kept for fidelity runs.
    pub const REFERENCE_LR: f64 = 1e-5;

    pub fn with_reference_lr(self) -> Self {
        Self {
            lr: Self::REFERENCE_LR,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(invalid(format!("val_fraction {} is not in (0, 1)", self.val_fraction)));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(invalid("patience values must be at least 1"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.repetitions == 0 {
            return Err(invalid("batch_size, max_epochs and repetitions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate after this epoch's schedule update.
    pub lr: f64,
    pub improved: bool,
    pub val: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Model outputs over a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub metrics: Metrics,
    /// Probability of class 1 per sample.
    pub probabilities: Vec<f64>,
    pub predictions: Vec<u8>,
    /// Mean GMU gate over samples and gate dimensions, for GMU models.
    pub mean_gate: Option<f64>,
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { op } => Error::Diverged {
            epoch,
            msg: format!("non-finite values in {op}"),
        },
        other => other,
    }
}

type BatchRefs<'a> = (Vec<&'a FeatureImage>, Vec<&'a TokenSequence>, Vec<usize>);

fn batch_refs<'a>(samples: &[&'a Sample]) -> BatchRefs<'a> {
    (
        samples.iter().map(|s| &s.image).collect(),
        samples.iter().map(|s| &s.tokens).collect(),
        samples.iter().map(|s| s.label as usize).collect(),
    )
}

/// Mean cross-entropy, metrics and per-sample outputs; no parameter
/// changes.
pub fn evaluate<T: Scalar>(model: &FusionModel<T>, samples: &[Sample], batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(invalid("cannot evaluate on an empty sample set"));
    }
    let mut loss = 0.0;
    let mut probabilities = Vec::with_capacity(samples.len());
    let (mut gate_sum, mut gate_count) = (0.0, 0usize);
    let refs: Vec<&Sample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (images, tokens, labels) = batch_refs(chunk);
        let mut g = Graph::new();
        let (_, out) = model.forward(&mut g, &images, &tokens)?;
        let l = g.cross_entropy(out.logits, &labels)?;
        loss += g.value(l).item().as_f64() * chunk.len() as f64;
        let probs = g.softmax(out.logits, 1)?;
        probabilities.extend(g.value(probs).data().chunks(2).map(|row| row[1].as_f64()));
        if let Some(z) = out.gate {
            let z = g.value(z).data();
            gate_sum += z.iter().map(|v| v.as_f64()).sum::<f64>();
            gate_count += z.len();
        }
    }
    let predictions: Vec<u8> = probabilities.iter().map(|&p| u8::from(p > 0.5)).collect();
    let truth: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        loss: loss / samples.len() as f64,
        metrics: evaluate_metrics(&predictions, &truth)?,
        probabilities,
        predictions,
        mean_gate: (gate_count > 0).then(|| gate_sum / gate_count as f64),
    })
}

/// Adam on cross-entropy with shuffled mini-batches, plateau learning-rate
/// reduction and early stopping on validation loss. Returns the weights
/// from the epoch with the lowest validation loss.
pub fn train(
    mut model: FusionModel<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
) -> Result<(FusionModel<f32>, History)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid("training and validation sets must be non-empty"));
    }
    let mut r = rng(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut sched = PlateauScheduler::new(
        cfg.lr,
        cfg.plateau_factor,
        cfg.plateau_patience,
        cfg.early_stop_patience,
        cfg.min_delta,
    );
    let mut order: Vec<&Sample> = train_set.iter().collect();
    let mut best = model.params.clone();
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut r);
        let mut train_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (images, tokens, labels) = batch_refs(chunk);
            let mut g = Graph::new();
            let (p, out) = model.forward(&mut g, &images, &tokens).map_err(diverged(epoch))?;
            let loss = g.cross_entropy(out.logits, &labels).map_err(diverged(epoch))?;
            let l = g.value(loss).item() as f64;
            let grads = g.backward(loss).map_err(diverged(epoch))?;
            let grads = model.params.collect_grads(&grads, &p);
            adam.step(&mut model.params, &grads);
            train_loss += l * chunk.len() as f64;
        }
        let train_loss = train_loss / train_set.len() as f64;
        let eval = evaluate(&model, val_set, cfg.batch_size).map_err(diverged(epoch))?;
        if !train_loss.is_finite() || !eval.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: format!("train loss {train_loss}, validation loss {}", eval.loss),
            });
        }
        let step = sched.step(eval.loss);
        if step.improved {
            best = model.params.clone();
            history.best_epoch = epoch;
            history.best_val_loss = eval.loss;
        }
        adam.lr = step.lr;
        log::debug!(
            "{} epoch {epoch}: train {train_loss:.4} val {:.4} acc {:.3} lr {:.1e}",
            model.kind,
            eval.loss,
            eval.metrics.accuracy,
            step.lr
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.loss,
            lr: step.lr,
            improved: step.improved,
            val: eval.metrics,
        });
        if step.stop {
            history.stopped_early = true;
            break;
        }
    }
    model.params = best;
    Ok((model, history))
}
