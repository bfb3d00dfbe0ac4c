//! Phase-one training, phase-two fine-tuning and evaluation.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{dim_err, Error, Result};
use crate::layers::{softmax_cross_entropy, Mode};
use crate::model::{argmax, backward, forward, predict, ModelConfig, ModelParams, Variant};
use crate::optim::{AdamState, FineTuneSchedule, PlateauScheduler, FINAL_LR, INITIAL_LR, PLATEAU_PATIENCE};
use crate::seeded_rng;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub plateau_patience: usize,
    pub class_weighting: bool,
    /// Fine-tuning repetitions `K`.
    pub finetune_iterations: usize,
    /// Epochs per fine-tuning repetition; `None` reuses `epochs`.
    pub finetune_epochs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 128,
            seed: 0,
            learning_rate: INITIAL_LR,
            min_learning_rate: FINAL_LR,
            plateau_patience: PLATEAU_PATIENCE,
            class_weighting: true,
            finetune_iterations: 5,
            finetune_epochs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size: must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.min_learning_rate > 0.0) {
            return Err(Error::Config("learning_rate: must be positive".into()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience: must be at least 1".into()));
        }
        Ok(())
    }

    /// A fine-tuning schedule starting from this config's learning rate and batch size.
    pub fn finetune_schedule(&self) -> FineTuneSchedule {
        FineTuneSchedule::new(self.finetune_iterations, self.learning_rate, self.batch_size)
    }
}

/// Per-class loss weights equalising the weighted class frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self(alloc::vec![1.0; classes])
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

/// `weight_c = total / (C · count_c)`
pub fn compute_class_weights(labels: &[usize], class_count: usize) -> Result<ClassWeights> {
    let mut counts = alloc::vec![0usize; class_count];
    for &l in labels {
        if l >= class_count {
            return Err(Error::Index { index: l, len: class_count });
        }
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("class {empty} has no training samples")));
    }
    let total = labels.len() as f64;
    Ok(ClassWeights(counts.iter().map(|&c| total / (class_count as f64 * c as f64)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub best_val_accuracy: f64,
}

/// Progress hooks for long-running loops.
pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) {}
    fn on_iteration_start(&mut self, _iteration: usize, _lr: f64, _batch_size: usize) {}
    /// Called after each fine-tuning repetition with the already advanced
    /// schedule and the weights the next repetition starts from.
    fn on_iteration_end(&mut self, _schedule: &FineTuneSchedule, _params: &ModelParams) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best monitored accuracy (the initial weights when no
    /// epoch ran).
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub iterations: Vec<IterationRecord>,
    pub initial_val_accuracy: f64,
    pub best_val_accuracy: f64,
    pub schedule: FineTuneSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

fn check_data(config: &ModelConfig, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Config(format!("dataset {:?} is empty", dataset.name)));
    }
    if dataset.series_length() != config.series_length {
        return Err(dim_err(
            "dataset",
            format!("series length {} does not match the model's {}", dataset.series_length(), config.series_length),
        ));
    }
    if dataset.class_count() > config.num_classes {
        return Err(Error::Index { index: dataset.class_count() - 1, len: config.num_classes });
    }
    Ok(())
}

/// Inference-mode predictions (ties resolved to the lowest class) and accuracy.
pub fn evaluate(params: &ModelParams, config: &ModelConfig, dataset: &Dataset) -> Result<Evaluation> {
    check_data(config, dataset)?;
    let mut predictions = Vec::with_capacity(dataset.len());
    for chunk in dataset.series().chunks(EVAL_CHUNK) {
        let (logits, _) = predict(params, config, chunk)?;
        predictions.extend(logits.data().chunks_exact(config.num_classes).map(argmax));
    }
    let correct = predictions.iter().zip(dataset.labels()).filter(|(p, l)| p == l).count();
    Ok(Evaluation { accuracy: correct as f64 / dataset.len() as f64, predictions })
}

/// Inference-mode attention weights, one length-`N` row per series.
pub fn attention_weights(params: &ModelParams, config: &ModelConfig, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    if config.variant != Variant::AlstmFcn {
        return Err(Error::Config("no attention weights in this variant".into()));
    }
    check_data(config, dataset)?;
    let mut rows = Vec::with_capacity(dataset.len());
    for chunk in dataset.series().chunks(EVAL_CHUNK) {
        let (_, alphas) = predict(params, config, chunk)?;
        let alphas = alphas.ok_or_else(|| Error::Internal("attention variant produced no weights".into()))?;
        rows.extend(alphas.data().chunks_exact(config.series_length).map(<[f64]>::to_vec));
    }
    Ok(rows)
}

/// Mean class-weighted cross-entropy of a batch and its logit gradient.
pub fn batch_loss(logits: &Tensor, labels: &[usize], weights: &ClassWeights) -> Result<(f64, Tensor)> {
    let classes = logits.shape()[1];
    let b = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let ce = softmax_cross_entropy(row, label, weights.get(label))?;
        total += ce.loss;
        grad.extend(ce.grad_logits.iter().map(|g| g / b));
    }
    Ok((total / b, Tensor::new(logits.shape().to_vec(), grad)?))
}

struct Run {
    best: ModelParams,
    best_score: Option<f64>,
    best_epoch: Option<usize>,
    history: Vec<EpochRecord>,
}

#[allow(clippy::too_many_arguments)]
fn run_epochs(
    mut params: ModelParams,
    config: &ModelConfig,
    train: &Dataset,
    monitor: &Dataset,
    tc: &TrainConfig,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<Run> {
    let weights = if tc.class_weighting {
        compute_class_weights(train.labels(), config.num_classes)?
    } else {
        ClassWeights::uniform(config.num_classes)
    };
    let mut rng = seeded_rng(seed);
    let mut adam = AdamState::new(lr, params.trainable());
    let mut scheduler = PlateauScheduler::new(lr);
    scheduler.patience = tc.plateau_patience;
    scheduler.floor = tc.min_learning_rate;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut run = Run { best: params.clone(), best_score: None, best_epoch: None, history: Vec::with_capacity(epochs) };

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(batch_size) {
            let series: Vec<Tensor> = idx.iter().map(|&i| train.series()[i].clone()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels()[i]).collect();
            let out = forward(&params, config, &series, Mode::Train, &mut rng).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch },
                other => other,
            })?;
            let (loss, grad) = batch_loss(&out.logits, &labels, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss * idx.len() as f64;
            let grads = backward(&params, config, &out.cache, &grad)?;
            params.absorb_batch_stats(&out.cache);
            adam.update(&mut params.trainable_mut(), &grads.tensors)?;
        }
        let val_accuracy = evaluate(&params, config, monitor)
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch },
                other => other,
            })?
            .accuracy;
        let record = EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_accuracy, lr: adam.lr, batch_size };
        observer.on_epoch(&record);
        run.history.push(record);
        if run.best_score.map_or(true, |b| val_accuracy > b) {
            run.best_score = Some(val_accuracy);
            run.best_epoch = Some(epoch);
            run.best = params.clone();
        }
        adam.lr = scheduler.update(val_accuracy);
    }
    Ok(run)
}

/// Phase one: trains with Adam from `tc.learning_rate`, decaying on
/// validation plateaus, and keeps the best-validation weights.
///
/// `monitor` is the split whose accuracy drives the scheduler and checkpoint
/// selection.
pub fn train_phase1(
    params: ModelParams,
    config: &ModelConfig,
    train: &Dataset,
    monitor: &Dataset,
    tc: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    config.validate()?;
    tc.validate()?;
    check_data(config, train)?;
    check_data(config, monitor)?;
    let run = run_epochs(params, config, train, monitor, tc, tc.learning_rate, tc.batch_size, tc.epochs, tc.seed, observer)?;
    Ok(TrainOutcome { params: run.best, history: run.history, best_val_accuracy: run.best_score, best_epoch: run.best_epoch })
}

fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Phase two: repeated re-training following `schedule`. Each repetition
/// starts from the previous repetition's best weights with a fresh optimiser;
/// the best weights seen on `monitor` (the initial model included) are
/// returned.
pub fn finetune_phase2(
    params: ModelParams,
    config: &ModelConfig,
    train: &Dataset,
    monitor: &Dataset,
    tc: &TrainConfig,
    mut schedule: FineTuneSchedule,
    observer: &mut dyn TrainObserver,
) -> Result<FineTuneOutcome> {
    config.validate()?;
    tc.validate()?;
    check_data(config, train)?;
    check_data(config, monitor)?;
    let initial_val_accuracy = evaluate(&params, config, monitor)?.accuracy;
    let epochs = tc.finetune_epochs.unwrap_or(tc.epochs);
    let mut best = (initial_val_accuracy, params.clone());
    let mut current = params;
    let mut history = Vec::new();
    let mut iterations = Vec::new();
    while !schedule.is_exhausted() {
        let (lr, batch_size) = schedule.current();
        let iteration = schedule.iteration;
        observer.on_iteration_start(iteration, lr, batch_size);
        let run = run_epochs(current, config, train, monitor, tc, lr, batch_size, epochs, iteration_seed(tc.seed, iteration), observer)?;
        let score = run.best_score.unwrap_or(f64::NEG_INFINITY);
        if score > best.0 {
            best = (score, run.best.clone());
        }
        history.extend(run.history);
        iterations.push(IterationRecord { iteration, lr, batch_size, best_val_accuracy: score });
        current = run.best;
        schedule.advance()?;
        observer.on_iteration_end(&schedule, &current);
    }
    Ok(FineTuneOutcome { params: best.1, history, iterations, initial_val_accuracy, best_val_accuracy: best.0, schedule })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn class_weight_examples() {
        assert_eq!(compute_class_weights(&[0, 1, 0, 1], 2).unwrap().0, vec![1.0, 1.0]);
        let labels: Vec<usize> = core::iter::repeat(0).take(30).chain(core::iter::repeat(1).take(10)).collect();
        let w = compute_class_weights(&labels, 2).unwrap();
        assert!((w.0[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.0[1], 2.0);
    }

    #[test]
    fn empty_class_is_named() {
        let err = compute_class_weights(&[0, 0, 2], 3).unwrap_err();
        assert_eq!(err, Error::Config("class 1 has no training samples".into()));
    }

    #[test]
    fn weighted_loss_equals_unweighted_on_balanced_data() {
        let logits = Tensor::new(vec![4, 2], vec![0.1, -0.3, 2.0, 0.5, -1.0, 1.0, 0.0, 0.2]).unwrap();
        let labels = [0, 1, 1, 0];
        let w = compute_class_weights(&labels, 2).unwrap();
        let (a, ga) = batch_loss(&logits, &labels, &w).unwrap();
        let (b, gb) = batch_loss(&logits, &labels, &ClassWeights::uniform(2)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert_eq!(ga, gb);
    }
}
