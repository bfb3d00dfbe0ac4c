//! Central-difference verification of analytic gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{backward, build, forward, ModelConfig};
use crate::seeded_rng;
use crate::tensor::Tensor;
use crate::train::{batch_loss, ClassWeights};

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate that produced the maximum.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates left out because a non-differentiable point lies within
    /// `±step`.
    pub skipped: usize,
}

/// Compares `analytic` against `(f(θ+h) − f(θ−h)) / 2h` on every coordinate.
pub fn gradient_check<F>(f: F, params: &[f64], analytic: &[f64], step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..params.len()).collect();
    gradient_check_at(f, params, analytic, &coords, step)
}

/// Like [`gradient_check`] but only on the listed coordinates.
///
/// `f` must be deterministic; it is evaluated twice at `params` and any
/// difference is reported as a harness error.
pub fn gradient_check_at<F>(mut f: F, params: &[f64], analytic: &[f64], coords: &[usize], step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    gradient_check_piecewise(|t| (f(t), ()), params, analytic, coords, step)
}

/// Gradient check for piecewise-smooth functions. `f` also returns a tag
/// identifying the smooth piece it was evaluated on (for example a ReLU
/// activation pattern); coordinates whose `±step` evaluations leave the piece
/// of `params` are skipped and counted.
pub fn gradient_check_piecewise<F, P>(mut f: F, params: &[f64], analytic: &[f64], coords: &[usize], step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> (f64, P),
    P: PartialEq,
{
    if params.len() != analytic.len() {
        return Err(Error::Harness(format!("{} parameters but {} gradient entries", params.len(), analytic.len())));
    }
    if let Some(&i) = coords.iter().find(|&&i| i >= params.len()) {
        return Err(Error::Index { index: i, len: params.len() });
    }
    let (first, piece) = f(params);
    let (second, _) = f(params);
    if first.to_bits() != second.to_bits() {
        return Err(Error::Harness(format!("function is not deterministic: {first:e} then {second:e}")));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheckReport { max_relative_error: 0.0, worst: 0, analytic: 0.0, numeric: 0.0, checked: 0, skipped: 0 };
    for &i in coords {
        let original = theta[i];
        theta[i] = original + step;
        let (plus, plus_piece) = f(&theta);
        theta[i] = original - step;
        let (minus, minus_piece) = f(&theta);
        theta[i] = original;
        if plus_piece != piece || minus_piece != piece {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if !err.is_finite() {
            return Err(Error::Harness(format!("non-finite comparison at coordinate {i}")));
        }
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}

/// Gradients smaller than this (but nonzero) sit too close to the rounding
/// noise of a central difference with the default step to be compared at a
/// relative tolerance of `1e-4`.
pub const MIN_CHECKED_GRADIENT: f64 = 1e-6;

/// Settings for [`check_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelCheckOptions {
    pub batch: usize,
    /// Randomly chosen coordinates per parameter tensor, in addition to the
    /// coordinate with the largest analytic gradient. Candidates have an
    /// analytic gradient that is exactly zero or at least
    /// [`MIN_CHECKED_GRADIENT`] in magnitude.
    pub coords_per_tensor: usize,
    pub step: f64,
    /// Perturbs one analytic gradient entry so the check must fail.
    pub corrupt: bool,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        Self { batch: 4, coords_per_tensor: 8, step: DEFAULT_STEP, corrupt: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckReport {
    pub report: GradCheckReport,
    /// Tensor containing [`GradCheckReport::worst`].
    pub worst_tensor: String,
}

/// Checks full-model gradients of the mean batch cross-entropy at a random
/// initialisation drawn from `seed`.
///
/// The loss is evaluated in train mode; the dropout mask is frozen by
/// reseeding the mask generator on every evaluation. Coordinates whose
/// perturbation flips any ReLU are skipped (see [`gradient_check_piecewise`]).
pub fn check_model(config: &ModelConfig, seed: u64, options: &ModelCheckOptions) -> Result<ModelCheckReport> {
    config.validate()?;
    if options.batch == 0 {
        return Err(Error::Config("batch: must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut params = build(config, &mut rng)?;
    // Move batch-norm affine terms and biases away from their initial values
    // so every path carries a non-trivial gradient.
    for entry in params.entries_mut() {
        if entry.trainable && (entry.name.ends_with("bn_gamma") || entry.name.ends_with("bn_beta") || entry.tensor.rank() == 1) {
            for v in entry.tensor.data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
    }
    let series: Vec<Tensor> = (0..options.batch)
        .map(|_| Tensor::vector((0..config.series_length).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();
    let labels: Vec<usize> = (0..options.batch).map(|_| rng.gen_range(0..config.num_classes)).collect();
    let weights = ClassWeights::uniform(config.num_classes);
    let mask_seed = rng.gen::<u64>();

    let out = forward(&params, config, &series, Mode::Train, &mut seeded_rng(mask_seed))?;
    let (_, grad_logits) = batch_loss(&out.logits, &labels, &weights)?;
    let mut analytic = backward(&params, config, &out.cache, &grad_logits)?.flat();

    let names = params.trainable_names();
    let mut bounds = Vec::with_capacity(names.len());
    let mut coords = Vec::new();
    let mut offset = 0;
    for t in params.trainable() {
        let len = t.len();
        let slice = &analytic[offset..offset + len];
        let largest = (0..len).max_by(|&a, &b| slice[a].abs().total_cmp(&slice[b].abs())).unwrap_or(0);
        coords.push(offset + largest);
        let candidates: Vec<usize> =
            (0..len).filter(|&i| i != largest && (slice[i] == 0.0 || slice[i].abs() >= MIN_CHECKED_GRADIENT)).collect();
        let picks = sample(&mut rng, candidates.len(), options.coords_per_tensor.min(candidates.len()));
        coords.extend(picks.into_iter().map(|i| offset + candidates[i]));
        offset += len;
        bounds.push(offset);
    }
    if options.corrupt {
        let i = coords[coords.len() - 1];
        analytic[i] += 0.1 * (analytic[i].abs() + 1.0);
    }

    let theta = params.trainable_flat();
    let mut scratch = params.clone();
    let loss = |values: &[f64]| -> (f64, Vec<bool>) {
        let out = scratch
            .set_trainable_flat(values)
            .and_then(|_| forward(&scratch, config, &series, Mode::Train, &mut seeded_rng(mask_seed)));
        match out {
            Ok(out) => {
                let pattern = out.cache.relu_pattern().flatten().copied().collect();
                (batch_loss(&out.logits, &labels, &weights).map_or(f64::NAN, |(l, _)| l), pattern)
            }
            Err(_) => (f64::NAN, Vec::new()),
        }
    };
    let report = gradient_check_piecewise(loss, &theta, &analytic, &coords, options.step)?;
    let tensor = bounds.iter().position(|&end| report.worst < end).unwrap_or(0);
    Ok(ModelCheckReport { report, worst_tensor: names[tensor].clone() })
}
