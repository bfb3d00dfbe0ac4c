use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Mode;
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

/// Per-channel affine parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNormParams {
    /// Identity initialisation: `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::filled(&[features], 1.0),
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Folds the batch statistics recorded by a train-mode pass into the
    /// running estimates. Inference caches carry no statistics and are ignored.
    pub fn absorb(&mut self, cache: &BatchNormCache, momentum: f64) {
        let Some((mean, var)) = &cache.batch_stats else { return };
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = momentum * *r + (1.0 - momentum) * m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = momentum * *r + (1.0 - momentum) * v;
        }
    }
}

/// Values retained by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    mode: Mode,
    shape: [usize; 3],
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    /// Per-channel batch mean and (biased) variance, train mode only.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

fn dims(x: &Tensor) -> Result<[usize; 3]> {
    match *x.shape() {
        [b, f, t] => Ok([b, f, t]),
        ref s => Err(dim_err("batch_norm", format!("expected B×F×T, got {s:?}"))),
    }
}

/// Normalises a `B × F × T` batch per channel over batch and time.
///
/// The parameters are not touched; call [`BatchNormParams::absorb`] with the
/// returned cache to update the running statistics after a train-mode pass.
pub fn batch_norm_apply(params: &BatchNormParams, x: &Tensor, mode: Mode, eps: f64) -> Result<(Tensor, BatchNormCache)> {
    let shape = dims(x)?;
    let mut out = x.clone();
    let cache = batch_norm_in_place(params, out.data_mut(), shape, mode, eps)?;
    Ok((out, cache))
}

/// [`batch_norm_apply`] on a raw `B × F × T` buffer, overwritten with the output.
pub(crate) fn batch_norm_in_place(params: &BatchNormParams, data: &mut [f64], shape: [usize; 3], mode: Mode, eps: f64) -> Result<BatchNormCache> {
    let [batch, features, len] = shape;
    if features != params.features() {
        return Err(dim_err("batch_norm", format!("input has {features} channels, parameters have {}", params.features())));
    }
    let count = batch * len;
    if count == 0 {
        return Err(dim_err("batch_norm", "no values per channel".into()));
    }
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; features];
            let mut var = vec![0.0; features];
            for f in 0..features {
                let rows = (0..batch).map(|b| &data[(b * features + f) * len..(b * features + f + 1) * len]);
                let m = rows.clone().flatten().sum::<f64>() / count as f64;
                let v = rows.flatten().map(|x| (x - m) * (x - m)).sum::<f64>() / count as f64;
                mean[f] = m;
                var[f] = v;
            }
            (mean, var)
        }
        Mode::Infer => (params.running_mean.data().to_vec(), params.running_var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut normalized = vec![0.0; data.len()];
    let (gamma, beta) = (params.gamma.data(), params.beta.data());
    for (i, (row, norm_row)) in data.chunks_exact_mut(len).zip(normalized.chunks_exact_mut(len)).enumerate() {
        let f = i % features;
        for (x, n) in row.iter_mut().zip(norm_row) {
            let xh = (*x - mean[f]) * inv_std[f];
            *n = xh;
            *x = gamma[f] * xh + beta[f];
        }
    }
    let batch_stats = (mode == Mode::Train).then_some((mean, var));
    Ok(BatchNormCache { mode, shape, normalized, inv_std, batch_stats })
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward(params: &BatchNormParams, cache: &BatchNormCache, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [batch, features, len] = cache.shape;
    let count = (batch * len) as f64;
    let gamma = params.gamma.data();
    let mut d_gamma = vec![0.0; features];
    let mut d_beta = vec![0.0; features];
    let mut d_input = vec![0.0; grad_out.len()];
    for f in 0..features {
        let idx = |b: usize| (b * features + f) * len..(b * features + f + 1) * len;
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for b in 0..batch {
            for t in idx(b) {
                sum_dy += grad_out[t];
                sum_dy_xh += grad_out[t] * cache.normalized[t];
            }
        }
        d_gamma[f] = sum_dy_xh;
        d_beta[f] = sum_dy;
        let scale = gamma[f] * cache.inv_std[f];
        for b in 0..batch {
            for t in idx(b) {
                d_input[t] = match cache.mode {
                    Mode::Train => scale * (grad_out[t] - sum_dy / count - cache.normalized[t] * sum_dy_xh / count),
                    Mode::Infer => scale * grad_out[t],
                };
            }
        }
    }
    (d_input, d_gamma, d_beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_value_batch_hand_example() {
        let p = BatchNormParams::new(1);
        let x = Tensor::new(vec![2, 1, 1], vec![1.0, 3.0]).unwrap();
        let (y, _) = batch_norm_apply(&p, &x, Mode::Train, BN_EPSILON).unwrap();
        let expected = 1.0 / libm::sqrt(1.001);
        assert!((y.data()[0] + expected).abs() < 1e-15);
        assert!((y.data()[1] - expected).abs() < 1e-15);
        assert!((expected - 0.999_500_374_5).abs() < 1e-9);
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut p = BatchNormParams::new(2);
        p.gamma = Tensor::zeros(&[2]);
        p.beta = Tensor::vector(vec![0.5, -2.0]);
        let x = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f64 * 0.7).collect()).unwrap();
        let (y, _) = batch_norm_apply(&p, &x, Mode::Train, BN_EPSILON).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, if (i / 3) % 2 == 0 { 0.5 } else { -2.0 });
        }
    }

    #[test]
    fn constant_batch_collapses_to_beta() {
        let mut p = BatchNormParams::new(1);
        p.beta = Tensor::vector(vec![0.25]);
        let x = Tensor::filled(&[3, 1, 4], 7.5);
        let (y, _) = batch_norm_apply(&p, &x, Mode::Train, BN_EPSILON).unwrap();
        let bound = 1.0 / libm::sqrt(BN_EPSILON);
        assert!(y.data().iter().all(|v| (v - 0.25).abs() <= bound));
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn train_output_is_standardised() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = BatchNormParams::new(3);
        let x = Tensor::new(vec![4, 3, 10], (0..120).map(|_| rng.gen_range(-2.0..3.0)).collect()).unwrap();
        let (y, cache) = batch_norm_apply(&p, &x, Mode::Train, BN_EPSILON).unwrap();
        let (_, var) = cache.batch_stats.clone().unwrap();
        for f in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.data()[(b * 3 + f) * 10..(b * 3 + f + 1) * 10].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 40.0;
            let v = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-10);
            let expected = 1.0 / (1.0 + BN_EPSILON / var[f]);
            assert!((v / expected - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn running_stats_follow_momentum_rule_in_train_mode_only() {
        let mut p = BatchNormParams::new(1);
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let (_, cache) = batch_norm_apply(&p, &x, Mode::Infer, BN_EPSILON).unwrap();
        p.absorb(&cache, BN_MOMENTUM);
        assert_eq!(p.running_mean.data(), &[0.0]);
        let (_, cache) = batch_norm_apply(&p, &x, Mode::Train, BN_EPSILON).unwrap();
        p.absorb(&cache, BN_MOMENTUM);
        assert!((p.running_mean.data()[0] - 0.02).abs() < 1e-15);
        assert!((p.running_var.data()[0] - (0.99 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let mut p = BatchNormParams::new(1);
        p.running_mean = Tensor::vector(vec![2.0]);
        p.running_var = Tensor::vector(vec![4.0 - BN_EPSILON]);
        let x = Tensor::new(vec![1, 1, 2], vec![2.0, 4.0]).unwrap();
        let (y, _) = batch_norm_apply(&p, &x, Mode::Infer, BN_EPSILON).unwrap();
        assert!((y.data()[0]).abs() < 1e-15);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }
}
