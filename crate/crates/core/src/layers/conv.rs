use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::batch_norm::{batch_norm_backward, batch_norm_in_place, BatchNormCache, BatchNormParams, BN_EPSILON, BN_MOMENTUM};
use super::Mode;
use crate::error::{dim_err, Error, Result};
use crate::gemm::{gemm, View};
use crate::tensor::{col2im_add, conv1d_same_into, im2col, Tensor};

/// Temporal convolution followed by batch normalisation and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    /// `F_out × F_in × width`
    pub kernels: Tensor,
    pub bias: Tensor,
    pub bn: BatchNormParams,
}

impl ConvBlockParams {
    pub fn zeros(filters: usize, channels: usize, width: usize) -> Self {
        Self {
            kernels: Tensor::zeros(&[filters, channels, width]),
            bias: Tensor::zeros(&[filters]),
            bn: BatchNormParams::new(filters),
        }
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.kernels.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockGrads {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache {
    input: Tensor,
    mode: Mode,
    pub bn: BatchNormCache,
    active: Vec<bool>,
}

impl ConvBlockCache {
    /// ReLU activity of every output, `B × F × T`.
    pub fn active(&self) -> &[bool] {
        &self.active
    }
}

/// Upper bound on patch-matrix entries per GEMM, sized to stay in cache.
const PATCH_BUDGET: usize = 1 << 18;

fn chunk_samples(patch: usize, len: usize) -> usize {
    (PATCH_BUDGET / (patch * len).max(1)).max(1)
}

fn input_dims(params: &ConvBlockParams, input: &Tensor, layer: usize) -> Result<[usize; 3]> {
    let [batch, channels, len] = match *input.shape() {
        [b, c, t] => [b, c, t],
        ref s => return Err(dim_err("conv_block", format!("expected B×C×T input, got {s:?}"))),
    };
    if channels != params.channels() {
        return Err(dim_err("conv_block", format!("layer {layer}: input has {channels} channels, kernels expect {}", params.channels())));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite { layer });
    }
    Ok([batch, channels, len])
}

/// Convolution of every sample in `input`, written as `B × F × T`.
fn convolve(params: &ConvBlockParams, input: &[f64], [batch, channels, len]: [usize; 3], bias: &[f64]) -> Vec<f64> {
    let (filters, width) = (params.filters(), params.width());
    let mut pre = vec![0.0; batch * filters * len];
    let (mut cols, mut scratch) = (Vec::new(), Vec::new());
    let chunk = chunk_samples(channels * width, len);
    for (samples, out) in input.chunks(chunk * channels * len).zip(pre.chunks_mut(chunk * filters * len)) {
        let n = samples.len() / (channels * len);
        conv1d_same_into(samples, n, channels, len, params.kernels.data(), filters, width, bias, &mut cols, &mut scratch, out);
    }
    pre
}

/// Runs the block on a `B × C × T` batch. Batch statistics are left in the
/// cache; the parameters are not modified.
///
/// In train mode the bias is cancelled by the batch mean, so it is folded
/// into the recorded mean instead of being added to every output. The result
/// is then exactly independent of the bias and its gradient is exactly zero.
///
/// `layer` is only used to label errors.
pub fn conv_block_forward(params: &ConvBlockParams, input: &Tensor, mode: Mode, layer: usize) -> Result<(Tensor, ConvBlockCache)> {
    conv_block_forward_owned(params, input.clone(), mode, layer)
}

/// [`conv_block_forward`] taking ownership of the input, which the cache keeps.
pub(crate) fn conv_block_forward_owned(params: &ConvBlockParams, input: Tensor, mode: Mode, layer: usize) -> Result<(Tensor, ConvBlockCache)> {
    let [batch, channels, len] = input_dims(params, &input, layer)?;
    let filters = params.filters();
    let zero_bias = vec![0.0; filters];
    let bias = match mode {
        Mode::Train => &zero_bias,
        Mode::Infer => params.bias.data(),
    };
    let mut out = convolve(params, input.data(), [batch, channels, len], bias);
    let mut bn = batch_norm_in_place(&params.bn, &mut out, [batch, filters, len], mode, BN_EPSILON)?;
    if let Some((mean, _)) = &mut bn.batch_stats {
        mean.iter_mut().zip(params.bias.data()).for_each(|(m, b)| *m += b);
    }
    let mut active = Vec::with_capacity(out.len());
    for v in out.iter_mut() {
        let on = *v > 0.0;
        active.push(on);
        if !on {
            *v = 0.0;
        }
    }
    let out = Tensor::new(vec![batch, filters, len], out)?;
    if !out.is_finite() {
        return Err(Error::NonFinite { layer });
    }
    Ok((out, ConvBlockCache { input, mode, bn, active }))
}

/// Inference-mode block output without a cache. Bit-identical to
/// [`conv_block_forward`] in [`Mode::Infer`].
pub(crate) fn conv_block_infer(params: &ConvBlockParams, input: &Tensor, layer: usize) -> Result<Tensor> {
    let [batch, channels, len] = input_dims(params, input, layer)?;
    let filters = params.filters();
    let mut out = convolve(params, input.data(), [batch, channels, len], params.bias.data());
    let bn = &params.bn;
    let (mean, var) = (bn.running_mean.data(), bn.running_var.data());
    let (gamma, beta) = (bn.gamma.data(), bn.beta.data());
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPSILON)).collect();
    for (i, row) in out.chunks_exact_mut(len).enumerate() {
        let f = i % filters;
        for x in row {
            let y = gamma[f] * ((*x - mean[f]) * inv_std[f]) + beta[f];
            *x = if y > 0.0 { y } else { 0.0 };
        }
    }
    let out = Tensor::new(vec![batch, filters, len], out)?;
    if !out.is_finite() {
        return Err(Error::NonFinite { layer });
    }
    Ok(out)
}

/// Single-series convenience over [`conv_block_forward`]: `input` is `C × T`,
/// the output `F × T`. In train mode the running statistics are updated.
pub fn conv_block_apply(params: &mut ConvBlockParams, input: &Tensor, mode: Mode) -> Result<(Tensor, ConvBlockCache)> {
    let [channels, len] = match *input.shape() {
        [c, t] => [c, t],
        ref s => return Err(dim_err("conv_block", format!("expected C×T input, got {s:?}"))),
    };
    let batched = input.clone().reshape(vec![1, channels, len])?;
    let (out, cache) = conv_block_forward(params, &batched, mode, 0)?;
    params.bn.absorb(&cache.bn, BN_MOMENTUM);
    let filters = params.filters();
    Ok((out.reshape(vec![filters, len])?, cache))
}

/// Back-propagates `grad_out` (same shape as the forward output) and returns
/// the input gradient together with the parameter gradients.
pub fn conv_block_backward(params: &ConvBlockParams, cache: &ConvBlockCache, grad_out: &Tensor) -> Result<(Tensor, ConvBlockGrads)> {
    let (d_input, grads) = conv_block_backward_with(params, cache, grad_out, true)?;
    let d_input = d_input.ok_or_else(|| Error::Internal("input gradient was not computed".into()))?;
    Ok((d_input, grads))
}

/// [`conv_block_backward`] that skips the input gradient unless `input_grad`.
pub(crate) fn conv_block_backward_with(
    params: &ConvBlockParams,
    cache: &ConvBlockCache,
    grad_out: &Tensor,
    input_grad: bool,
) -> Result<(Option<Tensor>, ConvBlockGrads)> {
    let [batch, channels, len] = match *cache.input.shape() {
        [b, c, t] => [b, c, t],
        _ => return Err(Error::Internal("conv block cache holds a malformed input".into())),
    };
    let (filters, width) = (params.filters(), params.width());
    grad_out.expect_shape("conv_block_backward", &[batch, filters, len])?;

    let d_norm: Vec<f64> = grad_out.data().iter().zip(&cache.active).map(|(g, &on)| if on { *g } else { 0.0 }).collect();
    let (d_pre, d_gamma, d_beta) = batch_norm_backward(&params.bn, &cache.bn, &d_norm);
    drop(d_norm);

    let patch = channels * width;
    let mut d_kernels = vec![0.0; filters * patch];
    let mut d_bias = vec![0.0; filters];
    let mut d_input = if input_grad { vec![0.0; batch * channels * len] } else { Vec::new() };
    let (mut cols, mut d_cols, mut d_all) = (Vec::new(), Vec::new(), Vec::new());
    let chunk = chunk_samples(patch, len);
    for first in (0..batch).step_by(chunk) {
        let n = chunk.min(batch - first);
        let row_len = n * len;
        im2col(&cache.input.data()[first * channels * len..(first + n) * channels * len], n, channels, len, width, &mut cols);
        // Regroup the output gradient as filters × (samples·time).
        d_all.clear();
        d_all.resize(filters * row_len, 0.0);
        for b in 0..n {
            for f in 0..filters {
                let src = &d_pre[((first + b) * filters + f) * len..((first + b) * filters + f + 1) * len];
                d_all[f * row_len + b * len..f * row_len + (b + 1) * len].copy_from_slice(src);
            }
        }
        // dK += dY · colsᵀ
        gemm(filters, row_len, patch, View::row_major(&d_all, row_len), View::transposed(&cols, row_len), 1.0, &mut d_kernels);
        if cache.mode == Mode::Infer {
            for (f, row) in d_all.chunks_exact(row_len).enumerate() {
                d_bias[f] += row.iter().sum::<f64>();
            }
        }
        if input_grad {
            // dcols = Kᵀ · dY
            d_cols.clear();
            d_cols.resize(patch * row_len, 0.0);
            gemm(patch, filters, row_len, View::transposed(params.kernels.data(), patch), View::row_major(&d_all, row_len), 0.0, &mut d_cols);
            col2im_add(&d_cols, n, channels, len, width, &mut d_input[first * channels * len..(first + n) * channels * len]);
        }
    }
    let grads = ConvBlockGrads {
        kernels: Tensor::new(vec![filters, channels, width], d_kernels)?,
        bias: Tensor::vector(d_bias),
        gamma: Tensor::vector(d_gamma),
        beta: Tensor::vector(d_beta),
    };
    let d_input = if input_grad { Some(Tensor::new(vec![batch, channels, len], d_input)?) } else { None };
    Ok((d_input, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::batch_norm_apply;
    use crate::tensor::conv1d_same;
    use rand::{Rng, SeedableRng};

    fn random_block(rng: &mut impl Rng, filters: usize, channels: usize, width: usize) -> ConvBlockParams {
        let mut p = ConvBlockParams::zeros(filters, channels, width);
        p.kernels.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        p.bias.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        p.bn.gamma.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(0.5..1.5));
        p.bn.beta.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-0.5..0.5));
        p
    }

    #[test]
    fn zero_input_and_kernels_give_zero_output() {
        let mut p = ConvBlockParams::zeros(4, 2, 3);
        let (y, _) = conv_block_apply(&mut p, &Tensor::zeros(&[2, 9]), Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_is_non_negative() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = random_block(&mut rng, 5, 2, 3);
            let x = Tensor::new(vec![3, 2, 7], (0..42).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
            for mode in [Mode::Train, Mode::Infer] {
                let (y, _) = conv_block_forward(&p, &x, mode, 0).unwrap();
                assert!(y.data().iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn forward_is_composition_of_primitives() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = random_block(&mut rng, 3, 2, 5);
        let x = Tensor::new(vec![2, 9], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let conv = conv1d_same(&x, &p.kernels, &p.bias).unwrap();
        let batched = conv.clone().reshape(vec![1, 3, 9]).unwrap();
        let (bn, _) = batch_norm_apply(&p.bn, &batched, Mode::Train, BN_EPSILON).unwrap();
        let expected: Vec<f64> = bn.data().iter().map(|v| v.max(0.0)).collect();
        let mut q = p.clone();
        let (y, _) = conv_block_apply(&mut q, &x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_ne!(q.bn.running_mean, p.bn.running_mean);
        let mut r = p.clone();
        conv_block_apply(&mut r, &x, Mode::Infer).unwrap();
        assert_eq!(r, p);
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let p = ConvBlockParams::zeros(2, 1, 3);
        let mut x = Tensor::zeros(&[1, 1, 4]);
        x.data_mut()[2] = f64::NAN;
        assert_eq!(conv_block_forward(&p, &x, Mode::Train, 2).unwrap_err(), Error::NonFinite { layer: 2 });
    }
}
