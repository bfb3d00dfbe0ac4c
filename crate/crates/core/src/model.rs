//! The two-branch LSTM-FCN / ALSTM-FCN network.
//!
//! The convolutional branch sees the series as one channel over `N` time
//! steps; the recurrent branch sees the dimension-shuffled series as `N`
//! variables at a single time step. Their features are concatenated as
//! `[FCN ; LSTM]` in front of an affine softmax classifier.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::layers::{
    attention_lstm_apply, attention_lstm_backward, conv_block_backward_with, conv_block_forward_owned, conv_block_infer, lstm_apply, lstm_backward,
    AttentionCache, AttentionParams, ConvBlockCache, ConvBlockParams, DropoutMask, LstmCache, LstmParams, Mode, BN_MOMENTUM, GATES,
};
use crate::tensor::{dimension_shuffle, Tensor};

pub const CONV_FILTERS: [usize; 3] = [128, 256, 128];
pub const KERNEL_SIZES: [usize; 3] = [8, 5, 3];
pub const DROPOUT_RATE: f64 = 0.8;
pub const MIN_CELLS: usize = 8;
pub const MAX_CELLS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    LstmFcn,
    AlstmFcn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::LstmFcn => "lstm-fcn",
            Variant::AlstmFcn => "alstm-fcn",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm-fcn" | "lstm_fcn" => Ok(Variant::LstmFcn),
            "alstm-fcn" | "alstm_fcn" => Ok(Variant::AlstmFcn),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub series_length: usize,
    pub num_classes: usize,
    pub lstm_cells: usize,
    pub conv_filters: [usize; 3],
    pub kernel_sizes: [usize; 3],
    pub dropout_rate: f64,
    /// Width of the alignment network; only used by [`Variant::AlstmFcn`].
    pub attention_width: usize,
}

impl ModelConfig {
    /// Standard architecture with the alignment width equal to the cell count.
    pub fn new(variant: Variant, series_length: usize, num_classes: usize, lstm_cells: usize) -> Self {
        Self {
            variant,
            series_length,
            num_classes,
            lstm_cells,
            conv_filters: CONV_FILTERS,
            kernel_sizes: KERNEL_SIZES,
            dropout_rate: DROPOUT_RATE,
            attention_width: lstm_cells,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("{field}: {why}")));
        if self.conv_filters != CONV_FILTERS {
            return bad("conv_filters", format!("must be {CONV_FILTERS:?}, got {:?}", self.conv_filters));
        }
        if self.kernel_sizes.contains(&0) {
            return bad("kernel_sizes", format!("widths must be positive, got {:?}", self.kernel_sizes));
        }
        if !(MIN_CELLS..=MAX_CELLS).contains(&self.lstm_cells) {
            return bad("lstm_cells", format!("must lie in [{MIN_CELLS}, {MAX_CELLS}], got {}", self.lstm_cells));
        }
        if self.num_classes < 2 {
            return bad("num_classes", format!("need at least 2, got {}", self.num_classes));
        }
        if self.series_length == 0 {
            return bad("series_length", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate", format!("must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.variant == Variant::AlstmFcn && self.attention_width == 0 {
            return bad("attention_width", "must be at least 1".into());
        }
        Ok(())
    }

    /// Width of the concatenated feature vector fed to the classifier.
    pub fn feature_width(&self) -> usize {
        self.conv_filters[2] + self.lstm_cells
    }

    /// Input width of the LSTM gate projections.
    pub fn recurrent_input_width(&self) -> usize {
        match self.variant {
            Variant::LstmFcn => self.series_length,
            Variant::AlstmFcn => self.series_length + 1,
        }
    }
}

/// Closed-form number of trainable scalars.
pub fn param_count(config: &ModelConfig) -> usize {
    let mut total = 0;
    let mut channels = 1;
    for (&filters, &width) in config.conv_filters.iter().zip(&config.kernel_sizes) {
        total += filters * channels * width + filters + 2 * filters;
        channels = filters;
    }
    let (m, d) = (config.lstm_cells, config.recurrent_input_width());
    total += 4 * (m * m + m * d + m);
    if config.variant == Variant::AlstmFcn {
        let a = config.attention_width;
        total += a * m + a + a;
    }
    total + config.num_classes * config.feature_width() + config.num_classes
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recurrent {
    Lstm(LstmParams),
    Attention(AttentionParams),
}

impl Recurrent {
    pub fn lstm(&self) -> &LstmParams {
        match self {
            Recurrent::Lstm(p) => p,
            Recurrent::Attention(p) => &p.lstm,
        }
    }

    pub fn lstm_mut(&mut self) -> &mut LstmParams {
        match self {
            Recurrent::Lstm(p) => p,
            Recurrent::Attention(p) => &mut p.lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub blocks: Vec<ConvBlockParams>,
    pub recurrent: Recurrent,
    /// `C × (128 + M)`
    pub classifier_w: Tensor,
    pub classifier_b: Tensor,
}

/// A named parameter tensor and whether the optimiser updates it.
pub struct Entry<T> {
    pub name: String,
    pub trainable: bool,
    pub tensor: T,
}

macro_rules! entries_impl {
    ($self:ident, $iter:ident, $($amp:tt)+) => {{
        let mut out = Vec::new();
        let mut push = |name: String, trainable: bool, tensor| out.push(Entry { name, trainable, tensor });
        for (i, b) in $self.blocks.$iter().enumerate() {
            push(format!("block{i}.kernels"), true, $($amp)+ b.kernels);
            push(format!("block{i}.bias"), true, $($amp)+ b.bias);
            push(format!("block{i}.bn_gamma"), true, $($amp)+ b.bn.gamma);
            push(format!("block{i}.bn_beta"), true, $($amp)+ b.bn.beta);
            push(format!("block{i}.bn_running_mean"), false, $($amp)+ b.bn.running_mean);
            push(format!("block{i}.bn_running_var"), false, $($amp)+ b.bn.running_var);
        }
        let lstm = match $($amp)+ $self.recurrent {
            Recurrent::Lstm(p) => (p, "lstm"),
            Recurrent::Attention(p) => {
                push("attention.align_W".into(), true, $($amp)+ p.align_w);
                push("attention.align_U".into(), true, $($amp)+ p.align_u);
                push("attention.align_v".into(), true, $($amp)+ p.align_v);
                ($($amp)+ p.lstm, "attention.lstm")
            }
        };
        let (lstm, prefix) = lstm;
        for (g, t) in lstm.recurrent.$iter().enumerate() {
            push(format!("{prefix}.W_{}", GATES[g]), true, t);
        }
        for (g, t) in lstm.projection.$iter().enumerate() {
            push(format!("{prefix}.I_{}", GATES[g]), true, t);
        }
        for (g, t) in lstm.bias.$iter().enumerate() {
            push(format!("{prefix}.b_{}", GATES[g]), true, t);
        }
        push("classifier.W".into(), true, $($amp)+ $self.classifier_w);
        push("classifier.b".into(), true, $($amp)+ $self.classifier_b);
        out
    }};
}

impl ModelParams {
    /// Parameters of the right shapes with every trainable value zero
    /// (batch-norm scales included); running variances are one.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut blocks = Vec::with_capacity(3);
        let mut channels = 1;
        for (&filters, &width) in config.conv_filters.iter().zip(&config.kernel_sizes) {
            let mut block = ConvBlockParams::zeros(filters, channels, width);
            block.bn.gamma = Tensor::zeros(&[filters]);
            blocks.push(block);
            channels = filters;
        }
        let m = config.lstm_cells;
        let recurrent = match config.variant {
            Variant::LstmFcn => Recurrent::Lstm(LstmParams::zeros(m, config.series_length)),
            Variant::AlstmFcn => Recurrent::Attention(AttentionParams::zeros(m, config.series_length, config.attention_width)),
        };
        Self {
            blocks,
            recurrent,
            classifier_w: Tensor::zeros(&[config.num_classes, config.feature_width()]),
            classifier_b: Tensor::zeros(&[config.num_classes]),
        }
    }

    /// Every tensor, including batch-norm running statistics, in a fixed order.
    pub fn entries(&self) -> Vec<Entry<&Tensor>> {
        entries_impl!(self, iter, &)
    }

    pub fn entries_mut(&mut self) -> Vec<Entry<&mut Tensor>> {
        entries_impl!(self, iter_mut, &mut)
    }

    pub fn trainable(&self) -> Vec<&Tensor> {
        self.entries().into_iter().filter(|e| e.trainable).map(|e| e.tensor).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries_mut().into_iter().filter(|e| e.trainable).map(|e| e.tensor).collect()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries().into_iter().filter(|e| e.trainable).map(|e| e.name).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// Concatenation of all trainable values in [`Self::trainable`] order.
    pub fn trainable_flat(&self) -> Vec<f64> {
        self.trainable().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_trainable_flat(&mut self, values: &[f64]) -> Result<()> {
        let total = self.trainable_count();
        if values.len() != total {
            return Err(dim_err("set_trainable_flat", format!("expected {total} values, got {}", values.len())));
        }
        let mut offset = 0;
        for t in self.trainable_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running batch-norm estimates.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        for (block, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            block.bn.absorb(&c.bn, BN_MOMENTUM);
        }
    }

    fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let reference = ModelParams::zeros(config);
        for (mine, expected) in self.entries().iter().zip(reference.entries()) {
            if mine.name != expected.name || mine.tensor.shape() != expected.tensor.shape() {
                return Err(Error::Internal(format!(
                    "parameter {} has shape {:?}, config expects {} {:?}",
                    mine.name,
                    mine.tensor.shape(),
                    expected.name,
                    expected.tensor.shape()
                )));
            }
        }
        if self.entries().len() != reference.entries().len() {
            return Err(Error::Internal("parameter set does not match the configured variant".into()));
        }
        Ok(())
    }
}

fn fill_uniform<R: Rng + ?Sized>(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let dist = Uniform::new_inclusive(-limit, limit);
    t.data_mut().iter_mut().for_each(|x| *x = dist.sample(rng));
}

/// Standard deviation of the He-normal initialisation for a kernel of the given width and input channels.
pub fn he_std(width: usize, channels: usize) -> f64 {
    libm::sqrt(2.0 / (width * channels) as f64)
}

fn init_lstm<R: Rng + ?Sized>(p: &mut LstmParams, rng: &mut R) {
    let (m, d) = (p.cells(), p.input_width());
    for t in p.recurrent.iter_mut() {
        fill_uniform(t, m, m, rng);
    }
    for t in p.projection.iter_mut() {
        fill_uniform(t, d, m, rng);
    }
    p.bias[1] = Tensor::filled(&[m], 1.0);
}

/// Randomly initialised parameters: He-normal convolution kernels,
/// fan-based uniform recurrent and classifier weights, zero biases except a
/// forget-gate bias of one, identity batch normalisation.
pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ModelParams> {
    config.validate()?;
    let mut params = ModelParams::zeros(config);
    for block in params.blocks.iter_mut() {
        let std = he_std(block.width(), block.channels());
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(format!("{e}")))?;
        block.kernels.data_mut().iter_mut().for_each(|x| *x = normal.sample(rng));
        block.bn.gamma = Tensor::filled(&[block.filters()], 1.0);
    }
    match &mut params.recurrent {
        Recurrent::Lstm(p) => init_lstm(p, rng),
        Recurrent::Attention(p) => {
            let (a, m) = (p.align_width(), p.lstm.cells());
            fill_uniform(&mut p.align_w, m, a, rng);
            fill_uniform(&mut p.align_u, 1, a, rng);
            fill_uniform(&mut p.align_v, a, 1, rng);
            init_lstm(&mut p.lstm, rng);
        }
    }
    fill_uniform(&mut params.classifier_w, config.feature_width(), config.num_classes, rng);
    Ok(params)
}

#[derive(Debug, Clone)]
enum RecurrentCache {
    Lstm(LstmCache),
    Attention(AttentionCache),
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    len: usize,
    blocks: Vec<ConvBlockCache>,
    recurrent: Vec<RecurrentCache>,
    masks: Vec<Option<DropoutMask>>,
    /// `B × (128 + M)` classifier inputs.
    features: Vec<f64>,
}

impl ForwardCache {
    /// Which ReLU units were active in each convolutional block.
    pub fn relu_pattern(&self) -> impl Iterator<Item = &[bool]> {
        self.blocks.iter().map(ConvBlockCache::active)
    }

    pub fn blocks(&self) -> &[ConvBlockCache] {
        &self.blocks
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `B × C`
    pub logits: Tensor,
    /// `B × N` attention weights, present for the attention variant only.
    pub alphas: Option<Tensor>,
    pub cache: ForwardCache,
}

/// Forward pass over a batch of series, each holding `N` values (`1 × N`).
///
/// In train mode batch normalisation uses batch statistics and dropout draws a
/// fresh mask from `rng`; the parameters are not modified (see
/// [`ModelParams::absorb_batch_stats`]). In infer mode `rng` is untouched.
pub fn forward<R: Rng + ?Sized>(params: &ModelParams, config: &ModelConfig, batch: &[Tensor], mode: Mode, rng: &mut R) -> Result<ForwardOutput> {
    forward_impl(params, config, batch, mode, rng, true)
}

/// Inference-mode logits and attention weights without keeping the
/// convolutional activations. Bit-identical to [`forward`] in [`Mode::Infer`].
pub fn predict(params: &ModelParams, config: &ModelConfig, batch: &[Tensor]) -> Result<(Tensor, Option<Tensor>)> {
    let out = forward_impl(params, config, batch, Mode::Infer, &mut crate::seeded_rng(0), false)?;
    Ok((out.logits, out.alphas))
}

fn forward_impl<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[Tensor],
    mode: Mode,
    rng: &mut R,
    keep_cache: bool,
) -> Result<ForwardOutput> {
    let n = config.series_length;
    let b = batch.len();
    if b == 0 {
        return Err(dim_err("forward", "empty batch".into()));
    }
    for (i, s) in batch.iter().enumerate() {
        if s.len() != n {
            return Err(dim_err("forward", format!("series {i} has length {} but the model expects {n}", s.len())));
        }
    }

    // Convolutional branch.
    let mut x = Tensor::new(vec![b, 1, n], batch.iter().flat_map(|s| s.data().iter().copied()).collect())?;
    let mut block_caches = Vec::with_capacity(params.blocks.len());
    for (layer, block) in params.blocks.iter().enumerate() {
        x = if keep_cache || mode == Mode::Train {
            let (y, cache) = conv_block_forward_owned(block, x, mode, layer)?;
            block_caches.push(cache);
            y
        } else {
            conv_block_infer(block, &x, layer)?
        };
    }
    let fcn_width = x.shape()[1];
    let cells = config.lstm_cells;
    let width = fcn_width + cells;
    let mut features = vec![0.0; b * width];
    for (sample, row) in x.data().chunks_exact(fcn_width * n).zip(features.chunks_exact_mut(width)) {
        for (f, channel) in sample.chunks_exact(n).enumerate() {
            row[f] = channel[0] + channel.iter().map(|v| v - channel[0]).sum::<f64>() / n as f64;
        }
    }

    // Recurrent branch.
    let mut recurrent = Vec::with_capacity(b);
    let mut masks = Vec::with_capacity(b);
    let mut alphas = Vec::new();
    for (i, series) in batch.iter().enumerate() {
        let row_view = series.clone().reshape(vec![1, n])?;
        let step = dimension_shuffle(&row_view)?.reshape(vec![n])?;
        let mut h = match &params.recurrent {
            Recurrent::Lstm(p) => {
                let out = lstm_apply(p, core::slice::from_ref(&step))?;
                recurrent.push(RecurrentCache::Lstm(out.cache));
                out.h_final.into_data()
            }
            Recurrent::Attention(p) => {
                let out = attention_lstm_apply(p, &step, series.data())?;
                alphas.extend_from_slice(out.alphas.data());
                recurrent.push(RecurrentCache::Attention(out.cache));
                out.h_final.into_data()
            }
        };
        let mask = match mode {
            Mode::Train => {
                let mask = DropoutMask::sample(cells, config.dropout_rate, rng)?;
                mask.apply(&mut h);
                Some(mask)
            }
            Mode::Infer => None,
        };
        masks.push(mask);
        features[i * width + fcn_width..(i + 1) * width].copy_from_slice(&h);
    }

    let classes = config.num_classes;
    let mut logits = vec![0.0; b * classes];
    for (row, feat) in logits.chunks_exact_mut(classes).zip(features.chunks_exact(width)) {
        for (c, out) in row.iter_mut().enumerate() {
            let w = &params.classifier_w.data()[c * width..(c + 1) * width];
            *out = params.classifier_b.data()[c] + w.iter().zip(feat).map(|(a, f)| a * f).sum::<f64>();
        }
    }
    let logits = Tensor::new(vec![b, classes], logits)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite { layer: params.blocks.len() + 1 });
    }
    let alphas = match config.variant {
        Variant::AlstmFcn => Some(Tensor::new(vec![b, n], alphas)?),
        Variant::LstmFcn => None,
    };
    Ok(ForwardOutput {
        logits,
        alphas,
        cache: ForwardCache { batch: b, len: n, blocks: block_caches, recurrent, masks, features },
    })
}

/// Gradients of every trainable tensor, in [`ModelParams::trainable`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub tensors: Vec<Tensor>,
}

impl ParamGradients {
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Reverse-mode pass from `grad_logits` (`B × C`) to every trainable parameter.
pub fn backward(params: &ModelParams, config: &ModelConfig, cache: &ForwardCache, grad_logits: &Tensor) -> Result<ParamGradients> {
    params.check_against(config)?;
    let (b, n) = (cache.batch, cache.len);
    let classes = config.num_classes;
    grad_logits.expect_shape("backward", &[b, classes])?;
    if cache.blocks.len() != params.blocks.len() || cache.recurrent.len() != b {
        return Err(Error::Internal("forward cache does not match the parameters".into()));
    }
    let fcn_width = config.conv_filters[2];
    let cells = config.lstm_cells;
    let width = fcn_width + cells;
    if cache.features.len() != b * width {
        return Err(Error::Internal("forward cache does not match the configuration".into()));
    }

    // Classifier.
    let mut d_w = vec![0.0; classes * width];
    let mut d_b = vec![0.0; classes];
    let mut d_features = vec![0.0; b * width];
    for ((dl, feat), d_feat) in grad_logits.data().chunks_exact(classes).zip(cache.features.chunks_exact(width)).zip(d_features.chunks_exact_mut(width)) {
        for c in 0..classes {
            d_b[c] += dl[c];
            let w = &params.classifier_w.data()[c * width..(c + 1) * width];
            for ((g, f), (dfe, wv)) in d_w[c * width..(c + 1) * width].iter_mut().zip(feat).zip(d_feat.iter_mut().zip(w)) {
                *g += dl[c] * f;
                *dfe += dl[c] * wv;
            }
        }
    }

    // Recurrent branch.
    let mut recurrent_grads: Vec<Tensor> = match &params.recurrent {
        Recurrent::Lstm(p) => p.tensors().map(Tensor::zeros_like).collect(),
        Recurrent::Attention(p) => p.tensors().map(Tensor::zeros_like).collect(),
    };
    for i in 0..b {
        let mut d_h = d_features[i * width + fcn_width..(i + 1) * width].to_vec();
        if let Some(mask) = &cache.masks[i] {
            mask.apply(&mut d_h);
        }
        let grads: Vec<Tensor> = match (&params.recurrent, &cache.recurrent[i]) {
            (Recurrent::Lstm(p), RecurrentCache::Lstm(c)) => {
                let (g, _) = lstm_backward(p, c, &d_h);
                g.tensors().cloned().collect()
            }
            (Recurrent::Attention(p), RecurrentCache::Attention(c)) => {
                let (g, _, _) = attention_lstm_backward(p, c, &d_h);
                g.tensors().cloned().collect()
            }
            _ => return Err(Error::Internal("recurrent cache variant does not match the parameters".into())),
        };
        for (acc, g) in recurrent_grads.iter_mut().zip(&grads) {
            acc.add_assign(g)?;
        }
    }

    // Convolutional branch: global average pooling spreads each feature
    // gradient evenly over time.
    let inv = 1.0 / n as f64;
    let mut grad = vec![0.0; b * fcn_width * n];
    for (i, sample) in grad.chunks_exact_mut(fcn_width * n).enumerate() {
        for (f, channel) in sample.chunks_exact_mut(n).enumerate() {
            channel.fill(d_features[i * width + f] * inv);
        }
    }
    let mut grad = Tensor::new(vec![b, fcn_width, n], grad)?;
    let mut block_grads = Vec::with_capacity(params.blocks.len());
    for (layer, (block, c)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        // The raw series needs no gradient.
        let (d_in, g) = conv_block_backward_with(block, c, &grad, layer > 0)?;
        block_grads.push(g);
        if let Some(d_in) = d_in {
            grad = d_in;
        }
    }
    block_grads.reverse();

    let mut tensors = Vec::new();
    for g in block_grads {
        tensors.extend([g.kernels, g.bias, g.gamma, g.beta]);
    }
    tensors.extend(recurrent_grads);
    tensors.push(Tensor::new(vec![classes, width], d_w)?);
    tensors.push(Tensor::vector(d_b));
    Ok(ParamGradients { tensors })
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
