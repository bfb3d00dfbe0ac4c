use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::loss::softmax;
use super::lstm::{lstm_apply, lstm_backward, LstmCache, LstmParams};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Attention LSTM cell: a feedforward alignment model scores every annotation
/// against the previous cell state, the softmax-weighted context is appended
/// to the step input and the result is fed through an ordinary LSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `A × M`, applied to the previous hidden state.
    pub align_w: Tensor,
    /// `A × 1`, applied to the (scalar) annotation.
    pub align_u: Tensor,
    /// `A`, reduces the hidden alignment layer to a score.
    pub align_v: Tensor,
    /// Cell consuming `[step ; context]`, so its input width is `D + 1`.
    pub lstm: LstmParams,
}

/// Gradients share the parameter layout.
pub type AttentionGrads = AttentionParams;

impl AttentionParams {
    pub fn zeros(cells: usize, input_width: usize, align_width: usize) -> Self {
        Self {
            align_w: Tensor::zeros(&[align_width, cells]),
            align_u: Tensor::zeros(&[align_width, 1]),
            align_v: Tensor::zeros(&[align_width]),
            lstm: LstmParams::zeros(cells, input_width + 1),
        }
    }

    pub fn align_width(&self) -> usize {
        self.align_v.len()
    }

    /// Width of the step input, excluding the context scalar.
    pub fn step_width(&self) -> usize {
        self.lstm.input_width() - 1
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        [&self.align_w, &self.align_u, &self.align_v].into_iter().chain(self.lstm.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        [&mut self.align_w, &mut self.align_u, &mut self.align_v].into_iter().chain(self.lstm.tensors_mut())
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    state: Vec<f64>,
    annotations: Vec<f64>,
    /// `N × A` hidden activations of the alignment model.
    hidden: Vec<f64>,
    alphas: Vec<f64>,
    lstm: LstmCache,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub h_final: Tensor,
    pub alphas: Tensor,
    pub cache: AttentionCache,
}

/// Runs one attention step.
///
/// The previous state is the zero initial state, so the scores reduce to
/// `e_j = v · tanh(W·s₀ + U·h_j)`. The context `c = Σ_j α_j h_j` is appended to
/// `step` before the LSTM update.
pub fn attention_lstm_apply(params: &AttentionParams, step: &Tensor, annotations: &[f64]) -> Result<AttentionOutput> {
    let width = params.step_width();
    if step.len() != width {
        return Err(dim_err("attention_lstm", format!("step has {} variables, cell expects {width}", step.len())));
    }
    if annotations.len() != width {
        return Err(dim_err("attention_lstm", format!("{} annotations supplied for a step of {width} variables", annotations.len())));
    }
    let align = params.align_width();
    let cells = params.lstm.cells();
    let state = vec![0.0; cells];
    let projected: Vec<f64> = params
        .align_w
        .data()
        .chunks_exact(cells)
        .map(|row| row.iter().zip(&state).map(|(a, b)| a * b).sum())
        .collect();
    let (u, v) = (params.align_u.data(), params.align_v.data());
    let mut hidden = vec![0.0; width * align];
    let mut scores = vec![0.0; width];
    for (j, &h_j) in annotations.iter().enumerate() {
        let row = &mut hidden[j * align..(j + 1) * align];
        for a in 0..align {
            row[a] = libm::tanh(projected[a] + u[a] * h_j);
        }
        scores[j] = row.iter().zip(v).map(|(x, y)| x * y).sum();
    }
    let alphas = softmax(&scores);
    let context: f64 = alphas.iter().zip(annotations).map(|(a, h)| a * h).sum();

    let mut input = Vec::with_capacity(width + 1);
    input.extend_from_slice(step.data());
    input.push(context);
    let out = lstm_apply(&params.lstm, &[Tensor::vector(input)])?;
    Ok(AttentionOutput {
        h_final: out.h_final,
        alphas: Tensor::vector(alphas.clone()),
        cache: AttentionCache { state, annotations: annotations.to_vec(), hidden, alphas, lstm: out.cache },
    })
}

/// Returns parameter gradients, the gradient with respect to the step input
/// and the gradient with respect to the annotations.
pub fn attention_lstm_backward(params: &AttentionParams, cache: &AttentionCache, grad_h_final: &[f64]) -> (AttentionGrads, Vec<f64>, Vec<f64>) {
    let width = params.step_width();
    let align = params.align_width();
    let cells = params.lstm.cells();
    let (lstm_grads, mut d_inputs) = lstm_backward(&params.lstm, &cache.lstm, grad_h_final);
    let mut d_input = d_inputs.pop().unwrap_or_else(|| vec![0.0; width + 1]);
    let d_context = d_input.pop().unwrap_or(0.0);
    let d_step = d_input;

    let mut d_annotations: Vec<f64> = cache.alphas.iter().map(|a| a * d_context).collect();
    let d_alpha: Vec<f64> = cache.annotations.iter().map(|h| h * d_context).collect();
    let weighted: f64 = cache.alphas.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let d_scores: Vec<f64> = cache.alphas.iter().zip(&d_alpha).map(|(a, d)| a * (d - weighted)).collect();

    let (u, v) = (params.align_u.data(), params.align_v.data());
    let mut d_u = vec![0.0; align];
    let mut d_v = vec![0.0; align];
    let mut d_projected = vec![0.0; align];
    for j in 0..width {
        let row = &cache.hidden[j * align..(j + 1) * align];
        for a in 0..align {
            d_v[a] += d_scores[j] * row[a];
            let d_pre = d_scores[j] * v[a] * (1.0 - row[a] * row[a]);
            d_u[a] += d_pre * cache.annotations[j];
            d_projected[a] += d_pre;
            d_annotations[j] += d_pre * u[a];
        }
    }
    let mut d_w = vec![0.0; align * cells];
    for (a, row) in d_w.chunks_exact_mut(cells).enumerate() {
        row.iter_mut().zip(&cache.state).for_each(|(g, s)| *g = d_projected[a] * s);
    }
    let grads = AttentionGrads {
        align_w: Tensor::new(vec![align, cells], d_w).expect("alignment gradient shape"),
        align_u: Tensor::new(vec![align, 1], d_u).expect("alignment gradient shape"),
        align_v: Tensor::vector(d_v),
        lstm: lstm_grads,
    };
    (grads, d_step, d_annotations)
}
