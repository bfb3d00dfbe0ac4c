//! Direct transcriptions of the layer equations, shared by the layer oracle
//! tests and the acceptance suite.

use lstmfcn_core::layers::{attention_lstm_apply, lstm_apply, AttentionParams, LstmParams};
use lstmfcn_core::tensor::conv1d_same;
use lstmfcn_core::{seeded_rng, EngineRng, Tensor};
use rand::Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn random_tensor(rng: &mut EngineRng, shape: &[usize], scale: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn conv_oracle(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Vec<f64> {
    let (channels, len) = (input.shape()[0], input.shape()[1]);
    let (filters, width) = (kernels.shape()[0], kernels.shape()[2]);
    let left = width / 2;
    let padded_len = len + width - 1;
    let mut padded = vec![vec![0.0; padded_len]; channels];
    for c in 0..channels {
        for t in 0..len {
            padded[c][t + left] = input.at2(c, t);
        }
    }
    let mut out = vec![0.0; filters * len];
    for f in 0..filters {
        for t in 0..len {
            let mut acc = bias.data()[f];
            for c in 0..channels {
                for k in 0..width {
                    acc += kernels.data()[(f * channels + c) * width + k] * padded[c][t + k];
                }
            }
            out[f * len + t] = acc;
        }
    }
    out
}

/// Largest deviation of `conv1d_same` from the nested-loop oracle over
/// `cases` random shapes.
pub fn conv_max_error(cases: usize) -> f64 {
    let mut rng = seeded_rng(100);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let channels = rng.gen_range(1..6);
        let len = rng.gen_range(1..40);
        let filters = rng.gen_range(1..7);
        let width = rng.gen_range(1..10);
        let input = random_tensor(&mut rng, &[channels, len], 2.0);
        let kernels = random_tensor(&mut rng, &[filters, channels, width], 1.0);
        let bias = random_tensor(&mut rng, &[filters], 1.0);
        let got = conv1d_same(&input, &kernels, &bias).unwrap();
        if got.shape() != [filters, len] {
            return f64::INFINITY;
        }
        worst = worst.max(max_diff(got.data(), &conv_oracle(&input, &kernels, &bias)));
    }
    worst
}

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(w: &Tensor, v: &[f64], i: usize) -> f64 {
    let cols = v.len();
    (0..cols).map(|j| w.data()[i * cols + j] * v[j]).sum()
}

/// One step of the gated recurrence, written gate by gate.
fn lstm_step_oracle(p: &LstmParams, x: &[f64], h: &[f64], m: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cells = h.len();
    let pre = |g: usize, i: usize| affine(&p.recurrent[g], h, i) + affine(&p.projection[g], x, i) + p.bias[g].data()[i];
    let mut h_next = vec![0.0; cells];
    let mut m_next = vec![0.0; cells];
    for i in 0..cells {
        let g_u = sigma(pre(0, i));
        let g_f = sigma(pre(1, i));
        let g_o = sigma(pre(2, i));
        let g_c = pre(3, i).tanh();
        m_next[i] = g_f * m[i] + g_u * g_c;
        h_next[i] = (g_o * m_next[i]).tanh();
    }
    (h_next, m_next)
}

fn random_lstm(rng: &mut EngineRng, cells: usize, width: usize) -> LstmParams {
    let mut p = LstmParams::zeros(cells, width);
    for t in p.tensors_mut() {
        *t = random_tensor(rng, t.shape(), 0.8);
    }
    p
}

/// Largest deviation of `lstm_apply` from the gate-by-gate oracle over
/// `seeds` random configurations.
pub fn lstm_max_error(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = seeded_rng(seed);
        let cells = rng.gen_range(1..10);
        let width = rng.gen_range(1..12);
        let steps = rng.gen_range(1..5);
        let p = random_lstm(&mut rng, cells, width);
        let xs: Vec<Tensor> = (0..steps).map(|_| random_tensor(&mut rng, &[width], 2.0)).collect();
        let out = lstm_apply(&p, &xs).unwrap();
        let (mut h, mut m) = (vec![0.0; cells], vec![0.0; cells]);
        for (t, x) in xs.iter().enumerate() {
            (h, m) = lstm_step_oracle(&p, x.data(), &h, &m);
            worst = worst.max(max_diff(out.all_h[t].data(), &h));
        }
        worst = worst.max(max_diff(out.h_final.data(), out.all_h[steps - 1].data()));
    }
    worst
}

/// Largest deviation of `attention_lstm_apply` (weights and final state) from
/// the alignment oracle over `seeds` random configurations.
pub fn attention_max_error(seeds: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let mut rng = seeded_rng(1000 + seed);
        let cells = rng.gen_range(1..10);
        let width = rng.gen_range(1..20);
        let align = rng.gen_range(1..8);
        let mut p = AttentionParams::zeros(cells, width, align);
        for t in p.tensors_mut() {
            *t = random_tensor(&mut rng, t.shape(), 0.8);
        }
        let series = random_tensor(&mut rng, &[width], 2.0);
        let out = attention_lstm_apply(&p, &series, series.data()).unwrap();

        // e_j = vᵀ tanh(W s + U h_j) with s the zero initial state.
        let s = vec![0.0; cells];
        let scores: Vec<f64> = series
            .data()
            .iter()
            .map(|&h_j| (0..align).map(|a| p.align_v.data()[a] * (affine(&p.align_w, &s, a) + p.align_u.data()[a] * h_j).tanh()).sum())
            .collect();
        let total: f64 = scores.iter().map(|e| e.exp()).sum();
        let alphas: Vec<f64> = scores.iter().map(|e| e.exp() / total).collect();
        let context: f64 = alphas.iter().zip(series.data()).map(|(a, h)| a * h).sum();
        worst = worst.max(max_diff(out.alphas.data(), &alphas));

        let mut x = series.data().to_vec();
        x.push(context);
        let (h, _) = lstm_step_oracle(&p.lstm, &x, &vec![0.0; cells], &vec![0.0; cells]);
        worst = worst.max(max_diff(out.h_final.data(), &h));
    }
    worst
}
