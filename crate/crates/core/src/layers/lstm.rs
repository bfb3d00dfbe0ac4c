use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::sigmoid;
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Gate names in storage order: update (input), forget, output, cell candidate.
pub const GATES: [&str; 4] = ["u", "f", "o", "c"];
const U: usize = 0;
const F: usize = 1;
const O: usize = 2;
const C: usize = 3;

/// Recurrent weights `W` (`M × M`), input projections `I` (`M × D`) and biases
/// (`M`) for the four gate families, indexed in [`GATES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub recurrent: [Tensor; 4],
    pub projection: [Tensor; 4],
    pub bias: [Tensor; 4],
}

impl LstmParams {
    pub fn zeros(cells: usize, input_width: usize) -> Self {
        Self {
            recurrent: core::array::from_fn(|_| Tensor::zeros(&[cells, cells])),
            projection: core::array::from_fn(|_| Tensor::zeros(&[cells, input_width])),
            bias: core::array::from_fn(|_| Tensor::zeros(&[cells])),
        }
    }

    pub fn cells(&self) -> usize {
        self.bias[0].len()
    }

    pub fn input_width(&self) -> usize {
        self.projection[0].shape()[1]
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.recurrent.iter().chain(&self.projection).chain(&self.bias)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.recurrent.iter_mut().chain(&mut self.projection).chain(&mut self.bias)
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    m_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    m: Vec<f64>,
    h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<StepCache>,
}

#[derive(Debug, Clone)]
pub struct LstmOutput {
    pub h_final: Tensor,
    pub all_h: Vec<Tensor>,
    pub cache: LstmCache,
}

fn matvec_add(w: &Tensor, v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(w.data().chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ·v`
fn matvec_t_add(w: &Tensor, v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (vi, row) in v.iter().zip(w.data().chunks_exact(cols)) {
        out.iter_mut().zip(row).for_each(|(o, a)| *o += vi * a);
    }
}

/// `g += a ⊗ b`
fn outer_add(g: &mut Tensor, a: &[f64], b: &[f64]) {
    for (ai, row) in a.iter().zip(g.data_mut().chunks_exact_mut(b.len())) {
        row.iter_mut().zip(b).for_each(|(r, bj)| *r += ai * bj);
    }
}

/// Runs the gated recurrence from `h₀ = m₀ = 0`:
///
/// ```text
/// gᵘ = σ(Wᵘh + Iᵘx + bᵘ)   gᶠ = σ(Wᶠh + Iᶠx + bᶠ)   gᵒ = σ(Wᵒh + Iᵒx + bᵒ)
/// gᶜ = tanh(Wᶜh + Iᶜx + bᶜ)
/// mₜ = gᶠ ⊙ mₜ₋₁ + gᵘ ⊙ gᶜ
/// hₜ = tanh(gᵒ ⊙ mₜ)
/// ```
pub fn lstm_apply(params: &LstmParams, steps: &[Tensor]) -> Result<LstmOutput> {
    let (cells, width) = (params.cells(), params.input_width());
    let mut h = vec![0.0; cells];
    let mut m = vec![0.0; cells];
    let mut cache = Vec::with_capacity(steps.len());
    let mut all_h = Vec::with_capacity(steps.len());
    for (t, x) in steps.iter().enumerate() {
        if x.len() != width {
            return Err(dim_err("lstm", format!("step {t} has width {} but the cell expects {width}", x.len())));
        }
        let gates: [Vec<f64>; 4] = core::array::from_fn(|g| {
            let mut z = params.bias[g].data().to_vec();
            matvec_add(&params.recurrent[g], &h, &mut z);
            matvec_add(&params.projection[g], x.data(), &mut z);
            if g == C {
                z.iter_mut().for_each(|v| *v = libm::tanh(*v));
            } else {
                z.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            z
        });
        let m_next: Vec<f64> = (0..cells).map(|j| gates[F][j] * m[j] + gates[U][j] * gates[C][j]).collect();
        let h_next: Vec<f64> = (0..cells).map(|j| libm::tanh(gates[O][j] * m_next[j])).collect();
        cache.push(StepCache { x: x.data().to_vec(), h_prev: h, m_prev: m, gates, m: m_next.clone(), h: h_next.clone() });
        all_h.push(Tensor::vector(h_next.clone()));
        h = h_next;
        m = m_next;
    }
    Ok(LstmOutput { h_final: Tensor::vector(h), all_h, cache: LstmCache { steps: cache } })
}

/// Back-propagation through time from a gradient on the final hidden state.
///
/// Returns the parameter gradients (same layout as the parameters) and one
/// input gradient per step.
pub fn lstm_backward(params: &LstmParams, cache: &LstmCache, grad_h_final: &[f64]) -> (LstmParams, Vec<Vec<f64>>) {
    let (cells, width) = (params.cells(), params.input_width());
    let mut grads = LstmParams::zeros(cells, width);
    let mut d_x = vec![Vec::new(); cache.steps.len()];
    let mut dh = grad_h_final.to_vec();
    let mut dm = vec![0.0; cells];
    for (t, s) in cache.steps.iter().enumerate().rev() {
        let mut dz: [Vec<f64>; 4] = core::array::from_fn(|_| vec![0.0; cells]);
        for j in 0..cells {
            let da = dh[j] * (1.0 - s.h[j] * s.h[j]);
            let (gu, gf, go, gc) = (s.gates[U][j], s.gates[F][j], s.gates[O][j], s.gates[C][j]);
            let dm_j = dm[j] + da * go;
            dz[O][j] = da * s.m[j] * go * (1.0 - go);
            dz[F][j] = dm_j * s.m_prev[j] * gf * (1.0 - gf);
            dz[U][j] = dm_j * gc * gu * (1.0 - gu);
            dz[C][j] = dm_j * gu * (1.0 - gc * gc);
            dm[j] = dm_j * gf;
        }
        let mut dh_prev = vec![0.0; cells];
        let mut dx = vec![0.0; width];
        for g in 0..4 {
            outer_add(&mut grads.recurrent[g], &dz[g], &s.h_prev);
            outer_add(&mut grads.projection[g], &dz[g], &s.x);
            grads.bias[g].data_mut().iter_mut().zip(&dz[g]).for_each(|(b, d)| *b += d);
            matvec_t_add(&params.recurrent[g], &dz[g], &mut dh_prev);
            matvec_t_add(&params.projection[g], &dz[g], &mut dx);
        }
        d_x[t] = dx;
        dh = dh_prev;
    }
    (grads, d_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_params(rng: &mut impl Rng, cells: usize, width: usize) -> LstmParams {
        let mut p = LstmParams::zeros(cells, width);
        p.tensors_mut().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0)));
        p
    }

    #[test]
    fn zero_weights_keep_hidden_state_at_zero() {
        let p = LstmParams::zeros(3, 2);
        let steps: Vec<Tensor> = (0..4).map(|i| Tensor::vector(vec![i as f64, -2.0 * i as f64])).collect();
        let out = lstm_apply(&p, &steps).unwrap();
        assert!(out.all_h.iter().all(|h| h.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn hidden_state_stays_inside_unit_interval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut p = random_params(&mut rng, 4, 3);
            p.tensors_mut().for_each(|t| t.scale(5.0));
            let steps: Vec<Tensor> = (0..6).map(|_| Tensor::vector((0..3).map(|_| rng.gen_range(-10.0..10.0)).collect())).collect();
            let out = lstm_apply(&p, &steps).unwrap();
            for (h, s) in out.all_h.iter().zip(&out.cache.steps) {
                // Saturated sigmoids round to exactly 0 or 1 in f64.
                assert!(h.data().iter().all(|v| v.abs() <= 1.0));
                for g in [U, F, O] {
                    assert!(s.gates[g].iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
                assert!(s.gates[C].iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn wrong_step_width_is_rejected() {
        let p = LstmParams::zeros(2, 3);
        assert!(lstm_apply(&p, &[Tensor::vector(vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn backward_of_zero_gradient_is_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 3, 2);
        let steps: Vec<Tensor> = (0..3).map(|_| Tensor::vector(vec![0.3, -0.1])).collect();
        let out = lstm_apply(&p, &steps).unwrap();
        let (g, dx) = lstm_backward(&p, &out.cache, &[0.0; 3]);
        assert!(g.tensors().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(dx.iter().flatten().all(|&v| v == 0.0));
    }
}
