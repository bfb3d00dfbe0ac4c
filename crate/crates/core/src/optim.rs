//! Adam, the plateau learning-rate scheduler and the fine-tuning schedule.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub const INITIAL_LR: f64 = 1e-3;
pub const FINAL_LR: f64 = 1e-4;
pub const PLATEAU_PATIENCE: usize = 100;
pub const MIN_FINETUNE_BATCH: usize = 32;
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-12;

/// `2^(−1/3)`
pub fn plateau_factor() -> f64 {
    libm::pow(2.0, -1.0 / 3.0)
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh optimiser state for parameters of the given shapes.
    pub fn new<'a>(lr: f64, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, v: m.clone(), m }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update in place.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(dim_err(
                "adam_step",
                format!("optimiser tracks {} tensors, got {} parameters and {} gradients", self.m.len(), params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(dim_err(
                    "adam_step",
                    format!("tensor {i}: parameter {:?}, gradient {:?}, state {:?}", p.shape(), g.shape(), self.m[i].shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// Reduces the learning rate by a constant factor after `patience` epochs
/// without improvement of the monitored score (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub floor: f64,
    pub best: f64,
    pub stale_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64) -> Self {
        Self { lr, factor: plateau_factor(), patience: PLATEAU_PATIENCE, floor: FINAL_LR, best: f64::NEG_INFINITY, stale_epochs: 0 }
    }

    /// Records one epoch's score and returns the learning rate to use next.
    pub fn update(&mut self, score: f64) -> f64 {
        if score > self.best + IMPROVEMENT_THRESHOLD || self.best == f64::NEG_INFINITY {
            self.best = score;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr = (self.lr * self.factor).max(self.floor);
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning-rate and batch-size schedule of the fine-tuning phase: the
/// learning rate halves every iteration and the batch size halves every
/// second iteration, both clamped at their floors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneSchedule {
    pub iteration: usize,
    pub iterations: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lr_floor: f64,
    pub batch_floor: usize,
}

impl FineTuneSchedule {
    pub fn new(iterations: usize, lr: f64, batch_size: usize) -> Self {
        Self {
            iteration: 0,
            iterations,
            lr: lr.max(FINAL_LR),
            batch_size: batch_size.max(MIN_FINETUNE_BATCH),
            lr_floor: FINAL_LR,
            batch_floor: MIN_FINETUNE_BATCH,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.iteration >= self.iterations
    }

    /// `(lr, batch_size)` for the current iteration.
    pub fn current(&self) -> (f64, usize) {
        (self.lr, self.batch_size)
    }

    /// Moves to the next iteration and returns its `(lr, batch_size)`.
    pub fn advance(&mut self) -> Result<(f64, usize)> {
        if self.is_exhausted() {
            return Err(Error::ScheduleExhausted(self.iterations));
        }
        self.iteration += 1;
        self.lr = (self.lr / 2.0).max(self.lr_floor);
        if self.iteration % 2 == 0 {
            self.batch_size = (self.batch_size / 2).max(self.batch_floor);
        }
        Ok(self.current())
    }

    /// The `(lr, batch_size)` pair every iteration will start with.
    pub fn plan(&self) -> Vec<(f64, usize)> {
        let mut s = self.clone();
        let mut out = Vec::new();
        while !s.is_exhausted() {
            out.push(s.current());
            s.advance().expect("not exhausted");
        }
        out
    }
}
