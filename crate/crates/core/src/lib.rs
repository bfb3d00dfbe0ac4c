//! LSTM-FCN and ALSTM-FCN time series classifiers built from first principles.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! engine: tensors and their kernels, differentiable layers with hand-written
//! backward passes, the two-branch models, Adam with plateau and fine-tuning
//! schedules, the training loops, the synthetic CBF generator and the
//! rank-based evaluation statistics. File formats and the command line live in
//! the `lstmfcn` crate.
//!
//! Enable the `std` feature to let the GEMM kernels pick AVX/FMA code paths at
//! runtime.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod stats;
pub mod tensor;
pub mod train;

mod gemm;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Deterministic random number generator used throughout the engine.
pub type EngineRng = rand_chacha::ChaCha8Rng;

/// Seeds an [`EngineRng`].
pub fn seeded_rng(seed: u64) -> EngineRng {
    use rand::SeedableRng;
    EngineRng::seed_from_u64(seed)
}
