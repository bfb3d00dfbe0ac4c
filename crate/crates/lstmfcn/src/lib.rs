//! File formats, checkpoints, run manifests and the command-line front end
//! around the `lstmfcn-core` engine.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod history;
pub mod manifest;
pub mod results;
pub mod ucr;

pub use error::{Error, Result};
