//! A desk-scale video world-modelling pipeline built from scratch: a dense
//! tensor engine with reverse-mode autodiff, a VQ-VAE frame tokenizer, a
//! corrector/predictor/decoder transformer triplet with a decoder-only
//! baseline, a deterministic 2D physics dataset generator, and a success
//! classifier with sample-efficiency measurement.

pub mod baseline;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod physics;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod worldmodel;

pub use config::{Arch, RunConfig};
pub use error::{Error, Result};
pub use physics::{Label, Split};
pub use tensor::{
    Bound, Element, OptimizerMode, OptimizerState, ParamId, Params, Tape, TapeStats, Tensor, Var,
};
