//! Geometry-semantics fusion for toy multimodal language models.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! pipeline: a small reverse-mode autograd tensor library, frozen encoder
//! stand-ins with per-block taps, the single and hierarchical adapters with
//! interleaved token fusion and random CLIP-branch dropping, a toy
//! decoder-only language model with low-rank adaptation, the two-stage
//! training schedule, the metric-answer scoring protocol, dataset tooling and
//! the embedding-similarity probe.
//!
//! File IO, configuration parsing and the command line live in the companion
//! `spatialgeo` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod lm;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use params::ParamSet;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
