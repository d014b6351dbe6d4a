//! Core engine for a video-to-music sequence model.
//!
//! Everything numeric lives here: a dense `f64` tensor type, a tape-based
//! reverse-mode differentiation engine covering exactly the operations the
//! model needs, the three-stage generator (patch encoder, query-based
//! feature transform, conditional token decoder), the contrastive
//! video/music correspondence scorer, an Adam optimizer with cosine
//! warmup, a synthetic paired-data generator with a planted cross-modal
//! correlation, and a finite-difference gradient checker.
//!
//! The crate is `no_std` + `alloc`: it performs no I/O and draws no
//! entropy from the environment, so every computation is reproducible
//! bit-for-bit from explicit seeds. File formats, the CLI, and training
//! drivers that talk to the filesystem live in the companion `gvm-cli`
//! crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod math;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod render;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod transform;

pub use config::{EvalConfig, GenConfig, Pooling, TaLossVariant, VisualConfig};
pub use error::{Error, Result};
pub use params::{Init, ParamId, Params};
pub use tape::{Mask, Tape, ValueId};
pub use tensor::Tensor;
