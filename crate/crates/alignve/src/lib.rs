//! Visual entailment from alignment relations.
//!
//! The model encodes a premise image (as precomputed grid or RoI features)
//! and a hypothesis sentence with self-attention encoders, takes the matrix
//! of dot products between encoded premise regions and hypothesis tokens as
//! the relation representation, pools it adaptively to a fixed-size vector,
//! and classifies the pair as entailment, neutral or contradiction.
//!
//! Everything runs on a small reverse-mode autodiff tape with deterministic
//! seeding, so training runs are reproducible bit for bit. See the crate
//! `examples/` directory for one runnable example per capability and the
//! `alignve` binary for the `train`/`eval`/`gradcheck`/`gen-toy`/`visualize`
//! subcommands.

pub mod align;
pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod trainer;
pub mod visual;
pub mod viz;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Gradients, PoolMode, Tape};
pub use tensor::Tensor;
