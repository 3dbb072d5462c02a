//! Few-shot video classification with compound prototypes.
//!
//! Per-frame and per-object features are encoded by relation transformers,
//! decoded into global and focused prototypes, and matched across videos.
//! Everything runs on a small reverse-mode autodiff tape over dense
//! row-major tensors, generic over `f32`/`f64`.

pub mod autodiff;
pub mod engine;
pub mod error;
pub mod feature_io;
pub mod matching;
pub mod nn;
pub mod objective;
pub mod parallel;
pub mod params;
pub mod prototype_decoder;
pub mod relation_encoder;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
