//! Minimal reverse-mode differentiation for small recurrent models: a tape of
//! `f64` tensor primitives, an Adam optimiser, central-difference gradient
//! checking and a bit-exact checkpoint encoding.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod params;
mod primitive;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, EncodedTensor, CHECKPOINT_FORMAT_VERSION};
pub use error::{AutodiffError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Stencil};
pub use params::{BoundParams, Gradients, ParamId, ParamStore, Parameter};
pub use primitive::Primitive;
pub use tape::{dropout_mask, Tape, Var};
pub use tensor::Tensor;
