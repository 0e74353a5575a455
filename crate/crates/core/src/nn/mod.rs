//! Minimal dense tensor machinery used by the encoder and scoring heads.

pub mod gradcheck;
pub mod mat;
pub mod params;
pub mod tape;

pub use mat::Mat;
pub use params::{Grad, Grads, ParamId, ParamSet};
pub use tape::{softmax, Tape, Var};
