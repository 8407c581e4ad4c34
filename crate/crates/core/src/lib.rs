//! Low-light video enhancement with a spatio-temporally aligned Swin U-Net.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nnops;
pub mod params;
pub mod swin;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
