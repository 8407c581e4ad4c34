//! Differentiable neural-network kernels.

mod activation;
mod conv;
mod deform;
mod norm;
mod resize;
mod shuffle;

pub use activation::{gelu, leaky_relu, linear, softmax};
pub use conv::conv2d;
pub use deform::deformable_conv2d;
pub use norm::layer_norm;
pub use resize::bilinear_resize;
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
