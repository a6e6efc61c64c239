//! Forward kernels and hand-written adjoints for the dense operation set.
//!
//! These work on plain [`Tensor`](crate::Tensor)s; the tape in
//! [`graph`](crate::graph) strings them together for differentiation.

pub mod conv;
pub mod norm;
pub mod pointwise;
pub mod shuffle;

pub use conv::{conv2d, dwconv2d};
pub use norm::{layer_norm, LAYER_NORM_EPS};
pub use pointwise::{gelu, relu, sigmoid};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
