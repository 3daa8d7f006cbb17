//! Multi-fiber convolutional networks, end to end on the CPU.
//!
//! The crate provides:
//!
//! - [`tensor`]: a dense tensor type and exact direct-summation kernels
//!   (grouped 2D/3D convolution, pooling, batch norm, linear, relu) with a
//!   finite-difference gradient checker;
//! - [`graph`]: a declarative layer graph with shape checking, forward
//!   evaluation, and reverse-mode gradients;
//! - [`blocks`]: builders for the multiplexer and the multi-fiber unit,
//!   plus the connection-count arithmetic behind fiber slicing;
//! - [`arch`]: full network builders (2D/3D MF-Net and a reference
//!   ResNet-18 used as a cost-model anchor);
//! - [`cost`]: analytical parameter and multiply-add accounting per layer;
//! - [`inflate`]: 2D→3D kernel inflation of trained checkpoints;
//! - [`train`]: SGD with momentum, a synthetic motion dataset, and the
//!   multi-clip evaluation protocol;
//! - [`io`]: binary checkpoints and text configuration parsing for the
//!   `mfnet` CLI.
//!
//! Everything is single-threaded and bitwise deterministic given seeds.

pub mod arch;
pub mod blocks;
pub mod check;
pub mod cost;
pub mod error;
pub mod graph;
pub mod inflate;
pub mod io;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Precision, Scalar, Tensor};
