//! Toolkit for the ANTBlock / e-ANTBlock / ANTNet family of mobile CNNs.
//!
//! - [`tensor`], [`ops`], [`graph`]: a small double-precision tensor engine
//!   with reverse-mode gradients.
//! - [`blocks`]: ANTBlock (channel attention between the depthwise and the
//!   group-wise projection layers), its placement variants, the inverted
//!   residual baseline and the softmax-weighted e-ANTBlock.
//! - [`arch`], [`network`]: declarative stage tables and executable networks.
//! - [`costmodel`]: analytic parameter and multiply-add accounting.
//! - [`fcrf`]: channel dependency analysis (full channel receptive field).
//! - [`harness`]: optimizer, schedule, data, training, gradient checks and
//!   checkpoints.

pub mod arch;
pub mod blocks;
pub mod costmodel;
pub mod error;
pub mod fcrf;
pub mod graph;
pub mod harness;
pub mod network;
pub mod ops;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Tensor};
