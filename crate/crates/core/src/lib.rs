//! Power-based partial attention (PPA).
//!
//! A causal attention mask family whose per-token attended set is the union
//! of a sliding window and the relative distances `j` at which `floor(j^p)`
//! increments. Total attended entries scale as `O(L^(1+p))`: `p = 0` is pure
//! sliding-window attention and `p = 1` is full causal attention.
//!
//! * [`mask`] builds the masks exactly and counts them without materializing.
//! * [`attention`] holds dense and sparse (gather) single-head kernels with
//!   analytic gradients.
//! * [`model`] is a small trainable transformer plus the synthetic recall
//!   task used to measure accuracy as a function of `p`.

pub mod attention;
pub mod error;
pub mod mask;
pub mod matrix;
pub mod model;

pub use error::{PpaError, Result};
pub use mask::{MaskConfig, MaskRow, PatternKind};
pub use matrix::RealMatrix;
