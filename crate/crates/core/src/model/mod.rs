//! Toy transformer whose every attention layer uses a PPA mask, plus the
//! synthetic recall task and training loop.

pub mod checkpoint;
pub mod network;
pub mod params;
pub mod task;
pub mod train;

pub use network::{forward, loss_and_grads, Example};
pub use params::{LayerParams, ModelConfig, ModelParams};
pub use task::{RecallFormat, RecallSample, RecallTask};
pub use train::{evaluate, train, Optimizer, TrainConfig, TrainReport};
