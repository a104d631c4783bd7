//! The next-parameter sequence model: tokenization of adaptation histories,
//! a pre-layernorm causal transformer over iteration blocks, shifted-input
//! MSE training, and the three prediction heads (history-conditioned,
//! one-shot direct, one-shot residual).

mod config;
mod net;
mod train;
mod window;

pub use config::{HeadMode, ModelConfig};
pub use net::{Model, TokenizedWindow};
pub use train::{lr_at, mix, train, train_until, training_step, BatchSampler, TrainConfig, TrainError, TrainState};
pub use window::{window_targets, HistoryWindow, NormRecord};
