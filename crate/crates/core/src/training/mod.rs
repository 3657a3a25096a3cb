//! Losses, optimizer and the synthetic reconstruction training loop.

pub mod data;
pub mod loss;
pub mod model;
pub mod sgd;
pub mod toy;

pub use data::{synthetic_pairs, DataSpec, PairedImages};
pub use loss::{rc_loss, rc_loss_graph, total_loss, total_loss_graph, LossWeights};
pub use model::{Reconstruction, ReconstructionModel};
pub use sgd::{Sgd, SgdConfig};
pub use toy::{toy_encoder_config, toy_train_run, TrainConfig, TrainReport};
