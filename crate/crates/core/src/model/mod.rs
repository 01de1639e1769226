//! Distributional network: tensors, reverse-mode autodiff, the residual
//! MLP, the optimizer, training, checkpoints and the hyperparameter grid.

pub mod autodiff;
pub mod checkpoint;
pub mod grid;
pub mod mlp;
pub mod optim;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest};
pub use grid::{grid_search, GridResult, GridSpec};
pub use mlp::{Mlp, MlpSpec};
pub use train::{train, TrainConfig, TrainOutcome};
