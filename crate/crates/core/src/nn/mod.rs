//! Minimal trainable networks with maskable layers: tensors,
//! forward/backward, Adam, datasets, augmentation, and the training loop
//! that samples pruning masks every step.

pub mod checkpoint;
pub mod data;
pub mod layers;
pub mod models;
pub mod network;
pub mod prune;
pub mod tensor;
pub mod train;

pub use data::{load_cifar10_binary, synthetic_dataset, DatasetSplit};
pub use layers::{BatchNorm, Conv2d, Dense, Layer};
pub use network::{backward, forward, softmax_cross_entropy, Adam, Network};
pub use prune::{HamiltonianKind, PruneConfig, PruneState, Structure};
pub use tensor::Tensor;
pub use train::{evaluate, train_and_prune, EpochStats, MaskMode, TrainOptions, TrainResult};
