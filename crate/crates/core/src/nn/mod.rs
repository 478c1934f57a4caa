//! Minimal reverse-mode differentiation and the reconstruction network.

pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod network;
pub mod tape;
pub mod tensor;
pub mod train;

pub use loss::{deep_supervision_loss, deep_supervision_terms, loss_bce, loss_l2, LossKind};
pub use network::{Network, NetworkConfig, OutputNonlinearity};
pub use tape::{Activation, Gradients, Tape, Var};
pub use tensor::{downsample, Scalar, Tensor};
pub use train::{
    evaluate, head_consistency, occupancy_iou, preprocess, reconstruct, train, train_from, EpochRecord, Optimizer, Sample,
    TrainConfig, TrainOutcome, VolumeScale,
};
pub use checkpoint::Checkpoint;
