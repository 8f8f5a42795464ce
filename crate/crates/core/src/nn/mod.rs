//! Tensor kernels, the encoder-decoder surrogate, Adam and the training loop.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{ForwardCache, LayerSpec, Model, ModelConfig};
pub use tensor::Tensor;
pub use train::{train, EpochLoss, TrainConfig, TrainOutcome};
