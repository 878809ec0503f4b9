//! Minimal dense network engine: forward pass, backpropagation and plain SGD.
//! Used both for collaborator classifiers and for the weight autoencoders.

mod checkpoint;
mod network;
mod tensor;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{argmax, evaluate, loss, Activation, DenseLayer, LossKind, Network};
pub use tensor::Tensor;
pub use train::{
    gradients, train, train_observed, train_step, LayerGrad, TrainConfig, TrainObserver,
    TrainingHistory,
};

/// Total parameter count, `Σ out·in + out`.
pub fn param_count(net: &Network) -> u64 {
    net.param_count()
}
