//! A small feed-forward network library with a bounded pre-softmax hook.

mod checkpoint;
mod layer;
mod model;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layer::{Layer, ParamGrad};
pub(crate) use model::count_correct;
pub use model::{Backward, GammaMode, Gradients, Model, Output, Pass, LEARNABLE_GAMMA_INIT};
pub use tensor::Tensor;
pub use train::{epsilon_at, lr_at, train, EpochMetrics, EpsilonStep, LrStep, Sgd, SgdConfig, TrainConfig, TrainReport};
