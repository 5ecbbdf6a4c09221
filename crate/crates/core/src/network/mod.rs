//! A small convolutional patch classifier with explicit backpropagation.

mod checkpoint;
pub mod gradcheck;
mod layer;
mod loss;
mod model;

pub use checkpoint::{load_checkpoint, model_from_str, model_to_string, save_checkpoint};
pub use layer::{output_shape, Cache, Layer, LayerKind, LayerSpec, Shape};
pub use loss::{hierarchical_loss, mean_softmax_ce, softmax, softmax_ce, HierarchicalLoss, HierarchicalLossOutput};
pub use model::{default_architecture, Gradients, LabelSpace, LossMode, Model, StepLoss, Target};
