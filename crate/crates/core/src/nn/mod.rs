//! Small dense numeric kernel used by the attention model.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod matrix;
pub mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{layer_norm, layer_norm_backward, Dense, FeedForward, FfCache, LayerNormParams, LAYER_NORM_EPS};
pub use loss::{softmax_rows, softmax_rows_backward, softmax_xent};
pub use matrix::{Matrix, Real};
pub use optim::{Optimizer, OptimizerKind};

/// Named access to every trainable tensor of a model, in a fixed order.
///
/// Gradient containers share the model's type, so the `i`-th tensor of a
/// gradient lines up with the `i`-th tensor of the parameters.
pub trait Parameters<T: Real> {
    fn tensors(&self) -> Vec<(String, &Matrix<T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }
}
