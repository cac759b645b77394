//! Convolutional classifier with hand-written forward and backward passes.

mod layers;
mod model;
mod scalar;
mod tensor;

pub use layers::{
    conv2d, conv2d_backward, dense, dense_backward_batch, dropout, elu, elu_scalar, maxpool2d,
    maxpool2d_backward, softmax, softmax_cross_entropy, Mode,
};
pub use model::{
    batch_gradients, forward, init_params, loss, loss_and_gradients, sgd_nesterov_step,
    NetworkConfig, NetworkParams, Sample, CONV_BLOCKS, INPUT_FRAMES,
};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
