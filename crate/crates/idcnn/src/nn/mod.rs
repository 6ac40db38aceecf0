//! Minimal dense neural-network engine: the fixed layer set used by the
//! impulse detector, its backward passes, loss, optimizer, initializer and
//! gradient verification.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod loss;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use adam::AdamState;
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, BatchNormParams, BnCache, BnGrads,
    BnMode,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads, ConvParams};
pub use init::glorot_uniform;
pub use loss::mse_loss;
