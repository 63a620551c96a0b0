//! Numerical building blocks: layers with hand-written backward passes,
//! Adam, and a finite-difference gradient oracle.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod pool;

pub use activation::{relu_backward, relu_forward, softmax_rows};
pub use adam::{AdamConfig, AdamState, NamedParam};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_eval, batchnorm_forward_train, BatchNormCache,
    BatchNormLayer, NormMode,
};
pub use conv::{conv1d_backward, conv1d_forward, ConvLayer};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub use gradcheck::{finite_diff_gradcheck, finite_diff_gradcheck_steps, finite_diff_gradcheck_strided, Differentiable, GradcheckReport};
pub use pool::{global_avg_pool, global_avg_pool_backward};
