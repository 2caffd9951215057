//! Forward/backward primitives for every layer the model uses, plus a
//! finite-difference gradient checker. All functions are pure over immutable
//! inputs and deterministic.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod pool;
pub mod softmax;

pub use activation::{activation_backward, activation_forward, Activation};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BnForward, Mode};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_output_len};
pub use gradcheck::{central_diff_grad, finite_diff_check, max_rel_err, DEFAULT_H};
pub use linear::{linear_backward, linear_forward};
pub use pool::{maxpool2d_backward, maxpool2d_forward, maxpool2d_output_len, PoolOutput};
pub use softmax::{argmax_row, softmax, softmax_cross_entropy};
