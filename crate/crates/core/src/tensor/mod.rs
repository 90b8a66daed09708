//! Dense array type plus the forward/backward kernels the network is built
//! from, and a finite-difference gradient checker to keep them honest.

mod array;
mod gradcheck;
mod kernels;

pub use array::{LayerGrad, NumericArray};
pub use gradcheck::grad_check;
pub use kernels::{
    conv1d_depthwise, conv1d_depthwise_backward, conv1d_pointwise, conv1d_pointwise_backward,
    dense, dense_backward, maxpool1d, maxpool1d_backward, out_len, relu, relu_backward, softmax,
    softmax_backward, softmax_cross_entropy, tanh_act, tanh_backward,
};

pub(crate) use array::{axpy, dot};
