//! Layer primitives with hand-written reverse-mode derivatives.

pub mod activation;
pub mod conv;
pub mod pool;

pub use activation::{prelu, prelu_backward, relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward, tconv2d_backward, tconv2d_forward, ConvGrads, ConvSpec, Padding};
pub use pool::{maxpool_backward, maxpool_forward, ArgMax};
