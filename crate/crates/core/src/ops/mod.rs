//! Pure tensor kernels. The recorded (differentiable) versions live in
//! [`crate::autograd`] and call into these.

pub mod attention;
pub mod conv;
pub mod elementwise;
pub mod kernel;
pub mod norm;
pub mod pool;

pub use attention::{attention, attention_weights};
pub use conv::{conv2d, conv2d_transpose, ConvSpec};
pub use elementwise::{pointwise, sigmoid, PointwiseKind};
pub use kernel::{effective_size, embed_kernel, extract_kernel};
pub use norm::{batchnorm, Mode};
pub use pool::{channel_pool, global_avg_pool, PoolMode};
