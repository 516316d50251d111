//! Minimal neural-network engine: the layer set needed for the two-class
//! vessel U-Net, with hand-written reverse-mode gradients and Adam.
//!
//! Layers cache what their backward pass needs during a recorded forward
//! pass; calling `backward` without a preceding recorded forward is an
//! error, as is calling it twice.

mod activation;
mod adam;
mod conv;
mod dropout;
mod loss;
mod norm;
mod pool;

pub use activation::{relu6, relu6_backward, Relu6};
pub use adam::AdamState;
pub use conv::{conv2d, Conv2d};
pub use dropout::{dropout, Dropout};
pub use loss::{softmax_cross_entropy, softmax_probs};
pub use norm::BatchNorm2d;
pub use pool::{maxpool2, upsample_nearest2, MaxPool2, UpsampleNearest2};

/// Forward-pass mode. Train mode records caches for backward, applies
/// dropout, and updates batch-norm running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
