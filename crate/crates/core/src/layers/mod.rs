//! Convolution, pooling, normalization, dropout and the backbone built
//! from them.

mod backbone;
mod conv;
mod dropout;
mod norm;
mod pool;

pub use backbone::{BackboneSpec, FeatureMaps, Layer, LayerMeta};
pub use conv::conv2d;
pub use dropout::dropout;
pub use norm::{batchnorm, BatchNormConfig};
pub use pool::maxpool2d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}
