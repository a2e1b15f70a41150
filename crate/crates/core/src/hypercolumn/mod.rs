//! On-demand hypercolumn extraction and mini-batch pixel sampling.

mod interp;
mod sampler;

pub use interp::{
    dense_hypercolumn, feature_coords, sample_hypercolumn, scatter_gradient, Hypercolumn, PixelCoord, Provenance,
};
pub use sampler::{
    build_batch, positive_quota, sample_pixels_biased, sample_pixels_uniform, BatchEntry, PixelBatch,
    SamplingStrategy,
};
