//! Dense and multi-scale prediction, and evaluation statistics.

mod metrics;
mod predict;

pub use metrics::{
    angular_error, edge_fmeasure, miou_and_accuracy, normal_stats, stats_from_errors, Confusion, EdgeCounts,
    EdgeReport, NormalStats, PrPoint, SegScores,
};
pub use predict::{
    evaluate, predict_dense, predict_multiscale, predict_pixels, resize_bilinear, scaled_extent, EvalReport,
    PredictionMap, DEFAULT_BUDGET, EDGE_THRESHOLDS,
};
