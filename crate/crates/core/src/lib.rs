//! Geometric analysis of transformer residual-stream trajectories.
//!
//! The crate reads captured residual traces, measures each token's path
//! through the layers under the pullback metric of the unembedding
//! (salience, discrete curvature) alongside the older raw-coordinate metrics
//! (cosine, deviation, layer angle), aligns concern-shifted prompts against
//! their neutral control, and reports deltas, correlations and one-sided
//! paired t-tests. Token x layer grids render to SVG heatmaps.

pub mod commands;
pub mod error;
pub mod geometry;
pub mod grids;
pub mod heatmap;
pub mod metric;
pub mod stats;
pub mod trace_io;

pub use error::{Error, Result};
pub use geometry::{Bend, CurvatureSeries, DerivativePair, Trajectory};
pub use metric::{MetricMode, SemanticMetric};
pub use trace_io::{MetricGrid, TraceSet, UnembeddingMatrix, Variant};
