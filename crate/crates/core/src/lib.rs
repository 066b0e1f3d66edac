//! Smooth, arbitrarily long vector strokes and closed areas driven by
//! image-space objectives.
//!
//! Paths are cardinal B-splines parameterized by key-points `(x, y, radius)`.
//! A fixed chain of sparse linear maps takes key-points to spline control
//! points, to a cubic Bézier chain, and to polyline samples that a soft
//! rasterizer turns into an image. Because every map is linear, image-space
//! gradients travel back to key-points through transposed matrices.

pub mod apps;
pub mod bezier;
pub mod config;
pub mod engine;
pub mod objectives;
pub mod palette;
pub mod raster;
pub mod seeding;
pub mod smoothing;
pub mod scene;
pub mod sparse;
pub mod spline;
pub mod svg;
