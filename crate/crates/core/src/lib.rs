//! Coverage anomaly detection over georeferenced RSRP measurements.
//!
//! Samples are binned onto a [`grid`], each cell's sparse field is densified by
//! GP [`extrapolation`], modeled by a small [`nn`] and scored by the
//! per-cell [`indices`]. The [`collector`] module simulates the RAN-side agent
//! and central collector that feed unpositioned MR traffic into the same grid.

pub mod collector;
pub mod components;
pub mod extrapolation;
pub mod grid;
pub mod indices;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod simulator;

pub use scalar::Scalar;

/// Double-precision GP, the default for extrapolation.
pub type GpModel = extrapolation::GpModel<f64>;

/// Single-precision coverage network; training runs in `f32` by default.
pub type Mlp = nn::Mlp<f32>;
