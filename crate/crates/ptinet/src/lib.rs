//! Joint pedestrian trajectory and crossing-intention forecasting.
//!
//! The model consumes m observed frames of a pedestrian (bounding boxes and
//! velocities), local context (pedestrian attributes, per-frame behaviour and
//! scene attributes), and global context (full frames plus dense optical
//! flow), fuses the per-path encodings into a single feature vector, and
//! rolls out two recurrent decoders: one emitting n future bounding boxes,
//! the other a per-step probability that the pedestrian will cross.
//!
//! The crate also ships the supporting tooling: track/flow file formats, a
//! deterministic synthetic scene generator with analytic ground-truth flow,
//! losses and metrics, a reverse-mode autodiff tape the model is built on,
//! and a training/evaluation CLI.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod domain;
pub mod error;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod synth;
pub mod train;

pub use error::{PtiError, Result};
