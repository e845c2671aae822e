//! Weakly supervised temporal action localization on 1-D multi-channel
//! streams: segment types and rasterization, sliding-window proposal
//! generation, multiple-instance pooling kernels with pseudo-label
//! refinement, a small trainable localizer, temporal NMS and segment
//! resolution, frame/event metrics, a synthetic benchmark generator, and a
//! leave-one-subject-out evaluation harness.

pub mod error;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod mil;
pub mod postprocess;
pub mod proposals;
pub mod segment;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
