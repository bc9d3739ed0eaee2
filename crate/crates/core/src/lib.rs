//! Hierarchy-aware fixed classifier frames.
//!
//! The crate builds frames from label trees, trains a small classifier whose
//! penultimate features are pulled onto the frame, and measures mistake
//! severity and neural-collapse diagnostics.

pub mod frame;
pub mod harness;
pub mod hierarchy;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synth;
