//! Simulation of retinal-ganglion-cell style event sensors.
//!
//! A frame sequence is turned into events by correlating each frame's change
//! against a per-pixel memory with a small spatial kernel and quantizing the
//! result against per-polarity contrast thresholds. Two routes produce the
//! network-facing voxel grid:
//!
//! - [`oracle`] walks every event explicitly (timestamps, refractory window,
//!   shot noise) and is the reference.
//! - [`binner`] computes the same grid in closed form from arithmetic series,
//!   and [`grad`] differentiates it with a straight-through estimator for the
//!   floor quantization.
//!
//! [`learn`] builds a small optimization loop on top of that gradient path to
//! trade task loss against event bandwidth.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod binner;
pub mod conv;
pub mod error;
pub mod exec;
pub mod grad;
pub mod learn;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod presets;

pub use error::{Error, Result};
pub use model::{
    BorderMode, FrameSequence, IntensityDomain, KernelBank, Layout, MemoryUpdate, Plane,
    RgcKernel, SensorState, SimConfig, VoxelGrid,
};

/// Hard cap on the number of events produced by a single simulation pass.
pub const EVENT_BUDGET: u64 = 100_000_000;
