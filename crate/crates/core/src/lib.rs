//! Core of the OCC in-band power measurement toolkit.
//!
//! The crate is `no_std` (with `alloc`) and contains everything that does not
//! touch the operating system:
//!
//! * [`image`]: the OCC-IMAGE v1 sensor image codec, ping/pong buffer selection
//!   and the optimized single-sensor read path.
//! * [`reader`]: the readout loop over an [`reader::ImageSource`], plus the
//!   readout-latency and external-update-rate benchmarks.
//! * [`power`]: power-from-energy, accumulator energy, error statistics,
//!   polynomial fits and the bulk-vs-component consistency check.
//! * [`sim`]: a deterministic emulation of the on-chip sampling pipeline.
//! * [`aliasing`]: spread comparison, beat-pattern frequency and internal
//!   sampling rate estimation.
//!
//! IO, file formats and the command line live in the `occtool` crate.

#![no_std]
#![warn(rust_2018_idioms)]
// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod aliasing;
pub mod image;
pub mod power;
pub mod reader;
pub mod sim;

pub use image::{SensorImage, SensorRecord};
pub use reader::{RawTrace, ReadMode};
