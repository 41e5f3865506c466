//! Sparse event-driven backbone primitives.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std` (an allocator is required). File formats, parameter
//! checkpoints and the command-line front end live in the `sparse-scan`
//! companion crate.
//!
//! The pipeline, in the order data flows through it:
//!
//! - [`event`]: events, streams and the temporal voxel grid.
//! - [`synth`]: deterministic synthetic scenes (moving edges plus noise).
//! - [`stca`]: spatiotemporal continuity scoring and the keep/discard map.
//! - [`sparsify`]: gathering kept tokens and scattering results back.
//! - [`scan_order`]: raster, cross and information-prioritized orderings.
//! - [`s6`]: zero-order-hold discretization and the selective-scan kernels.
//! - [`backbone`]: the four-stage sparse forward path.
//! - [`flops`]: analytic and measured operation accounting.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod backbone;
pub mod error;
pub mod event;
pub mod flops;
pub mod grid;
pub mod nn;
pub mod s6;
pub mod scan_order;
pub mod sparsify;
pub mod stca;
pub mod synth;

pub use error::{Error, Result};
pub use grid::Grid;
