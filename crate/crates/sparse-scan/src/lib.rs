//! File formats, checkpoints, oracle checks and the command-line front end
//! for [`sparse_scan_core`].

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod selftest;

pub use error::{Error, Result};
