//! File formats, benchmarks, experiment drivers and the command line built on
//! [`ntk_attn_core`].

pub mod bench;
pub mod cli;
mod error;
pub mod experiments;
pub mod manifest;
pub mod mtxt;

pub use error::IoError;
