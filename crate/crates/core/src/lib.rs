pub mod cli;
pub mod config;
pub mod cubical;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pimage;
pub mod pipeline;
pub mod synth;
pub mod volume;

pub use error::{Error, ErrorCode, Result};
