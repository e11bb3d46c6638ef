pub mod config;
pub mod error;
pub mod export;
pub mod io;
pub mod manifest;
pub mod perturb;
pub mod pipeline;
pub mod records;
pub mod service;
pub mod synth;

pub use error::{Error, Result};
