pub mod admission;
pub mod audio_io;
pub mod config;
pub mod corpus;
pub mod energysim;
pub mod error;
pub mod features;
pub mod models;
pub mod pipelines;

pub use error::{Error, Result};
