//! Mask-conditional contrast-GAN for object-level image manipulation.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod maskpipe;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
