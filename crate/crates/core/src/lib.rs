//! Cooperative sensor fusion for a connected-vehicle fleet with edge-side
//! measurement-noise estimation and a noise subscription service.

pub mod association;
pub mod bifnoe;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod protocol;
pub mod rng;
pub mod sensing;
pub mod tracking;
pub mod world;

pub use error::{Error, Result};
