//! Data-efficient resist modeling on synthetic contact layers.

pub mod config;
pub mod d4;
pub mod dataset;
pub mod geometry;
pub mod nn;
pub mod optics;
pub mod rng;
pub mod transfer;
pub mod select;
pub mod metrics;
pub mod harness;
