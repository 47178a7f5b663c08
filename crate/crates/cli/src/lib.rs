//! Configuration, run persistence, comparison and plotting for the
//! probabilistic PDE simulator.

pub mod commands;
pub mod config;
pub mod error;
pub mod scenario;
pub mod store;
pub mod svg;
