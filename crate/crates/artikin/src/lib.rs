//! File formats, a rayon executor and the command-line driver for
//! [`artikin_core`].

pub mod cli;
pub mod config;
pub mod exec;
pub mod trackio;

pub use artikin_core;
