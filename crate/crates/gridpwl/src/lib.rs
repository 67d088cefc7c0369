//! Case files, dataset and model formats, the LP text format, evaluation
//! statistics, the OTS comparison driver and the command-line interface.

pub mod case;
pub mod cli;
pub mod compare;
pub mod formats;
pub mod lpfile;
pub mod stats;

pub use gridpwl_core as core;
