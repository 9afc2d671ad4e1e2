//! File formats, pool persistence, reports and the `evopath` command line
//! for [`evopath_core`].

pub mod cli;
pub mod config;
pub mod data;
pub mod dot;
pub mod exec;
pub mod persist;
pub mod report;
