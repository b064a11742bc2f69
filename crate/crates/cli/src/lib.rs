//! Experiment drivers behind the `mcconv` command-line tool.

pub mod bench;
pub mod cli;
pub mod commands;
pub mod svg;
pub mod teaser;
