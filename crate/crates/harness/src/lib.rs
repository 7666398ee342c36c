//! Configuration files, metrics streams and experiment recipes for the
//! `deeprat` command-line tool.

pub mod config;
pub mod metrics;
pub mod recipes;
pub mod summarize;
