//! Command-line harness around `goat-core`: verification suites, toy
//! training, prior dumps and the memory benchmark.

pub mod bench;
pub mod commands;
pub mod config;
pub mod formats;
pub mod threads;
