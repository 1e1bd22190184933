//! Operating-system side of pmopt: run configuration, dictionary files,
//! thread-parallel evaluation, report files and the command line.

pub mod cli;
pub mod config;
pub mod dictfile;
pub mod error;
pub mod parallel;
pub mod report;
pub mod run;

pub use error::{Result, RunError};
