//! File formats, reports and the command-line front end built on
//! [`ambipose_core`].

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod run;

pub use error::{Error, Result};
