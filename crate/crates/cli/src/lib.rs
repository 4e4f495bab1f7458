//! Library side of the `tkz` command-line tool.

pub mod config;
pub mod output;
pub mod pipeline;
