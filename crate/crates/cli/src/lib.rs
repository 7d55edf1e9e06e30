//! Library surface of the command-line tool, exposed so integration and
//! acceptance tests can drive commands directly.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod weights;
