//! Command-line front end and experiment harness.

pub mod arith;
pub mod config;
pub mod fig;
pub mod commands;
pub mod svg;
