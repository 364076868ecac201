//! Command-line front end and annotation service for `leakage_audit`.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod server;
