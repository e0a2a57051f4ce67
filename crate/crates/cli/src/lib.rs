//! Command-line pipelines and HTTP services over `simeval-core`.

pub mod cli;
pub mod commands;
pub mod fixture;
pub mod policies;
pub mod policy_server;
pub mod progress;
pub mod server;
