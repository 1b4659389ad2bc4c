pub mod cli;
pub mod config;
pub mod experiment;
pub mod server;
