//! HTTP query service and command-line front end for the hyperlens engine.

pub mod app;
pub mod cli;
pub mod config;
pub mod error;
pub mod snapshot;
pub mod viewport;

pub use app::{router, AppState, Shared};
pub use config::EngineConfig;
