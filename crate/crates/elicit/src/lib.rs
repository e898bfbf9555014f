//! File formats, persistence, the HTTP service and the command line.

pub mod bundle;
pub mod export;
pub mod inputs;
pub mod report;
pub mod store;
pub mod tokens;
pub mod ops;
pub mod service;
pub mod cli;
