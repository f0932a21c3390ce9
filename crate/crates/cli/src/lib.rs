//! Command-line pipeline and annotation service over the `newswatch`
//! library.

pub mod app;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod service;
