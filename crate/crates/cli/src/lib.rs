//! Command line and HTTP front end for the seedsplat pipeline.

pub mod api;
pub mod commands;
pub mod exit;
pub mod service;
pub mod store;
