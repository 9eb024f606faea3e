//! Support code for the `painterly` binary: configuration layering, the
//! renderer benchmark harness, and frame emission. Lives in a library so
//! integration tests can drive the same code paths the binary uses.

pub mod bench;
pub mod config;
pub mod frames;
