//! Synthetic scenes, file formats and the benchmark harness around the
//! `groundmesh` library, plus the `groundmesh` command-line tool.

pub mod cli;
pub mod depth_io;
pub mod error;
pub mod pipeline;
pub mod ply;
pub mod scene;
pub mod suite;
pub mod transform_json;

pub use error::{BenchError, Result};
