//! Signed distance oracles, dense and narrow-band decoding, and isosurface
//! extraction.

mod decode;
mod grid;
mod marching_cubes;
mod oracle;
pub mod tables;

pub use decode::{dense_decode, hierarchical_decode, DecodeStats, HierarchicalConfig, MAX_RESOLUTION};
pub use grid::{LatticePoint, VoxelGrid};
pub use marching_cubes::marching_cubes;
pub use oracle::{make_box, make_sphere, make_torus, make_union, AnalyticSdf, FnOracle, SdfOracle, Shape};
