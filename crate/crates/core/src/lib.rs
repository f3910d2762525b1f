//! Geometric core for grounding generated meshes in a depth scan: metric
//! depth alignment, FPFH/RANSAC/ICP registration, narrow-band SDF decoding
//! with marching cubes, and reconstruction metrics.

pub mod depth;
pub mod error;
pub mod fpfh;
pub mod geom;
pub mod metrics;
pub mod normals;
pub mod registration;
pub mod sdf;
pub mod spatial;

pub use error::{Error, Result};
pub use geom::{
    apply_transform, bbox_diagonal, compose, voxel_downsample, Aabb, Mat3, PointCloud, RigidScaleTransform,
    Transformable, TriangleMesh, Vec3,
};
