//! Mesh-to-scan registration: bounding-box scale initialisation, RANSAC over
//! FPFH correspondences and ICP refinement.

mod icp;
mod pipeline;
mod procrustes;
mod ransac;
mod verify;

pub use icp::{icp_refine, icp_refine_similarity, icp_refine_traced, IcpConfig, IcpStep, IcpTrace};
pub use pipeline::{
    register_object, register_object_with, PipelineConfig, PipelineError, RegistrationOutput, ScaleInit,
    Stage, StageRecord,
};
pub use procrustes::{fit_rigid, fit_similarity, ProcrustesFit};
pub use ransac::{ransac_register, RansacConfig, RANSAC_SAMPLE_SIZE};
pub use verify::{sweep_rotations, verify_candidates, view_score, Candidate, VerifyConfig};

use crate::error::{Error, Result};
use rayon::prelude::*;

use crate::geom::{bbox_diagonal, voxel_downsample, PointCloud, RigidScaleTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    pub transform: RigidScaleTransform,
    pub inlier_count: usize,
    /// RMS residual over the inliers, meters.
    pub inlier_rmse: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// `bbox_diagonal(target) / bbox_diagonal(source)`.
pub fn init_scale(source: &PointCloud, target: &PointCloud) -> Result<f64> {
    let ds = bbox_diagonal(source)?;
    let dt = bbox_diagonal(target)?;
    if !(ds > 0.0) {
        return Err(Error::DegenerateSource);
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("target bounding box has zero diagonal".into()));
    }
    Ok(dt / ds)
}

/// Largest pairwise distance, by exhaustive search.
pub fn diameter(points: &[Vec3]) -> f64 {
    // Max is order-independent, so the parallel reduction is deterministic.
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = &points[i];
            points[i + 1..].iter().map(|q| (p - q).norm()).fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Ratio of the target's diameter to the source's, each measured on a copy
/// voxel-downsampled with edge `voxel` (source in its own units).
///
/// Unlike the bounding-box diagonal, the diameter does not depend on the
/// object's orientation, and a half view of a convex object usually keeps
/// one of its longest chords.
pub fn init_scale_diameter(source: &PointCloud, target: &PointCloud, voxel: f64) -> Result<f64> {
    let ds = diameter(voxel_downsample(source, voxel)?.points());
    let dt = diameter(voxel_downsample(target, voxel)?.points());
    if !(ds > 0.0) {
        return Err(Error::DegenerateSource);
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("target has zero diameter".into()));
    }
    Ok(dt / ds)
}
