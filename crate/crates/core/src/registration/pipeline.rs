//! End-to-end registration of a canonical mesh against a sensor cloud.

use std::fmt;
use std::time::{Duration, Instant};

use super::icp::{icp_refine, icp_refine_similarity, IcpConfig};
use super::ransac::{ransac_register, RansacConfig};
use super::verify::{verify_candidates, VerifyConfig};
use super::{init_scale, init_scale_diameter, RegistrationResult};
use crate::error::Error;
use crate::fpfh::{compute_fpfh, default_feature_radius, mutual_match};
use crate::geom::{compose, voxel_downsample, PointCloud, RigidScaleTransform, Transformable, TriangleMesh, Vec3};
use crate::metrics::sample_surface;
use crate::normals::{estimate_normals, DEFAULT_NORMAL_K};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Sample,
    Normals,
    InitScale,
    Downsample,
    Features,
    Matching,
    Ransac,
    Verify,
    Icp,
    ScaleRefine,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Sample,
        Stage::Normals,
        Stage::InitScale,
        Stage::Downsample,
        Stage::Features,
        Stage::Matching,
        Stage::Ransac,
        Stage::Verify,
        Stage::Icp,
        Stage::ScaleRefine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Normals => "normals",
            Stage::InitScale => "init_scale",
            Stage::Downsample => "downsample",
            Stage::Features => "fpfh",
            Stage::Matching => "matching",
            Stage::Ransac => "ransac",
            Stage::Verify => "verify",
            Stage::Icp => "icp",
            Stage::ScaleRefine => "scale_refine",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub elapsed: Duration,
    pub note: String,
}

/// A stage failure together with the records of every stage that ran.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("registration failed at stage {stage}: {error}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub error: Error,
    pub trace: Vec<StageRecord>,
}

/// How the initial source-to-target scale is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleInit {
    /// Ratio of axis-aligned bounding-box diagonals.
    BoxDiagonal,
    /// Ratio of diameters measured on voxel-downsampled copies.
    Diameter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Points sampled from the source mesh surface.
    pub source_samples: usize,
    pub sample_seed: u64,
    /// k for target normal estimation.
    pub normal_k: usize,
    /// Camera centre used to orient target normals.
    pub viewpoint: Vec3,
    pub scale_init: ScaleInit,
    /// Downsampling voxel edge, meters.
    pub voxel_size: f64,
    /// FPFH radius; `None` uses the spacing-based default per cloud.
    pub feature_radius: Option<f64>,
    pub ransac: RansacConfig,
    /// Candidate verification after RANSAC; `None` trusts RANSAC alone.
    pub verify: Option<VerifyConfig>,
    pub icp: IcpConfig,
    /// Re-estimate scale after ICP with target-driven similarity ICP.
    pub refine_scale: bool,
}

impl PipelineConfig {
    /// Defaults tied to a downsampling voxel of `voxel_size` meters.
    pub fn for_voxel(voxel_size: f64) -> Self {
        Self {
            source_samples: 20_000,
            sample_seed: 0,
            normal_k: DEFAULT_NORMAL_K,
            viewpoint: Vec3::zeros(),
            scale_init: ScaleInit::Diameter,
            voxel_size,
            feature_radius: Some(5.0 * voxel_size),
            ransac: RansacConfig::new(1.5 * voxel_size),
            verify: Some(VerifyConfig::new(1.5 * voxel_size)),
            icp: IcpConfig::new(3.0 * voxel_size),
            refine_scale: true,
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_voxel(0.005)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOutput {
    /// Final canonical-to-sensor transform and the last refinement's fit.
    pub result: RegistrationResult,
    pub initial_scale: f64,
    pub correspondences: usize,
    /// `None` when RANSAC had too few correspondences and verification
    /// carried on without it.
    pub ransac: Option<RegistrationResult>,
    /// Score of the candidate chosen by verification.
    pub verify_score: Option<f64>,
    pub icp: RegistrationResult,
    pub trace: Vec<StageRecord>,
}

struct Tracer {
    trace: Vec<StageRecord>,
}

impl Tracer {
    fn run<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce() -> Result<T, Error>,
        note: impl FnOnce(&T) -> String,
    ) -> Result<T, PipelineError> {
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        match out {
            Ok(v) => {
                self.trace.push(StageRecord {
                    stage,
                    elapsed,
                    note: note(&v),
                });
                Ok(v)
            }
            Err(error) => {
                self.trace.push(StageRecord {
                    stage,
                    elapsed,
                    note: format!("failed: {error}"),
                });
                Err(PipelineError {
                    stage,
                    error,
                    trace: std::mem::take(&mut self.trace),
                })
            }
        }
    }
}

/// [`register_object_with`] using the default pipeline parameters and the
/// given RANSAC and ICP settings.
pub fn register_object(
    source_mesh: &TriangleMesh,
    target: &PointCloud,
    ransac_cfg: &RansacConfig,
    icp_cfg: &IcpConfig,
) -> Result<RegistrationOutput, PipelineError> {
    let cfg = PipelineConfig {
        ransac: ransac_cfg.clone(),
        icp: icp_cfg.clone(),
        ..PipelineConfig::default()
    };
    register_object_with(source_mesh, target, &cfg)
}

/// Estimates the transform taking `source_mesh` (canonical frame) onto
/// `target` (sensor frame).
///
/// The source gets an initial scale from `scale_init`. Both clouds are
/// downsampled and described with FPFH, and mutual matches seed RANSAC.
/// With `verify` set, the RANSAC pose competes against a sweep of rotations
/// and the candidate that best explains the visible target wins; a RANSAC
/// failure is then not fatal. ICP refines on the full-resolution clouds with
/// the scale fixed. When `refine_scale` is set, a final similarity ICP
/// re-estimates the scale.
pub fn register_object_with(
    source_mesh: &TriangleMesh,
    target: &PointCloud,
    cfg: &PipelineConfig,
) -> Result<RegistrationOutput, PipelineError> {
    let mut t = Tracer { trace: Vec::new() };

    let source = t.run(
        Stage::Sample,
        || {
            if target.is_empty() {
                return Err(Error::EmptyInput);
            }
            sample_surface(source_mesh, cfg.source_samples, cfg.sample_seed)
        },
        |c| format!("{} source points", c.len()),
    )?;
    let target_n = t.run(
        Stage::Normals,
        || estimate_normals(target, cfg.normal_k, &cfg.viewpoint).map(|e| e.cloud),
        |c| format!("{} target normals", c.len()),
    )?;
    let s0 = t.run(
        Stage::InitScale,
        || match cfg.scale_init {
            ScaleInit::BoxDiagonal => init_scale(&source, &target_n),
            ScaleInit::Diameter => init_scale_diameter(&source, &target_n, cfg.voxel_size),
        },
        |s| format!("s0 = {s:.6}"),
    )?;
    let scale0 = RigidScaleTransform::from_scale(s0).map_err(|error| PipelineError {
        stage: Stage::InitScale,
        error,
        trace: t.trace.clone(),
    })?;
    let source_scaled = source.transformed(&scale0);

    let (src_down, tgt_down) = t.run(
        Stage::Downsample,
        || {
            Ok((
                voxel_downsample(&source_scaled, cfg.voxel_size)?,
                voxel_downsample(&target_n, cfg.voxel_size)?,
            ))
        },
        |(a, b)| format!("{} / {} points", a.len(), b.len()),
    )?;
    let (src_feat, tgt_feat) = t.run(
        Stage::Features,
        || {
            let rs = cfg.feature_radius.map_or_else(|| default_feature_radius(&src_down), Ok)?;
            let rt = cfg.feature_radius.map_or_else(|| default_feature_radius(&tgt_down), Ok)?;
            Ok((compute_fpfh(&src_down, rs)?, compute_fpfh(&tgt_down, rt)?))
        },
        |(a, b)| format!("{} / {} descriptors", a.len(), b.len()),
    )?;
    let corr = t.run(
        Stage::Matching,
        || Ok(mutual_match(&src_feat, &tgt_feat)),
        |c| format!("{} mutual matches", c.len()),
    )?;
    let ransac = t.run(
        Stage::Ransac,
        || match ransac_register(&corr, &src_down, &tgt_down, &cfg.ransac) {
            Err(Error::TooFewCorrespondences { .. }) if cfg.verify.is_some() => Ok(None),
            other => other.map(Some),
        },
        |r| match r {
            Some(r) => format!("{} inliers after {} iterations", r.inlier_count, r.iterations_used),
            None => "too few correspondences, deferring to verification".to_string(),
        },
    )?;
    let (rigid, verify_score) = match (&cfg.verify, ransac) {
        (Some(vcfg), _) => {
            let seeds: Vec<RigidScaleTransform> = ransac.iter().map(|r| r.transform).collect();
            let (cands, best) = t.run(
                Stage::Verify,
                || verify_candidates(&src_down, &tgt_down, &seeds, &cfg.viewpoint, vcfg),
                |(c, b)| format!("candidate {b} of {} scores {:.3}", c.len(), c[*b].score),
            )?;
            (cands[best].transform, Some(cands[best].score))
        }
        (None, Some(r)) => (r.transform, None),
        (None, None) => unreachable!("RANSAC errors propagate without verification"),
    };
    let coarse = compose(&rigid, &scale0);
    let icp = t.run(
        Stage::Icp,
        || icp_refine(&source, &target_n, &coarse, &cfg.icp),
        |r| format!("rmse {:.3e} after {} iterations", r.inlier_rmse, r.iterations_used),
    )?;
    let mut result = icp;
    if cfg.refine_scale {
        let refined = t.run(
            Stage::ScaleRefine,
            || icp_refine_similarity(&source, &target_n, &icp.transform, &cfg.icp),
            |r| format!("scale {:.6}, rmse {:.3e}", r.transform.scale(), r.inlier_rmse),
        )?;
        if refined.inlier_count >= 3 {
            result = refined;
        }
    }
    let accepted = match (&cfg.verify, verify_score) {
        (Some(v), Some(score)) => score >= v.min_score,
        _ => ransac.is_some_and(|r| r.converged),
    };
    result.converged = accepted && result.inlier_count >= 3;
    Ok(RegistrationOutput {
        result,
        initial_scale: s0,
        correspondences: corr.len(),
        ransac,
        verify_score,
        icp,
        trace: t.trace,
    })
}
