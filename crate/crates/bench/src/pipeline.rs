//! One scene end to end: registration, pose error, surface metrics and
//! per-stage timing.

use groundmesh::metrics::{compare_meshes, sample_surface, MetricsConfig, MetricsReport};
use groundmesh::registration::{register_object_with, PipelineConfig, RegistrationOutput, StageRecord};
use groundmesh::spatial::NeighborIndex;
use groundmesh::{RigidScaleTransform, Transformable, TriangleMesh, Vec3};
use rayon::prelude::*;

use crate::error::Result;
use crate::scene::Scene;

/// Wall time per pipeline stage, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    /// `(stage name, milliseconds, share of the total in percent)`.
    pub stages: Vec<(String, f64, f64)>,
}

/// Stages that make up the registration proper (features through refinement).
pub const REGISTRATION_STAGES: [&str; 6] = ["fpfh", "matching", "ransac", "verify", "icp", "scale_refine"];

impl StageTiming {
    /// Shares sum to 100 whenever the total is positive.
    pub fn from_records(records: &[StageRecord]) -> Self {
        Self::from_millis(
            records
                .iter()
                .map(|r| (r.stage.name().to_string(), r.elapsed.as_secs_f64() * 1e3))
                .collect(),
        )
    }

    pub fn from_millis(times: Vec<(String, f64)>) -> Self {
        let total: f64 = times.iter().map(|(_, ms)| ms).sum();
        let stages = times
            .into_iter()
            .map(|(name, ms)| {
                let share = if total > 0.0 { 100.0 * ms / total } else { 0.0 };
                (name, ms, share)
            })
            .collect();
        Self { stages }
    }

    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|(_, ms, _)| ms).sum()
    }

    pub fn stage_ms(&self, name: &str) -> f64 {
        self.stages.iter().filter(|(n, _, _)| n == name).map(|(_, ms, _)| ms).sum()
    }

    pub fn registration_ms(&self) -> f64 {
        REGISTRATION_STAGES.iter().map(|n| self.stage_ms(n)).sum()
    }

    pub fn share_sum(&self) -> f64 {
        self.stages.iter().map(|(_, _, s)| s).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub metrics: MetricsConfig,
    /// Model points used for the pose error.
    pub pose_error_samples: usize,
    /// Success threshold on the pose error, as a fraction of the posed
    /// object's diagonal.
    pub success_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            metrics: MetricsConfig::default(),
            pose_error_samples: 2000,
            success_fraction: 0.02,
        }
    }
}

/// Mean distance between model points under two poses.
pub fn add(points: &[Vec3], est: &RigidScaleTransform, gt: &RigidScaleTransform) -> f64 {
    let sum: f64 = points.iter().map(|p| (est.apply_point(p) - gt.apply_point(p)).norm()).sum();
    sum / points.len() as f64
}

/// Closest point to `p` on triangle `abc`.
fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Mean distance from each model point under `est` to the model surface
/// under `gt`; insensitive to symmetries of the model.
pub fn add_s(mesh: &TriangleMesh, points: &[Vec3], est: &RigidScaleTransform, gt: &RigidScaleTransform) -> Result<f64> {
    let posed = mesh.transformed(gt);
    let faces = posed.faces().len();
    let tris: Vec<[Vec3; 3]> = (0..faces).map(|f| posed.triangle(f)).collect();
    let centroids: Vec<Vec3> = tris.iter().map(|[a, b, c]| (a + b + c) / 3.0).collect();
    // Any point of a triangle lies within this distance of its centroid.
    let reach = tris
        .iter()
        .zip(&centroids)
        .map(|(t, m)| t.iter().map(|v| (v - m).norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let index = NeighborIndex::from_points(&centroids)?;
    let dists = points
        .par_iter()
        .map(|p| {
            let q = est.apply_point(p);
            let (_, d0) = index.nearest(&q);
            let near = index.radius_search(&q, d0 + 2.0 * reach)?;
            Ok(near
                .iter()
                .map(|&(f, _)| {
                    let [a, b, c] = &tris[f];
                    (closest_on_triangle(&q, a, b, c) - q).norm()
                })
                .fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(dists.iter().sum::<f64>() / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseError {
    /// ADD-S for rotation-ambiguous shapes, ADD otherwise; meters.
    pub distance: f64,
    pub symmetric: bool,
    /// `distance` over the posed object's diagonal.
    pub relative: f64,
    pub scale_error: f64,
    pub translation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub registration: RegistrationOutput,
    pub pose_error: PoseError,
    pub metrics: MetricsReport,
    pub timing: StageTiming,
    pub success: bool,
}

/// Registers the scene's mesh to its target cloud and scores the result
/// against the ground-truth pose.
pub fn run_pipeline(scene: &Scene, cfg: &RunConfig) -> Result<PipelineOutcome> {
    let reg = register_object_with(&scene.source_mesh, &scene.target_cloud, &cfg.pipeline)?;
    let est = reg.result.transform;
    let gt = scene.gt_transform;

    let model = sample_surface(&scene.source_mesh, cfg.pose_error_samples, 0)?;
    let symmetric = scene.spec.shape.rotation_ambiguous();
    let distance = if symmetric {
        add_s(&scene.source_mesh, model.points(), &est, &gt)?
    } else {
        add(model.points(), &est, &gt)
    };
    let diag = scene.spec.object_diagonal * gt.scale();
    let relative = distance / diag;
    let pose_error = PoseError {
        distance,
        symmetric,
        relative,
        scale_error: (est.scale() - gt.scale()).abs() / gt.scale(),
        translation_error: (est.translation() - gt.translation()).norm(),
    };

    let metrics = compare_meshes(
        &scene.source_mesh.transformed(&est),
        &scene.source_mesh.transformed(&gt),
        &cfg.metrics,
    )?;
    let timing = StageTiming::from_records(&reg.trace);
    let success = relative < cfg.success_fraction;
    Ok(PipelineOutcome {
        registration: reg,
        pose_error,
        metrics,
        timing,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    use groundmesh::registration::Stage;
    use nalgebra::Rotation3;

    #[test]
    fn shares_sum_to_hundred() {
        let records: Vec<StageRecord> = [3u64, 5, 11, 0, 7]
            .iter()
            .zip(Stage::ALL)
            .map(|(&ms, stage)| StageRecord {
                stage,
                elapsed: Duration::from_micros(ms * 1000 + 17),
                note: String::new(),
            })
            .collect();
        let t = StageTiming::from_records(&records);
        assert!((t.share_sum() - 100.0).abs() < 1e-9);
        assert_eq!(StageTiming::from_millis(vec![("a".into(), 0.0)]).share_sum(), 0.0);
    }

    #[test]
    fn add_examples() {
        let pts = vec![Vec3::x(), -Vec3::x(), Vec3::y(), -Vec3::y()];
        let gt = RigidScaleTransform::identity();
        let shift = RigidScaleTransform::from_translation(Vec3::new(0.0, 0.0, 0.5));
        assert!((add(&pts, &shift, &gt) - 0.5).abs() < 1e-15);
        // Square in the z = 0 plane: a quarter turn maps it onto itself.
        let square = TriangleMesh::new(pts.clone(), vec![[0, 2, 1], [0, 1, 3]]).unwrap();
        let turn = RigidScaleTransform::new(1.0, *Rotation3::from_euler_angles(0.0, 0.0, std::f64::consts::PI).matrix(), Vec3::zeros()).unwrap();
        assert!(add_s(&square, &pts, &turn, &gt).unwrap() < 1e-15);
        assert!((add_s(&square, &pts, &shift, &gt).unwrap() - 0.5).abs() < 1e-12);
        // Sliding within the plane keeps every point on the surface.
        let slide = RigidScaleTransform::from_translation(Vec3::new(0.1, -0.05, 0.0));
        let inner = vec![Vec3::new(0.1, 0.1, 0.0), Vec3::new(-0.2, 0.0, 0.0)];
        assert!(add_s(&square, &inner, &slide, &gt).unwrap() < 1e-15);
        assert!((add(&pts, &turn, &gt) - 2.0).abs() < 1e-12);
    }
}
