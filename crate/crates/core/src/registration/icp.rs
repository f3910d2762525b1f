//! Point-to-point ICP with the scale held at its initial value, plus a
//! similarity variant that also re-estimates scale.

use rayon::prelude::*;

use super::procrustes::{fit_rigid, fit_similarity};
use super::RegistrationResult;
use crate::error::{Error, Result};
use crate::geom::{bbox_diagonal, compose, PointCloud, RigidScaleTransform, Vec3};
use crate::spatial::NeighborIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Pairs farther apart than this (meters) are discarded.
    pub max_correspondence_distance: f64,
    /// Stop once `|rmse_prev - rmse| / rmse_prev` falls below this.
    pub convergence_rel_change: f64,
}

impl IcpConfig {
    pub fn new(max_correspondence_distance: f64) -> Self {
        Self {
            max_iterations: 50,
            max_correspondence_distance,
            convergence_rel_change: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("ICP needs at least one iteration".into()));
        }
        let d = self.max_correspondence_distance;
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "max correspondence distance must be positive, got {d}"
            )));
        }
        if !(self.convergence_rel_change > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "convergence tolerance must be positive, got {}",
                self.convergence_rel_change
            )));
        }
        Ok(())
    }
}

/// Residuals of one ICP iteration on its (fixed) correspondence set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpStep {
    pub pairs: usize,
    /// RMSE of the pairs before the update.
    pub rmse_before: f64,
    /// RMSE of the same pairs after the update.
    pub rmse_after: f64,
}

/// Outcome of [`icp_refine_traced`]: the result plus one entry per iteration.
#[derive(Debug, Clone)]
pub struct IcpTrace {
    pub result: RegistrationResult,
    pub steps: Vec<IcpStep>,
}

/// Absolute RMSE below which the alignment is treated as exact, relative to
/// the target extent.
const EXACT_RMSE: f64 = 1e-14;

fn rms(sum_sq: f64, n: usize) -> f64 {
    (sum_sq / n as f64).sqrt()
}

/// Nearest target neighbour of every mapped source point within `max_dist`.
fn correspond(
    index: &NeighborIndex,
    mapped: &[Vec3],
    max_dist: f64,
) -> Vec<(usize, usize, f64)> {
    mapped
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| index.nearest_within(p, max_dist).map(|(j, d)| (i, j, d)))
        .collect()
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    if prev > 0.0 {
        (prev - cur).abs() / prev
    } else {
        0.0
    }
}

/// Refines `init` by alternating nearest-neighbour correspondence and a
/// rigid Procrustes update composed onto the current estimate. The scale of
/// `init` is never changed.
pub fn icp_refine(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidScaleTransform,
    cfg: &IcpConfig,
) -> Result<RegistrationResult> {
    icp_refine_traced(source, target, init, cfg).map(|t| t.result)
}

/// [`icp_refine`] that also reports the per-iteration residuals.
pub fn icp_refine_traced(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidScaleTransform,
    cfg: &IcpConfig,
) -> Result<IcpTrace> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let index = NeighborIndex::from_points(target.points())?;
    let exact = EXACT_RMSE * bbox_diagonal(target)?.max(f64::MIN_POSITIVE);
    let tpts = target.points();

    let mut current = *init;
    let mut steps: Vec<IcpStep> = Vec::new();
    let mut converged = false;
    let mut inlier_count = 0;
    let mut inlier_rmse = 0.0;

    for _ in 0..cfg.max_iterations {
        let mapped: Vec<Vec3> = source.points().iter().map(|p| current.apply_point(p)).collect();
        let pairs = correspond(&index, &mapped, cfg.max_correspondence_distance);
        if pairs.len() < 3 {
            converged = false;
            break;
        }
        let xs: Vec<Vec3> = pairs.iter().map(|&(i, _, _)| mapped[i]).collect();
        let ys: Vec<Vec3> = pairs.iter().map(|&(_, j, _)| tpts[j]).collect();
        let before = rms(pairs.iter().map(|&(_, _, d)| d * d).sum(), pairs.len());
        let (update, after) = match fit_rigid(&xs, &ys) {
            Ok(fit) => (fit.transform(), fit.rmse),
            Err(Error::DegenerateSample) => break,
            Err(e) => return Err(e),
        };
        // Procrustes is optimal on fixed pairs, so `after <= before` up to
        // rounding; keep the estimate whenever that holds.
        let after = after.min(before);
        current = compose(&update, &current);
        let prev_after = steps.last().map(|s: &IcpStep| s.rmse_after);
        steps.push(IcpStep {
            pairs: pairs.len(),
            rmse_before: before,
            rmse_after: after,
        });
        inlier_count = pairs.len();
        inlier_rmse = after;
        if after <= exact {
            converged = true;
            break;
        }
        if let Some(prev) = prev_after {
            if relative_change(prev, after) < cfg.convergence_rel_change {
                converged = true;
                break;
            }
        }
    }
    if steps.is_empty() {
        converged = false;
    }
    Ok(IcpTrace {
        result: RegistrationResult {
            transform: current,
            inlier_count,
            inlier_rmse,
            iterations_used: steps.len(),
            converged,
        },
        steps,
    })
}

/// Similarity ICP driven from the target side: each target point is paired
/// with its nearest mapped source point and `(s, R, t)` is re-solved in
/// closed form. Target-side pairing keeps the scale well-posed when the
/// target covers only part of the source.
pub fn icp_refine_similarity(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidScaleTransform,
    cfg: &IcpConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    // Nearest neighbours are invariant under a uniform similarity, so the
    // source is indexed once in its own frame.
    let index = NeighborIndex::from_points(source.points())?;
    let spts = source.points();
    let tpts = target.points();
    let exact = EXACT_RMSE * bbox_diagonal(target)?.max(f64::MIN_POSITIVE);

    let mut current = *init;
    let mut converged = false;
    let mut iterations = 0;
    let mut inlier_count = 0;
    let mut inlier_rmse = 0.0;
    let mut prev: Option<f64> = None;

    for _ in 0..cfg.max_iterations {
        let inv = current.inverse();
        let max_canonical = cfg.max_correspondence_distance / current.scale();
        let pulled: Vec<Vec3> = tpts.iter().map(|q| inv.apply_point(q)).collect();
        let pairs = correspond(&index, &pulled, max_canonical);
        if pairs.len() < 3 {
            break;
        }
        let xs: Vec<Vec3> = pairs.iter().map(|&(_, i, _)| spts[i]).collect();
        let ys: Vec<Vec3> = pairs.iter().map(|&(j, _, _)| tpts[j]).collect();
        let (next, err) = match fit_similarity(&xs, &ys) {
            Ok(v) => v,
            Err(Error::DegenerateSample) => break,
            Err(e) => return Err(e),
        };
        iterations += 1;
        current = next;
        inlier_count = pairs.len();
        inlier_rmse = err;
        if err <= exact || prev.is_some_and(|p| relative_change(p, err) < cfg.convergence_rel_change) {
            converged = true;
            break;
        }
        prev = Some(err);
    }
    Ok(RegistrationResult {
        transform: current,
        inlier_count,
        inlier_rmse,
        iterations_used: iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Transformable;
    use nalgebra::Rotation3;

    fn grid_cloud() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..12 {
            for j in 0..10 {
                let (x, y) = (i as f64 * 0.01, j as f64 * 0.012);
                pts.push(Vec3::new(x, y, 0.3 * x * x + 0.5 * y * y + 0.2 * x * y));
            }
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn fixed_point_converges_immediately() {
        let src = grid_cloud();
        let gt = RigidScaleTransform::new(
            1.3,
            *Rotation3::from_euler_angles(0.2, 0.3, -0.1).matrix(),
            Vec3::new(0.1, 0.0, 0.4),
        )
        .unwrap();
        let tgt = src.transformed(&gt);
        let res = icp_refine(&src, &tgt, &gt, &IcpConfig::new(0.05)).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations_used, 1);
        assert!(res.inlier_rmse < 1e-12);
        assert_eq!(res.transform.scale(), 1.3);
    }

    #[test]
    fn scale_is_preserved() {
        let src = grid_cloud();
        let init = RigidScaleTransform::from_scale(2.0).unwrap();
        let tgt = src.transformed(&RigidScaleTransform::from_translation(Vec3::new(0.001, 0.0, 0.0)));
        let res = icp_refine(&src, &tgt, &init, &IcpConfig::new(1.0)).unwrap();
        assert_eq!(res.transform.scale(), 2.0);
    }

    #[test]
    fn no_pairs_is_not_converged() {
        let src = grid_cloud();
        let far = src.transformed(&RigidScaleTransform::from_translation(Vec3::new(10.0, 0.0, 0.0)));
        let res = icp_refine(&src, &far, &RigidScaleTransform::identity(), &IcpConfig::new(0.01)).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations_used, 0);
    }

    #[test]
    fn per_step_rmse_never_increases() {
        let src = grid_cloud();
        let gt = RigidScaleTransform::new(
            1.0,
            *Rotation3::from_euler_angles(0.05, -0.04, 0.08).matrix(),
            Vec3::new(0.004, -0.003, 0.002),
        )
        .unwrap();
        let tgt = src.transformed(&gt);
        let trace =
            icp_refine_traced(&src, &tgt, &RigidScaleTransform::identity(), &IcpConfig::new(0.05)).unwrap();
        for s in &trace.steps {
            assert!(s.rmse_after <= s.rmse_before);
        }
    }

    fn ellipsoid_cloud() -> PointCloud {
        let n = 3000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                Vec3::new(0.05 * r * th.cos(), 0.03 * y, 0.02 * r * th.sin())
            })
            .collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn similarity_variant_recovers_scale() {
        let src = ellipsoid_cloud();
        let gt = RigidScaleTransform::new(
            1.1,
            *Rotation3::from_euler_angles(0.02, 0.01, -0.03).matrix(),
            Vec3::new(0.002, 0.001, 0.0),
        )
        .unwrap();
        let tgt = src.transformed(&gt);
        let res = icp_refine_similarity(&src, &tgt, &RigidScaleTransform::identity(), &IcpConfig::new(0.05))
            .unwrap();
        assert!(res.converged);
        assert!((res.transform.scale() - 1.1).abs() < 1e-6, "{}", res.transform.scale());
    }
}
