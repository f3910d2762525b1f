//! Pose hypothesis verification for partial views.
//!
//! Candidates (the RANSAC estimate plus a fixed sweep of rotations) are each
//! polished with a short trimmed ICP driven from the target side and scored
//! by how well the visible part of the posed source and the target explain
//! each other. The best candidate seeds the final refinement.

use rayon::prelude::*;

use super::procrustes::fit_rigid;
use crate::error::{Error, Result};
use crate::geom::{compose, Mat3, PointCloud, RigidScaleTransform, Vec3};
use crate::spatial::NeighborIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    /// Rotations in the sweep; 0 verifies the RANSAC estimate alone.
    pub rotations: usize,
    /// Trimmed-ICP iterations per candidate.
    pub iterations: usize,
    /// Fraction of target pairs kept per trimmed-ICP iteration, in (0, 1].
    pub keep: f64,
    /// Target points farther than this (meters) from the posed source are
    /// left unpaired during trimmed ICP.
    pub max_pair_distance: f64,
    /// Distance (meters) under which a point counts as explained.
    pub threshold: f64,
    /// Minimum score for the selected candidate to count as converged.
    pub min_score: f64,
}

impl VerifyConfig {
    pub fn new(threshold: f64) -> Self {
        Self {
            rotations: 64,
            iterations: 25,
            keep: 0.9,
            max_pair_distance: 10.0 * threshold,
            threshold,
            min_score: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("verification needs at least one iteration".into()));
        }
        if !(self.keep > 0.0 && self.keep <= 1.0) {
            return Err(Error::InvalidArgument(format!("keep fraction must lie in (0, 1], got {}", self.keep)));
        }
        if !(self.max_pair_distance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "maximum pair distance must be positive, got {}",
                self.max_pair_distance
            )));
        }
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "verification threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Near-uniform rotations from a super-Fibonacci spiral on the unit
/// quaternions. Deterministic; the first is never the identity.
pub fn sweep_rotations(n: usize) -> Vec<Mat3> {
    const PHI: f64 = std::f64::consts::SQRT_2;
    const PSI: f64 = 1.533_751_168_755_204_3;
    let tau = std::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let s = i as f64 + 0.5;
            let r = (s / n as f64).sqrt();
            let big_r = (1.0 - s / n as f64).sqrt();
            let (a, b) = (tau * s / PHI, tau * s / PSI);
            let q = nalgebra::Quaternion::new(big_r * b.cos(), r * a.sin(), r * a.cos(), big_r * b.sin());
            *nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Rigid transform (scale 1) applied after the initial scale.
    pub transform: RigidScaleTransform,
    /// Harmonic mean of target coverage and visible-source support.
    pub score: f64,
}

/// Translation placing the camera-facing half of `R * source` on the target
/// centroid.
fn centroid_translation(source: &PointCloud, rotation: &Mat3, target_centroid: &Vec3, viewpoint: &Vec3) -> Vec3 {
    let view = target_centroid - viewpoint;
    let normals = source.normals();
    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for (i, p) in source.points().iter().enumerate() {
        let facing = normals.is_none_or(|ns| (rotation * ns[i]).dot(&view) < 0.0);
        if facing {
            sum += rotation * p;
            count += 1;
        }
    }
    if count == 0 {
        sum = source.points().iter().map(|p| rotation * p).sum();
        count = source.len();
    }
    target_centroid - sum / count as f64
}

/// Target-driven trimmed ICP: every target point is paired with its nearest
/// posed source point and the worst pairs are dropped before each update.
fn trimmed_icp(
    source_index: &NeighborIndex,
    source: &[Vec3],
    target: &[Vec3],
    init: &RigidScaleTransform,
    cfg: &VerifyConfig,
) -> RigidScaleTransform {
    let mut current = *init;
    for _ in 0..cfg.iterations {
        let inv = current.inverse();
        let reach = cfg.max_pair_distance / current.scale();
        let mut pairs: Vec<(f64, usize, usize)> = target
            .iter()
            .enumerate()
            .filter_map(|(j, q)| source_index.nearest_within(&inv.apply_point(q), reach).map(|(i, d)| (d, i, j)))
            .collect();
        let keep = ((pairs.len() as f64 * cfg.keep).ceil() as usize).max(3);
        if pairs.len() < 3 {
            break;
        }
        if keep < pairs.len() {
            pairs.select_nth_unstable_by(keep, |a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
            pairs.truncate(keep);
        }
        let xs: Vec<Vec3> = pairs.iter().map(|&(_, i, _)| current.apply_point(&source[i])).collect();
        let ys: Vec<Vec3> = pairs.iter().map(|&(_, _, j)| target[j]).collect();
        let Ok(fit) = fit_rigid(&xs, &ys) else {
            break;
        };
        let step = fit.transform();
        current = compose(&step, &current);
        if (step.rotation() - Mat3::identity()).norm() < 1e-9 && step.translation().norm() < 1e-9 {
            break;
        }
    }
    current
}

/// Agreement between the posed source and the target in `[0, 1]`.
///
/// Coverage is the fraction of target points within `threshold` of the posed
/// source; support is the fraction of camera-facing posed source points
/// within `threshold` of the target. Returns their harmonic mean.
pub fn view_score(
    source: &PointCloud,
    target: &PointCloud,
    target_index: &NeighborIndex,
    transform: &RigidScaleTransform,
    viewpoint: &Vec3,
    threshold: f64,
) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let posed: Vec<Vec3> = source.points().iter().map(|p| transform.apply_point(p)).collect();
    let posed_index = NeighborIndex::from_points(&posed)?;
    let covered = target
        .points()
        .iter()
        .filter(|q| posed_index.nearest_within(q, threshold).is_some())
        .count();
    let normals = source.normals();
    let (mut facing, mut supported) = (0usize, 0usize);
    for (i, p) in posed.iter().enumerate() {
        let visible = normals.is_none_or(|ns| transform.apply_direction(&ns[i]).dot(&(p - viewpoint)) < 0.0);
        if visible {
            facing += 1;
            if target_index.nearest_within(p, threshold).is_some() {
                supported += 1;
            }
        }
    }
    let coverage = covered as f64 / target.len() as f64;
    let support = if facing > 0 { supported as f64 / facing as f64 } else { 0.0 };
    Ok(if coverage + support > 0.0 {
        2.0 * coverage * support / (coverage + support)
    } else {
        0.0
    })
}

/// Polishes and scores each seed plus the rotation sweep; returns every
/// candidate in input order (seeds first) and the index of the best.
///
/// `source` must already carry the initial scale and have normals for the
/// visibility test to apply. Ties keep the earlier candidate.
pub fn verify_candidates(
    source: &PointCloud,
    target: &PointCloud,
    seeds: &[RigidScaleTransform],
    viewpoint: &Vec3,
    cfg: &VerifyConfig,
) -> Result<(Vec<Candidate>, usize)> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput);
    }
    let source_index = NeighborIndex::from_points(source.points())?;
    let target_index = NeighborIndex::from_points(target.points())?;
    let centroid: Vec3 = target.points().iter().sum::<Vec3>() / target.len() as f64;

    let mut inits: Vec<RigidScaleTransform> = seeds.to_vec();
    for r in sweep_rotations(cfg.rotations) {
        let t = centroid_translation(source, &r, &centroid, viewpoint);
        inits.push(RigidScaleTransform::new(1.0, r, t)?);
    }
    if inits.is_empty() {
        return Err(Error::InvalidArgument("no pose candidates to verify".into()));
    }
    let candidates: Vec<Candidate> = inits
        .par_iter()
        .map(|init| {
            let transform = trimmed_icp(&source_index, source.points(), target.points(), init, cfg);
            let score = view_score(source, target, &target_index, &transform, viewpoint, cfg.threshold)?;
            Ok(Candidate { transform, score })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.score > candidates[best].score {
            best = i;
        }
    }
    Ok((candidates, best))
}
