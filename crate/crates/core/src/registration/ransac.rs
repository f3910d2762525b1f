//! Hypothesize-and-verify rigid alignment over putative correspondences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::procrustes::fit_rigid;
use super::RegistrationResult;
use crate::error::{Error, Result};
use crate::fpfh::CorrespondenceSet;
use crate::geom::{PointCloud, RigidScaleTransform, Vec3};

/// Correspondences drawn per hypothesis.
pub const RANSAC_SAMPLE_SIZE: usize = 3;

/// Redraws allowed per iteration when a sample is degenerate.
const DRAWS_PER_ITERATION: usize = 10;

/// Hypotheses evaluated per parallel batch before the sequential reduction.
const BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Residual (meters) at or below which a correspondence counts as inlier.
    pub inlier_threshold: f64,
    /// Stop once `1 - (1 - w^3)^n >= confidence`, `w` the best inlier ratio.
    pub confidence: f64,
    pub seed: u64,
}

impl RansacConfig {
    pub fn new(inlier_threshold: f64) -> Self {
        Self {
            max_iterations: 10_000,
            inlier_threshold,
            confidence: 0.999,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("RANSAC needs at least one iteration".into()));
        }
        if !(self.inlier_threshold > 0.0) || !self.inlier_threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    transform: RigidScaleTransform,
    inliers: usize,
    rmse: f64,
}

/// Inlier count and RMS residual of the inliers under `t`.
fn score(t: &RigidScaleTransform, src: &[Vec3], dst: &[Vec3], threshold: f64) -> (usize, f64) {
    let thr2 = threshold * threshold;
    let mut count = 0usize;
    let mut sum = 0.0;
    for (p, q) in src.iter().zip(dst) {
        let r2 = (t.apply_point(p) - q).norm_squared();
        if r2 <= thr2 {
            count += 1;
            sum += r2;
        }
    }
    let rmse = if count > 0 { (sum / count as f64).sqrt() } else { f64::INFINITY };
    (count, rmse)
}

fn inlier_indices(t: &RigidScaleTransform, src: &[Vec3], dst: &[Vec3], threshold: f64) -> Vec<usize> {
    let thr2 = threshold * threshold;
    (0..src.len())
        .filter(|&i| (t.apply_point(&src[i]) - dst[i]).norm_squared() <= thr2)
        .collect()
}

/// Hypothesis for one iteration, drawn from its own RNG substream so that the
/// outcome does not depend on evaluation order.
fn hypothesis(iteration: usize, src: &[Vec3], dst: &[Vec3], cfg: &RansacConfig) -> Option<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(iteration as u64);
    let n = src.len();
    for _ in 0..DRAWS_PER_ITERATION {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let c = rng.random_range(0..n);
        if a == b || b == c || a == c {
            continue;
        }
        let xs = [src[a], src[b], src[c]];
        let ys = [dst[a], dst[b], dst[c]];
        let Ok(fit) = fit_rigid(&xs, &ys) else {
            continue;
        };
        let transform = fit.transform();
        let (inliers, rmse) = score(&transform, src, dst, cfg.inlier_threshold);
        return Some(Hypothesis {
            transform,
            inliers,
            rmse,
        });
    }
    None
}

fn better(candidate: &Hypothesis, best: &Option<Hypothesis>) -> bool {
    match best {
        None => true,
        Some(b) => {
            candidate.inliers > b.inliers || (candidate.inliers == b.inliers && candidate.rmse < b.rmse)
        }
    }
}

/// Iterations needed for `confidence` given inlier ratio `w`.
fn required_iterations(w: f64, confidence: f64) -> f64 {
    let p = w.powi(RANSAC_SAMPLE_SIZE as i32);
    if p >= 1.0 {
        return 0.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 - confidence).ln() / (1.0 - p).ln()
}

/// Best rigid transform (scale 1) mapping correspondence sources onto targets.
///
/// `source` is expected to already carry the initial scale. The winning
/// hypothesis is refit on all of its inliers.
pub fn ransac_register(
    correspondences: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
    cfg: &RansacConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let n = correspondences.len();
    if n < RANSAC_SAMPLE_SIZE {
        return Err(Error::TooFewCorrespondences {
            needed: RANSAC_SAMPLE_SIZE,
            got: n,
        });
    }
    let mut src = Vec::with_capacity(n);
    let mut dst = Vec::with_capacity(n);
    for &(i, j) in &correspondences.pairs {
        if i >= source.len() || j >= target.len() {
            return Err(Error::InvalidArgument(format!(
                "correspondence ({i}, {j}) out of bounds"
            )));
        }
        src.push(source.points()[i]);
        dst.push(target.points()[j]);
    }

    let mut best: Option<Hypothesis> = None;
    let mut iterations_used = 0;
    let mut done = false;
    let mut start = 0;
    while start < cfg.max_iterations && !done {
        let end = (start + BATCH).min(cfg.max_iterations);
        let batch: Vec<Option<Hypothesis>> = (start..end)
            .into_par_iter()
            .map(|it| hypothesis(it, &src, &dst, cfg))
            .collect();
        for (offset, h) in batch.into_iter().enumerate() {
            iterations_used = start + offset + 1;
            if let Some(h) = h {
                if better(&h, &best) {
                    best = Some(h);
                }
            }
            if let Some(b) = &best {
                let w = b.inliers as f64 / n as f64;
                if b.inliers >= RANSAC_SAMPLE_SIZE
                    && iterations_used as f64 >= required_iterations(w, cfg.confidence)
                {
                    done = true;
                    break;
                }
            }
        }
        start = end;
    }

    let Some(best) = best.filter(|b| b.inliers >= RANSAC_SAMPLE_SIZE) else {
        return Ok(RegistrationResult {
            transform: RigidScaleTransform::identity(),
            inlier_count: 0,
            inlier_rmse: 0.0,
            iterations_used,
            converged: false,
        });
    };

    let inliers = inlier_indices(&best.transform, &src, &dst, cfg.inlier_threshold);
    let xs: Vec<Vec3> = inliers.iter().map(|&i| src[i]).collect();
    let ys: Vec<Vec3> = inliers.iter().map(|&i| dst[i]).collect();
    let mut chosen = best;
    if let Ok(fit) = fit_rigid(&xs, &ys) {
        let t = fit.transform();
        let (count, rmse) = score(&t, &src, &dst, cfg.inlier_threshold);
        if count >= chosen.inliers {
            chosen = Hypothesis {
                transform: t,
                inliers: count,
                rmse,
            };
        }
    }
    Ok(RegistrationResult {
        transform: chosen.transform,
        inlier_count: chosen.inliers,
        inlier_rmse: chosen.rmse,
        iterations_used,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(points).unwrap()
    }

    #[test]
    fn rejects_tiny_correspondence_sets() {
        let c = CorrespondenceSet {
            pairs: vec![(0, 0), (1, 1)],
            feature_distances: vec![0.0, 0.0],
        };
        let pc = cloud(vec![Vec3::zeros(), Vec3::x()]);
        assert!(matches!(
            ransac_register(&c, &pc, &pc, &RansacConfig::new(0.1)),
            Err(Error::TooFewCorrespondences { .. })
        ));
    }

    #[test]
    fn noiseless_recovers_transform() {
        let r = *Rotation3::from_euler_angles(0.4, 0.1, -0.9).matrix();
        let t = RigidScaleTransform::new(1.0, r, Vec3::new(0.1, -0.2, 0.5)).unwrap();
        let src: Vec<Vec3> = (0..40)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 0.37).sin(), (f * 0.71).cos(), (f * 0.13).sin() * 0.5)
            })
            .collect();
        let dst: Vec<Vec3> = src.iter().map(|p| t.apply_point(p)).collect();
        let corr = CorrespondenceSet {
            pairs: (0..40).map(|i| (i, i)).collect(),
            feature_distances: vec![0.0; 40],
        };
        let res = ransac_register(&corr, &cloud(src), &cloud(dst), &RansacConfig::new(1e-6)).unwrap();
        assert!(res.converged);
        assert_eq!(res.inlier_count, 40);
        assert!((res.transform.rotation() - r).abs().max() < 1e-9);
        assert!((res.transform.translation() - t.translation()).norm() < 1e-9);
    }

    #[test]
    fn required_iterations_bounds() {
        assert_eq!(required_iterations(1.0, 0.999), 0.0);
        assert!(required_iterations(0.0, 0.999).is_infinite());
        let n = required_iterations(0.5, 0.99);
        assert!((n - (0.01f64.ln() / 0.875f64.ln())).abs() < 1e-12);
    }
}
