//! Surface sampling, Chamfer distance and F-score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{PointCloud, TriangleMesh};
use crate::spatial::NeighborIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// F-score distance threshold in meters.
    pub fscore_threshold: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            fscore_threshold: 0.02,
            sample_count: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub chamfer_mm: f64,
    pub fscore_pct: f64,
    pub precision_pct: f64,
    pub recall_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// `n` area-uniform samples on the mesh surface with face normals.
///
/// Faces are drawn with probability proportional to area and points placed
/// with uniform barycentric coordinates. Deterministic per `seed`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let faces = mesh.faces().len();
    let mut cumulative = Vec::with_capacity(faces);
    let mut total = 0.0;
    for f in 0..faces {
        total += 0.5 * mesh.face_cross(f).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::ZeroArea);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random::<f64>() * total;
        // First face whose cumulative area exceeds x; never a zero-area face.
        let f = cumulative.partition_point(|&c| c <= x).min(faces - 1);
        let [a, b, c] = mesh.triangle(f);
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
        normals.push(mesh.face_cross(f).normalize());
    }
    PointCloud::with_normals(points, normals)
}

/// Distance from each point of `from` to its nearest point of `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Result<Vec<f64>> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyInput);
    }
    let index = NeighborIndex::from_points(to.points())?;
    Ok(from.points().par_iter().map(|p| index.nearest(p).1).collect())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `0.5 * (mean_a min_b |p - q| + mean_b min_a |p - q|)`, unsquared, meters.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let ab = mean(&nearest_distances(a, b)?);
    let ba = mean(&nearest_distances(b, a)?);
    // Summed in a fixed order so that chamfer(a, b) == chamfer(b, a) exactly.
    let (lo, hi) = if ab <= ba { (ab, ba) } else { (ba, ab) };
    Ok(0.5 * (lo + hi))
}

fn percent_within(dists: &[f64], tau: f64) -> f64 {
    let hits = dists.iter().filter(|&&d| d <= tau).count();
    100.0 * hits as f64 / dists.len() as f64
}

/// Precision, recall and their harmonic mean at threshold `tau`, in percent.
pub fn fscore(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<FScore> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "F-score threshold must be positive, got {tau}"
        )));
    }
    let precision = percent_within(&nearest_distances(pred, gt)?, tau);
    let recall = percent_within(&nearest_distances(gt, pred)?, tau);
    let fscore = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore {
        precision,
        recall,
        fscore,
    })
}

/// Chamfer (mm) and F-score between two already-sampled clouds.
pub fn compare_clouds(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<MetricsReport> {
    let f = fscore(pred, gt, tau)?;
    Ok(MetricsReport {
        chamfer_mm: 1000.0 * chamfer(pred, gt)?,
        fscore_pct: f.fscore,
        precision_pct: f.precision,
        recall_pct: f.recall,
    })
}

/// Samples both meshes (`cfg.sample_count` points each, seeds `cfg.seed` and
/// `cfg.seed + 1`) and compares the samples.
pub fn compare_meshes(pred: &TriangleMesh, gt: &TriangleMesh, cfg: &MetricsConfig) -> Result<MetricsReport> {
    if cfg.sample_count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let a = sample_surface(pred, cfg.sample_count, cfg.seed)?;
    let b = sample_surface(gt, cfg.sample_count, cfg.seed.wrapping_add(1))?;
    compare_clouds(&a, &b, cfg.fscore_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn single_triangle_samples_inside() {
        let mesh = TriangleMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        let s = sample_surface(&mesh, 2000, 7).unwrap();
        for p in s.points() {
            assert!(p.x >= -1e-12 && p.y >= -1e-12 && p.x + p.y <= 1.0 + 1e-12 && p.z == 0.0);
        }
        assert!(s.normals().unwrap().iter().all(|n| *n == Vec3::z()));
    }

    #[test]
    fn zero_area_is_an_error() {
        let mesh = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(sample_surface(&mesh, 10, 0).unwrap_err(), Error::ZeroArea);
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &PointCloud::new(vec![]).unwrap()).unwrap_err(), Error::EmptyInput);
    }

    #[test]
    fn fscore_examples() {
        let gt = cloud(&[[0.0, 0.0, 0.0]]);
        let pred = cloud(&[[0.0, 0.0, 0.0], [0.06, 0.0, 0.0]]);
        let f = fscore(&pred, &gt, 0.02).unwrap();
        assert_eq!((f.precision, f.recall), (50.0, 100.0));
        assert!((f.fscore - 200.0 / 3.0).abs() < 1e-12);
        let same = fscore(&gt, &gt, 0.02).unwrap();
        assert_eq!((same.precision, same.recall, same.fscore), (100.0, 100.0, 100.0));
        let far = cloud(&[[1.0, 0.0, 0.0]]);
        let none = fscore(&far, &gt, 0.02).unwrap();
        assert_eq!((none.precision, none.recall, none.fscore), (0.0, 0.0, 0.0));
    }
}
