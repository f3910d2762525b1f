//! Covariance (PCA) normal estimation over k-nearest neighbourhoods.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Mat3, PointCloud, Vec3};
use crate::spatial::NeighborIndex;

pub const DEFAULT_NORMAL_K: usize = 30;

/// Estimated normals plus a per-point flag for rank-deficient neighbourhoods.
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    pub cloud: PointCloud,
    pub low_confidence: Vec<bool>,
}

/// Unit normal per point: the eigenvector of the smallest eigenvalue of the
/// k-NN covariance, flipped so that `n . (viewpoint - p) >= 0`.
///
/// Neighbourhoods whose covariance has rank < 2 still get a unit vector but are
/// flagged low-confidence.
pub fn estimate_normals(cloud: &PointCloud, k: usize, viewpoint: &Vec3) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    if cloud.len() < k {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs at least k = {k} points, cloud has {}",
            cloud.len()
        )));
    }
    let index = NeighborIndex::from_points(cloud.points())?;
    let points = cloud.points();
    let estimates: Vec<(Vec3, bool)> = points
        .par_iter()
        .map(|p| {
            let nbrs = index.knn(p, k).expect("k checked above");
            let (normal, low) = pca_normal(nbrs.iter().map(|&(i, _)| &points[i]));
            let normal = if normal.dot(&(viewpoint - p)) < 0.0 {
                -normal
            } else {
                normal
            };
            (normal, low)
        })
        .collect();
    let (normals, low_confidence): (Vec<Vec3>, Vec<bool>) = estimates.into_iter().unzip();
    Ok(NormalEstimate {
        cloud: PointCloud::with_normals(points.to_vec(), normals)?,
        low_confidence,
    })
}

/// Smallest-eigenvalue eigenvector of the neighbourhood covariance and whether
/// the covariance is rank-deficient (rank < 2).
fn pca_normal<'a>(nbrs: impl Iterator<Item = &'a Vec3> + Clone) -> (Vec3, bool) {
    let mut count = 0usize;
    let mut mean = Vec3::zeros();
    for p in nbrs.clone() {
        mean += p;
        count += 1;
    }
    mean /= count as f64;
    let mut cov = Mat3::zeros();
    for p in nbrs {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= count as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]].max(0.0);
    let middle = eig.eigenvalues[order[1]].max(0.0);
    let low = largest <= f64::MIN_POSITIVE || middle <= 1e-12 * largest;
    let v = eig.eigenvectors.column(order[0]).into_owned();
    let len = v.norm();
    let n = if len > 0.0 && len.is_finite() { v / len } else { Vec3::z() };
    (n, low)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_below_three_is_rejected() {
        let cloud = PointCloud::new(vec![Vec3::zeros(); 5]).unwrap();
        assert!(estimate_normals(&cloud, 2, &Vec3::z()).is_err());
        assert!(estimate_normals(&cloud, 6, &Vec3::z()).is_err());
    }

    #[test]
    fn plane_normals_face_viewpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec3> = (0..400)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let est = estimate_normals(&PointCloud::new(pts).unwrap(), 10, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        for n in est.cloud.normals().unwrap() {
            assert!((n - Vec3::z()).norm() < 1e-6, "{n:?}");
        }
        assert!(est.low_confidence.iter().all(|&l| !l));
    }

    #[test]
    fn sphere_normals_are_radial() {
        // Fibonacci sphere: dense, near-uniform.
        let n = 4000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                Vec3::new(r * th.cos(), y, r * th.sin())
            })
            .collect();
        let view = Vec3::new(0.0, 0.0, 10.0);
        let est = estimate_normals(&PointCloud::new(pts.clone()).unwrap(), 30, &view).unwrap();
        let cos5 = 5f64.to_radians().cos();
        for (p, nrm) in pts.iter().zip(est.cloud.normals().unwrap()) {
            assert!((nrm.norm() - 1.0).abs() < 1e-6);
            assert!(nrm.dot(&(view - p)) >= 0.0);
            // Visible and not at grazing incidence, where orientation is ambiguous.
            if p.dot(&(view - p).normalize()) > 0.1 {
                assert!(nrm.dot(&p.normalize()) > cos5, "p {p:?} n {nrm:?}");
            }
        }
    }

    #[test]
    fn collinear_points_are_low_confidence() {
        let pts: Vec<Vec3> = (0..8).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let est = estimate_normals(&PointCloud::new(pts).unwrap(), 8, &Vec3::z()).unwrap();
        assert!(est.low_confidence.iter().all(|&l| l));
        for n in est.cloud.normals().unwrap() {
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
    }
}
