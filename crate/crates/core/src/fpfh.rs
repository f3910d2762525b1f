//! Fast Point Feature Histograms and mutual nearest-neighbour matching in
//! descriptor space.
//!
//! Each descriptor concatenates three 11-bin histograms of the Darboux-frame
//! angles (alpha, phi, theta) between a point and its radius neighbours.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{bbox_diagonal, PointCloud, Vec3};
use crate::spatial::NeighborIndex;

pub const BINS_PER_FEATURE: usize = 11;
pub const DESCRIPTOR_LEN: usize = 3 * BINS_PER_FEATURE;

/// Sum of each 11-bin sub-histogram of an SPFH with at least one neighbour.
pub const HISTOGRAM_MASS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpfhDescriptor(pub [f64; DESCRIPTOR_LEN]);

impl Default for FpfhDescriptor {
    fn default() -> Self {
        Self([0.0; DESCRIPTOR_LEN])
    }
}

impl FpfhDescriptor {
    pub fn bins(&self) -> &[f64; DESCRIPTOR_LEN] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0.0)
    }

    pub fn distance_squared(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Descriptors aligned with a cloud's point order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub descriptors: Vec<FpfhDescriptor>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// Matched `(source, target)` index pairs with their descriptor distances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub feature_distances: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `5 x` the mean point spacing, with spacing estimated as
/// `bbox_diagonal / cbrt(n)`.
pub fn default_feature_radius(cloud: &PointCloud) -> Result<f64> {
    let diag = bbox_diagonal(cloud)?;
    Ok(5.0 * diag / (cloud.len() as f64).cbrt())
}

/// Darboux-frame features `(alpha, phi, theta)` of the pair `(p, q)`, or `None`
/// when the points coincide.
pub fn pair_features(p: &Vec3, np: &Vec3, q: &Vec3, nq: &Vec3) -> Option<(f64, f64, f64)> {
    let d = q - p;
    let dist = d.norm();
    if dist <= 0.0 {
        return None;
    }
    let u = *np;
    let cross = d.cross(&u);
    let cross_len = cross.norm();
    let v = if cross_len > 1e-12 * dist {
        cross / cross_len
    } else {
        // q lies along the normal of p; any direction orthogonal to u will do.
        any_orthogonal(&u)
    };
    let w = u.cross(&v);
    let alpha = v.dot(nq);
    let phi = u.dot(&d) / dist;
    let theta = w.dot(nq).atan2(u.dot(nq));
    Some((alpha, phi, theta))
}

fn any_orthogonal(u: &Vec3) -> Vec3 {
    let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    u.cross(&helper).normalize()
}

/// Uniform bin over `[lo, hi]`; bins are right-open except the last.
fn bin_index(value: f64, lo: f64, hi: f64) -> usize {
    let t = (value - lo) / (hi - lo) * BINS_PER_FEATURE as f64;
    if t <= 0.0 {
        0
    } else {
        (t.floor() as usize).min(BINS_PER_FEATURE - 1)
    }
}

fn check_inputs(cloud: &PointCloud, radius: f64) -> Result<&[Vec3]> {
    let normals = cloud.normals().ok_or(Error::MissingNormals)?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "feature radius must be positive, got {radius}"
        )));
    }
    Ok(normals)
}

/// Radius neighbours of every point, excluding the point itself and any
/// coincident duplicates.
fn neighborhoods(cloud: &PointCloud, radius: f64) -> Result<Vec<Vec<(usize, f64)>>> {
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let index = NeighborIndex::from_points(cloud.points())?;
    Ok(cloud
        .points()
        .par_iter()
        .map(|p| {
            index
                .radius_search(p, radius)
                .expect("radius validated")
                .into_iter()
                .filter(|&(_, d)| d > 0.0)
                .collect()
        })
        .collect())
}

fn spfh_from_neighbors(
    points: &[Vec3],
    normals: &[Vec3],
    nbrs: &[Vec<(usize, f64)>],
) -> Vec<FpfhDescriptor> {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut hist = FpfhDescriptor::default();
            let feats: Vec<(f64, f64, f64)> = nbrs[i]
                .iter()
                .filter_map(|&(j, _)| pair_features(&points[i], &normals[i], &points[j], &normals[j]))
                .collect();
            if feats.is_empty() {
                return hist;
            }
            let incr = HISTOGRAM_MASS / feats.len() as f64;
            for (alpha, phi, theta) in feats {
                hist.0[bin_index(alpha, -1.0, 1.0)] += incr;
                hist.0[BINS_PER_FEATURE + bin_index(phi, -1.0, 1.0)] += incr;
                hist.0[2 * BINS_PER_FEATURE + bin_index(theta, -PI, PI)] += incr;
            }
            hist
        })
        .collect()
}

/// Simplified point feature histograms (the inner FPFH stage).
pub fn compute_spfh(cloud: &PointCloud, radius: f64) -> Result<FeatureSet> {
    let normals = check_inputs(cloud, radius)?;
    let nbrs = neighborhoods(cloud, radius)?;
    Ok(FeatureSet {
        descriptors: spfh_from_neighbors(cloud.points(), normals, &nbrs),
    })
}

/// `FPFH(p) = SPFH(p) + (1/k) * sum_i SPFH(q_i) / |p - q_i|` over the `k`
/// radius neighbours of `p`; all-zero for isolated points.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64) -> Result<FeatureSet> {
    let normals = check_inputs(cloud, radius)?;
    let nbrs = neighborhoods(cloud, radius)?;
    let spfh = spfh_from_neighbors(cloud.points(), normals, &nbrs);
    let descriptors = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nb = &nbrs[i];
            if nb.is_empty() {
                return FpfhDescriptor::default();
            }
            let mut acc = [0.0; DESCRIPTOR_LEN];
            for &(j, dist) in nb {
                let w = 1.0 / dist;
                for (a, s) in acc.iter_mut().zip(spfh[j].0.iter()) {
                    *a += w * s;
                }
            }
            let inv_k = 1.0 / nb.len() as f64;
            let mut out = spfh[i];
            for (o, a) in out.0.iter_mut().zip(acc.iter()) {
                *o += inv_k * a;
            }
            out
        })
        .collect();
    Ok(FeatureSet { descriptors })
}

/// Index of the descriptor in `pool` closest to `query`; ties go to the lower
/// index.
fn argmin(query: &FpfhDescriptor, pool: &[FpfhDescriptor]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, d) in pool.iter().enumerate() {
        let d2 = query.distance_squared(d);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

/// Pairs `(i, j)` where `j` is the nearest target descriptor of source `i` and
/// `i` is the nearest source descriptor of target `j`. Sorted by source index.
pub fn mutual_match(source: &FeatureSet, target: &FeatureSet) -> CorrespondenceSet {
    if source.is_empty() || target.is_empty() {
        return CorrespondenceSet::default();
    }
    let forward: Vec<(usize, f64)> = source
        .descriptors
        .par_iter()
        .map(|f| argmin(f, &target.descriptors))
        .collect();
    let backward: Vec<usize> = target
        .descriptors
        .par_iter()
        .map(|f| argmin(f, &source.descriptors).0)
        .collect();
    let mut out = CorrespondenceSet::default();
    for (i, &(j, d2)) in forward.iter().enumerate() {
        if backward[j] == i {
            out.pairs.push((i, j));
            out.feature_distances.push(d2.sqrt());
        }
    }
    out
}
