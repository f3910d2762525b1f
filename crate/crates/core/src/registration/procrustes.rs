//! Closed-form alignment of matched point sets via the SVD of the centred
//! cross-covariance.

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::geom::{Mat3, RigidScaleTransform, Vec3};

/// Relative threshold on the second singular value of `H` below which a
/// sample is treated as collinear.
const RANK_TOL: f64 = 1e-10;

/// Every intermediate of the rigid Procrustes solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesFit {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub source_centroid: Vec3,
    pub target_centroid: Vec3,
    /// `H = sum_i x'_i y'_i^T` over the centred sets.
    pub cross_covariance: Mat3,
    pub svd_u: Mat3,
    /// Singular values of `H`, descending.
    pub svd_s: Vec3,
    pub svd_v: Mat3,
    /// Root mean square residual `|R x_i + t - y_i|` of the fit.
    pub rmse: f64,
}

impl ProcrustesFit {
    pub fn transform(&self) -> RigidScaleTransform {
        RigidScaleTransform::new(1.0, self.rotation, self.translation)
            .expect("SVD rotation is orthonormal with det +1")
    }
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

fn check_pairs(xs: &[Vec3], ys: &[Vec3]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source points vs {} target points",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::TooFewCorrespondences {
            needed: 3,
            got: xs.len(),
        });
    }
    Ok(())
}

struct Decomposition {
    x_bar: Vec3,
    y_bar: Vec3,
    h: Mat3,
    u: Mat3,
    s: Vec3,
    v: Mat3,
    /// `diag(1, 1, det(V U^T))`
    d: Mat3,
}

fn decompose(xs: &[Vec3], ys: &[Vec3]) -> Result<Decomposition> {
    check_pairs(xs, ys)?;
    let x_bar = centroid(xs);
    let y_bar = centroid(ys);
    let mut h = Mat3::zeros();
    for (x, y) in xs.iter().zip(ys) {
        h += (x - x_bar) * (y - y_bar).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("cross-covariance"));
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.ok_or(Error::DegenerateSample)?;
    let v = svd.v_t.ok_or(Error::DegenerateSample)?.transpose();
    let s = svd.singular_values;
    if !(s[0] > 0.0) || s[1] <= RANK_TOL * s[0] {
        return Err(Error::DegenerateSample);
    }
    let det = (v * u.transpose()).determinant();
    let d = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, det.signum()));
    Ok(Decomposition {
        x_bar,
        y_bar,
        h,
        u,
        s,
        v,
        d,
    })
}

fn rmse(xs: &[Vec3], ys: &[Vec3], map: impl Fn(&Vec3) -> Vec3) -> f64 {
    let sum: f64 = xs.iter().zip(ys).map(|(x, y)| (map(x) - y).norm_squared()).sum();
    (sum / xs.len() as f64).sqrt()
}

/// Rotation `R = V diag(1, 1, det(V U^T)) U^T` and translation
/// `t = y_bar - R x_bar` minimising `sum |R x_i + t - y_i|^2` over SO(3).
///
/// Fails on mismatched lengths, fewer than 3 pairs, or a rank < 2 sample.
pub fn fit_rigid(xs: &[Vec3], ys: &[Vec3]) -> Result<ProcrustesFit> {
    let dec = decompose(xs, ys)?;
    let rotation = dec.v * dec.d * dec.u.transpose();
    let translation = dec.y_bar - rotation * dec.x_bar;
    let rmse = rmse(xs, ys, |x| rotation * x + translation);
    Ok(ProcrustesFit {
        rotation,
        translation,
        source_centroid: dec.x_bar,
        target_centroid: dec.y_bar,
        cross_covariance: dec.h,
        svd_u: dec.u,
        svd_s: dec.s,
        svd_v: dec.v,
        rmse,
    })
}

/// Least-squares similarity `y ~ s R x + t` (rotation as in [`fit_rigid`],
/// scale from the same SVD). Returns the transform and its RMS residual.
pub fn fit_similarity(xs: &[Vec3], ys: &[Vec3]) -> Result<(RigidScaleTransform, f64)> {
    let dec = decompose(xs, ys)?;
    let rotation = dec.v * dec.d * dec.u.transpose();
    let spread: f64 = xs.iter().map(|x| (x - dec.x_bar).norm_squared()).sum();
    let trace = dec.s[0] * dec.d[(0, 0)] + dec.s[1] * dec.d[(1, 1)] + dec.s[2] * dec.d[(2, 2)];
    let scale = trace / spread;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateSample);
    }
    let translation = dec.y_bar - rotation * dec.x_bar * scale;
    let t = RigidScaleTransform::new(scale, rotation, translation)?;
    let err = rmse(xs, ys, |x| t.apply_point(x));
    Ok((t, err))
}
