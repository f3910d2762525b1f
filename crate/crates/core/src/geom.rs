//! Core geometric types: point clouds, triangle meshes, bounding boxes and
//! similarity transforms.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on |n| for normals stored in a [`PointCloud`].
pub const UNIT_NORMAL_TOL: f64 = 1e-6;

/// Tolerance on orthonormality and determinant of a stored rotation.
pub const ROTATION_TOL: f64 = 1e-9;

fn all_finite(v: &Vec3) -> bool {
    v.x.is_finite() && v.y.is_finite() && v.z.is_finite()
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !all_finite(&min) || !all_finite(&max) {
            return Err(Error::NonFinite("bounding box"));
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::InvalidArgument(format!(
                "bounding box min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Cube `[-half, half]^3` centred at the origin.
    pub fn cube(half: f64) -> Self {
        Self {
            min: Vec3::repeat(-half),
            max: Vec3::repeat(half),
        }
    }

    pub fn from_points(points: &[Vec3]) -> Option<Self> {
        let first = points.first()?;
        let (min, max) = points.iter().fold((*first, *first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        });
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Box scaled by `factor` about its centre.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let h = self.extent() * (0.5 * factor);
        Self {
            min: c - h,
            max: c + h,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Ordered set of points in meters with optional unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if !points.iter().all(all_finite) {
            return Err(Error::NonFinite("point cloud positions"));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        if !points.iter().all(all_finite) {
            return Err(Error::NonFinite("point cloud positions"));
        }
        for (i, n) in normals.iter().enumerate() {
            if !all_finite(n) {
                return Err(Error::NonFinite("point cloud normals"));
            }
            if (n.norm() - 1.0).abs() > UNIT_NORMAL_TOL {
                return Err(Error::InvalidArgument(format!(
                    "normal {i} has length {}",
                    n.norm()
                )));
            }
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.points)
    }

    /// Drops the normals, keeping positions.
    pub fn without_normals(&self) -> Self {
        Self {
            points: self.points.clone(),
            normals: None,
        }
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Option<Vec<Vec3>>) {
        (self.points, self.normals)
    }

    /// Sub-cloud made of the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }
}

/// Indexed triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if !vertices.iter().all(all_finite) {
            return Err(Error::NonFinite("mesh vertices"));
        }
        let n = vertices.len();
        for (row, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= n) {
                return Err(Error::InvalidArgument(format!(
                    "face {row} references vertex {:?} but mesh has {n} vertices",
                    f
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidArgument(format!(
                    "face {row} is degenerate: {f:?}"
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    /// Unnormalized face normal `(b - a) x (c - a)`; its length is twice the area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| 0.5 * self.face_cross(f).norm())
            .sum()
    }

    pub fn aabb(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }

    /// `V - E + F`, counting each undirected edge once.
    pub fn euler_characteristic(&self) -> i64 {
        let mut edges = std::collections::HashSet::with_capacity(self.faces.len() * 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        self.vertices.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// True when every undirected edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        !counts.is_empty() && counts.values().all(|&c| c == 2)
    }
}

/// Similarity transform `p -> s * R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidScaleTransform {
    scale: f64,
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidScaleTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidScaleTransform {
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !rotation.iter().all(|v| v.is_finite()) || !all_finite(&translation) {
            return Err(Error::NonFinite("transform"));
        }
        let ortho_err = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if ortho_err > ROTATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (error {ortho_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    pub fn from_scale(scale: f64) -> Result<Self> {
        Self::new(scale, Mat3::identity(), Vec3::zeros())
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Same rotation and translation with a different scale.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(scale, self.rotation, self.translation)
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    /// Rotates a direction; scale and translation do not apply.
    pub fn apply_direction(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let inv_scale = 1.0 / self.scale;
        let rt = self.rotation.transpose();
        Self {
            scale: inv_scale,
            rotation: rt,
            translation: -(rt * self.translation) * inv_scale,
        }
    }

    /// Applies `inner` first, then `self`.
    pub fn then_after(&self, inner: &Self) -> Self {
        compose(self, inner)
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }
}

/// Transform that applies `inner` first and then `outer`.
pub fn compose(outer: &RigidScaleTransform, inner: &RigidScaleTransform) -> RigidScaleTransform {
    RigidScaleTransform {
        scale: outer.scale * inner.scale,
        rotation: outer.rotation * inner.rotation,
        translation: outer.rotation * inner.translation * outer.scale + outer.translation,
    }
}

/// Geometry that can be mapped through a [`RigidScaleTransform`].
pub trait Transformable: Sized {
    fn transformed(&self, t: &RigidScaleTransform) -> Self;
}

impl Transformable for PointCloud {
    fn transformed(&self, t: &RigidScaleTransform) -> Self {
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            normals: self.normals.as_ref().map(|ns| {
                ns.iter()
                    .map(|n| t.apply_direction(n).normalize())
                    .collect()
            }),
        }
    }
}

impl Transformable for TriangleMesh {
    fn transformed(&self, t: &RigidScaleTransform) -> Self {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply_point(p)).collect(),
            faces: self.faces.clone(),
        }
    }
}

pub fn apply_transform<G: Transformable>(geometry: &G, t: &RigidScaleTransform) -> G {
    geometry.transformed(t)
}

/// Length of the diagonal of the cloud's axis-aligned bounding box.
pub fn bbox_diagonal(cloud: &PointCloud) -> Result<f64> {
    cloud.aabb().map(|b| b.diagonal()).ok_or(Error::EmptyInput)
}

/// Replaces the points falling in each cubic voxel of edge `voxel` by their
/// centroid. Normals, when present, are averaged and renormalized.
///
/// Output is ordered by voxel coordinate (lexicographic x, y, z).
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "voxel size must be positive, got {voxel}"
        )));
    }
    let bounds = cloud.aabb().ok_or(Error::EmptyInput)?;
    struct Acc {
        sum: Vec3,
        normal_sum: Vec3,
        first_normal: Vec3,
        count: usize,
    }
    let mut cells: HashMap<[i64; 3], Acc> = HashMap::new();
    let normals = cloud.normals();
    for (i, p) in cloud.points().iter().enumerate() {
        let rel = (p - bounds.min) / voxel;
        let key = [
            rel.x.floor() as i64,
            rel.y.floor() as i64,
            rel.z.floor() as i64,
        ];
        let n = normals.map(|ns| ns[i]).unwrap_or_else(Vec3::zeros);
        let acc = cells.entry(key).or_insert(Acc {
            sum: Vec3::zeros(),
            normal_sum: Vec3::zeros(),
            first_normal: n,
            count: 0,
        });
        acc.sum += p;
        acc.normal_sum += n;
        acc.count += 1;
    }
    let mut keys: Vec<[i64; 3]> = cells.keys().copied().collect();
    keys.sort_unstable();
    let mut points = Vec::with_capacity(keys.len());
    let mut out_normals = Vec::with_capacity(keys.len());
    for key in &keys {
        let acc = &cells[key];
        points.push(acc.sum / acc.count as f64);
        if normals.is_some() {
            let len = acc.normal_sum.norm();
            out_normals.push(if len > 1e-12 {
                acc.normal_sum / len
            } else {
                acc.first_normal
            });
        }
    }
    Ok(PointCloud {
        points,
        normals: normals.map(|_| out_normals),
    })
}
