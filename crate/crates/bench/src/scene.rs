//! Synthetic single-view scenes: a meshed analytic shape, a random pose and a
//! noisy partial cloud of the posed surface.

use groundmesh::geom::Aabb;
use groundmesh::metrics::sample_surface;
use groundmesh::sdf::{dense_decode, marching_cubes, AnalyticSdf};
use groundmesh::{PointCloud, RigidScaleTransform, Transformable, TriangleMesh, Vec3};
use nalgebra::{Quaternion, UnitQuaternion};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::transform_json::TransformJson;

/// Analytic shape description; sizes are relative, the mesh is rescaled to
/// the scene's object diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
    Torus {
        center: [f64; 3],
        major: f64,
        minor: f64,
    },
    Union {
        a: std::boxed::Box<ShapeSpec>,
        b: std::boxed::Box<ShapeSpec>,
    },
}

impl ShapeSpec {
    pub fn sphere() -> Self {
        ShapeSpec::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        }
    }

    pub fn cuboid(half_extents: [f64; 3]) -> Self {
        ShapeSpec::Box {
            center: [0.0; 3],
            half_extents,
        }
    }

    pub fn torus(major: f64, minor: f64) -> Self {
        ShapeSpec::Torus {
            center: [0.0; 3],
            major,
            minor,
        }
    }

    pub fn union(a: ShapeSpec, b: ShapeSpec) -> Self {
        ShapeSpec::Union {
            a: std::boxed::Box::new(a),
            b: std::boxed::Box::new(b),
        }
    }

    /// Copy moved by `offset`.
    pub fn shifted(&self, offset: [f64; 3]) -> Self {
        let add = |c: &[f64; 3]| [c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]];
        match self {
            ShapeSpec::Sphere { center, radius } => ShapeSpec::Sphere {
                center: add(center),
                radius: *radius,
            },
            ShapeSpec::Box {
                center,
                half_extents,
            } => ShapeSpec::Box {
                center: add(center),
                half_extents: *half_extents,
            },
            ShapeSpec::Torus {
                center,
                major,
                minor,
            } => ShapeSpec::Torus {
                center: add(center),
                major: *major,
                minor: *minor,
            },
            ShapeSpec::Union { a, b } => ShapeSpec::union(a.shifted(offset), b.shifted(offset)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ShapeSpec::Sphere { .. } => "sphere",
            ShapeSpec::Box { .. } => "box",
            ShapeSpec::Torus { .. } => "torus",
            ShapeSpec::Union { .. } => "union",
        }
    }

    /// Whether some non-identity rotation maps the shape onto itself, which
    /// makes the recovered rotation ambiguous.
    pub fn rotation_ambiguous(&self) -> bool {
        !matches!(self, ShapeSpec::Union { .. })
    }

    pub fn to_oracle(&self) -> Result<AnalyticSdf> {
        use groundmesh::sdf::{make_box, make_sphere, make_torus, make_union};
        let v = |c: &[f64; 3]| Vec3::from(*c);
        Ok(match self {
            ShapeSpec::Sphere { center, radius } => make_sphere(v(center), *radius)?,
            ShapeSpec::Box {
                center,
                half_extents,
            } => make_box(v(center), v(half_extents))?,
            ShapeSpec::Torus {
                center,
                major,
                minor,
            } => make_torus(v(center), *major, *minor)?,
            ShapeSpec::Union { a, b } => make_union(&a.to_oracle()?, &b.to_oracle()?),
        })
    }

    /// Default parameters for a CLI shape name.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "sphere" => Self::sphere(),
            "box" => Self::cuboid([1.0, 0.6, 0.4]),
            "torus" => Self::torus(1.0, 0.3),
            "union" => Self::union(
                Self::cuboid([0.8, 0.5, 0.4]),
                ShapeSpec::Sphere {
                    center: [0.7, 0.35, 0.3],
                    radius: 0.5,
                },
            ),
            other => {
                return Err(BenchError::Invalid(format!(
                    "unknown shape '{other}', expected sphere, box, torus or union"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoseSpec {
    /// Uniform rotation, translation in front of the camera, scale in
    /// `[0.9, 1.1]`, all drawn from the scene seed.
    Random,
    Fixed(TransformJson),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: ShapeSpec,
    /// Diagonal of the canonical mesh's bounding box, meters.
    pub object_diagonal: f64,
    pub pose: PoseSpec,
    /// Camera-to-object direction in the sensor frame. `None` looks from the
    /// origin toward the object (or along +z when the object sits at the
    /// origin).
    pub view_direction: Option<[f64; 3]>,
    /// Keep only points facing the camera.
    pub partial: bool,
    /// Isotropic Gaussian noise, meters.
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    /// Surface samples drawn before culling.
    pub target_samples: usize,
    /// Lattice resolution used to mesh the shape.
    pub mesh_resolution: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(shape: ShapeSpec, seed: u64) -> Self {
        Self {
            shape,
            object_diagonal: 0.15,
            pose: PoseSpec::Random,
            view_direction: None,
            partial: true,
            noise_sigma: 0.005 * 0.15,
            outlier_fraction: 0.0,
            target_samples: 20_000,
            mesh_resolution: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Invalid(m));
        if !(self.object_diagonal > 0.0) || !self.object_diagonal.is_finite() {
            return bad(format!("object diagonal must be positive, got {}", self.object_diagonal));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad(format!("outlier fraction must lie in [0, 1), got {}", self.outlier_fraction));
        }
        if self.target_samples == 0 {
            return bad("target sample count must be positive".into());
        }
        if self.mesh_resolution < 2 {
            return bad(format!("mesh resolution must be at least 2, got {}", self.mesh_resolution));
        }
        if let Some(v) = self.view_direction {
            let v = Vec3::from(v);
            if !(v.norm() > 0.0) || !v.iter().all(|c| c.is_finite()) {
                return bad("view direction must be a non-zero finite vector".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Canonical mesh, centred on its bounding box, diagonal `object_diagonal`.
    pub source_mesh: TriangleMesh,
    /// Sensor-frame observation.
    pub target_cloud: PointCloud,
    pub gt_transform: RigidScaleTransform,
    pub view_direction: Vec3,
    /// Target points that are noisy surface samples rather than outliers.
    pub inlier_count: usize,
    /// Fraction of surface samples that survived view culling.
    pub retained_fraction: f64,
}

/// Cube around the shape's bounding box with a 10% margin on its longest
/// side.
pub fn decode_bounds(oracle: &AnalyticSdf) -> Result<Aabb> {
    let bb = oracle.shape().aabb();
    let half = 0.5 * bb.extent().max() * 1.1;
    let c = bb.center();
    Ok(Aabb::new(c - Vec3::repeat(half), c + Vec3::repeat(half))?)
}

/// Cube around the shape spanning twice its longest side, so that the shape
/// occupies the central half of the lattice (a unit-radius sphere decodes in
/// `[-2, 2]^3`).
pub fn decode_domain(oracle: &AnalyticSdf) -> Result<Aabb> {
    let bb = oracle.shape().aabb();
    let half = bb.extent().max();
    let c = bb.center();
    Ok(Aabb::new(c - Vec3::repeat(half), c + Vec3::repeat(half))?)
}

/// Meshes `shape` on a `resolution`-cell lattice and rescales the result so
/// that its bounding box is centred at the origin with diagonal `diagonal`.
pub fn canonical_mesh(shape: &ShapeSpec, resolution: usize, diagonal: f64) -> Result<TriangleMesh> {
    let oracle = shape.to_oracle()?;
    let bounds = decode_bounds(&oracle)?;
    let (grid, _) = dense_decode(&oracle, resolution, &bounds)?;
    let mesh = marching_cubes(&grid, 0.0);
    let mbb = mesh
        .aabb()
        .ok_or_else(|| BenchError::Invalid("shape produced an empty mesh".into()))?;
    let factor = diagonal / mbb.diagonal();
    let center = mbb.center();
    let vertices = mesh.vertices().iter().map(|v| (v - center) * factor).collect();
    Ok(TriangleMesh::new(vertices, mesh.faces().to_vec())?)
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidScaleTransform {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let t = Vec3::new(
        rng.random_range(-0.1..=0.1),
        rng.random_range(-0.1..=0.1),
        rng.random_range(0.6..=0.9),
    );
    let s = rng.random_range(0.9..=1.1);
    RigidScaleTransform::new(s, *rot.to_rotation_matrix().matrix(), t).expect("unit quaternion gives a rotation")
}

/// Builds the scene described by `spec`; identical specs give bit-identical
/// scenes.
pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mesh = canonical_mesh(&spec.shape, spec.mesh_resolution, spec.object_diagonal)?;
    let gt = match &spec.pose {
        PoseSpec::Random => random_pose(&mut rng),
        PoseSpec::Fixed(t) => t.to_transform()?,
    };
    let view = match spec.view_direction {
        Some(v) => Vec3::from(v).normalize(),
        None => {
            let t = gt.translation();
            if t.norm() > 0.0 {
                t.normalize()
            } else {
                Vec3::z()
            }
        }
    };

    let samples = sample_surface(&mesh, spec.target_samples, rng.random())?;
    // A canonical normal n faces the camera when R n . view < 0.
    let view_canonical = gt.rotation().transpose() * view;
    let keep: Vec<usize> = match samples.normals() {
        Some(normals) if spec.partial => (0..samples.len())
            .filter(|&i| normals[i].dot(&-view_canonical) > 0.0)
            .collect(),
        _ => (0..samples.len()).collect(),
    };
    if keep.is_empty() {
        return Err(BenchError::Invalid("degenerate view: culling removed every point".into()));
    }
    let retained_fraction = keep.len() as f64 / samples.len() as f64;
    let clean = samples.select(&keep).without_normals().transformed(&gt);

    let mut points = clean.into_parts().0;
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for p in &mut points {
            for c in p.iter_mut() {
                *c += noise.sample(&mut rng);
            }
        }
    }
    let n_out = (spec.outlier_fraction * points.len() as f64).floor() as usize;
    let mut inlier_count = points.len();
    if n_out > 0 {
        let bb = Aabb::from_points(&points).expect("non-empty").scaled(1.5);
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.shuffle(&mut rng);
        for &i in &order[..n_out] {
            points[i] = Vec3::from_fn(|d, _| rng.random_range(bb.min[d]..=bb.max[d]));
        }
        inlier_count -= n_out;
    }
    Ok(Scene {
        spec: spec.clone(),
        source_mesh: mesh,
        target_cloud: PointCloud::new(points)?,
        gt_transform: gt,
        view_direction: view,
        inlier_count,
        retained_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed(spec: &mut SceneSpec) {
        spec.pose = PoseSpec::Fixed(TransformJson::from(&RigidScaleTransform::identity()));
    }

    #[test]
    fn clean_full_view_matches_samples() {
        let mut spec = SceneSpec::new(ShapeSpec::sphere(), 3);
        fixed(&mut spec);
        spec.partial = false;
        spec.noise_sigma = 0.0;
        spec.target_samples = 500;
        spec.mesh_resolution = 24;
        let scene = synth_scene(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let expected = sample_surface(&scene.source_mesh, 500, rng.random()).unwrap();
        assert_eq!(scene.target_cloud.points(), expected.points());
        assert_eq!(scene.retained_fraction, 1.0);
    }

    #[test]
    fn sphere_culling_keeps_about_half() {
        let mut spec = SceneSpec::new(ShapeSpec::sphere(), 11);
        spec.mesh_resolution = 48;
        let scene = synth_scene(&spec).unwrap();
        assert!((scene.retained_fraction - 0.5).abs() < 0.05, "{}", scene.retained_fraction);
    }

    #[test]
    fn canonical_mesh_has_requested_diagonal() {
        let mesh = canonical_mesh(&ShapeSpec::torus(1.0, 0.3), 40, 0.15).unwrap();
        let bb = mesh.aabb().unwrap();
        assert!((bb.diagonal() - 0.15).abs() < 1e-12);
        assert!(bb.center().norm() < 1e-12);
    }

    #[test]
    fn decode_domain_doubles_the_longest_side() {
        let d = decode_domain(&ShapeSpec::sphere().to_oracle().unwrap()).unwrap();
        assert_eq!((d.min, d.max), (Vec3::repeat(-2.0), Vec3::repeat(2.0)));
        let b = decode_domain(&ShapeSpec::cuboid([1.0, 0.6, 0.4]).shifted([0.5, 0.0, 0.0]).to_oracle().unwrap()).unwrap();
        assert_eq!(b.center(), Vec3::new(0.5, 0.0, 0.0));
        assert_eq!(b.extent(), Vec3::repeat(4.0));
    }

    #[test]
    fn outliers_replace_points() {
        let mut spec = SceneSpec::new(ShapeSpec::cuboid([1.0, 0.5, 0.5]), 5);
        spec.mesh_resolution = 24;
        spec.target_samples = 1000;
        spec.outlier_fraction = 0.2;
        let scene = synth_scene(&spec).unwrap();
        assert_eq!(scene.target_cloud.len() - scene.inlier_count, scene.target_cloud.len() / 5);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SceneSpec::new(ShapeSpec::sphere(), 0);
        spec.outlier_fraction = 1.0;
        assert_eq!(synth_scene(&spec).unwrap_err().exit_code(), 2);
        spec.outlier_fraction = 0.0;
        spec.noise_sigma = -1.0;
        assert!(synth_scene(&spec).is_err());
        assert!(ShapeSpec::from_name("cone").is_err());
    }
}
