//! Signed distance query sources.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

/// Batches at least this large are evaluated in parallel.
const PAR_BATCH: usize = 4096;

/// Batched signed distance evaluation (negative inside) with a query counter.
pub trait SdfOracle: Sync {
    /// Values for `points`, in order. Adds `points.len()` to the counter.
    fn evaluate(&self, points: &[Vec3]) -> Vec<f64>;

    /// Total number of points evaluated so far.
    fn query_count(&self) -> u64;
}

/// Analytic shapes with exact signed distances.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extents: Vec3 },
    /// Ring in the plane `z = center.z`.
    Torus { center: Vec3, major: f64, minor: f64 },
    Union(std::boxed::Box<Shape>, std::boxed::Box<Shape>),
}

impl Shape {
    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box {
                center,
                half_extents,
            } => {
                let q = (p - center).abs() - half_extents;
                let outside = q.sup(&Vec3::zeros()).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Torus {
                center,
                major,
                minor,
            } => {
                let d = p - center;
                let ring = (d.x * d.x + d.y * d.y).sqrt() - major;
                (ring * ring + d.z * d.z).sqrt() - minor
            }
            Shape::Union(a, b) => a.distance(p).min(b.distance(p)),
        }
    }

    /// Tight axis-aligned bounds of the solid.
    pub fn aabb(&self) -> Aabb {
        match self {
            Shape::Sphere { center, radius } => Aabb {
                min: center - Vec3::repeat(*radius),
                max: center + Vec3::repeat(*radius),
            },
            Shape::Box {
                center,
                half_extents,
            } => Aabb {
                min: center - half_extents,
                max: center + half_extents,
            },
            Shape::Torus {
                center,
                major,
                minor,
            } => {
                let h = Vec3::new(major + minor, major + minor, *minor);
                Aabb {
                    min: center - h,
                    max: center + h,
                }
            }
            Shape::Union(a, b) => {
                let (a, b) = (a.aabb(), b.aabb());
                Aabb {
                    min: a.min.inf(&b.min),
                    max: a.max.sup(&b.max),
                }
            }
        }
    }
}

/// Shared atomic query counter.
#[derive(Debug, Default)]
struct Counter(AtomicU64);

impl Counter {
    fn add(&self, n: usize) {
        self.0.fetch_add(n as u64, Ordering::Relaxed);
    }

    fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

fn eval_batch(points: &[Vec3], f: impl Fn(&Vec3) -> f64 + Sync) -> Vec<f64> {
    if points.len() >= PAR_BATCH {
        points.par_iter().map(&f).collect()
    } else {
        points.iter().map(f).collect()
    }
}

/// Oracle backed by an analytic [`Shape`].
#[derive(Debug)]
pub struct AnalyticSdf {
    shape: Shape,
    counter: Counter,
}

impl AnalyticSdf {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            counter: Counter::default(),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }
}

impl Clone for AnalyticSdf {
    /// The clone starts with a fresh counter.
    fn clone(&self) -> Self {
        Self::new(self.shape.clone())
    }
}

impl SdfOracle for AnalyticSdf {
    fn evaluate(&self, points: &[Vec3]) -> Vec<f64> {
        self.counter.add(points.len());
        eval_batch(points, |p| self.shape.distance(p))
    }

    fn query_count(&self) -> u64 {
        self.counter.get()
    }
}

/// Oracle wrapping an arbitrary thread-safe function.
pub struct FnOracle<F> {
    f: F,
    counter: Counter,
}

impl<F: Fn(&Vec3) -> f64 + Sync> FnOracle<F> {
    pub fn new(f: F) -> Self {
        Self {
            f,
            counter: Counter::default(),
        }
    }
}

impl<F: Fn(&Vec3) -> f64 + Sync> SdfOracle for FnOracle<F> {
    fn evaluate(&self, points: &[Vec3]) -> Vec<f64> {
        self.counter.add(points.len());
        eval_batch(points, &self.f)
    }

    fn query_count(&self) -> u64 {
        self.counter.get()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn finite(v: &Vec3) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("shape center"))
    }
}

pub fn make_sphere(center: Vec3, radius: f64) -> Result<AnalyticSdf> {
    finite(&center)?;
    positive("radius", radius)?;
    Ok(AnalyticSdf::new(Shape::Sphere { center, radius }))
}

pub fn make_box(center: Vec3, half_extents: Vec3) -> Result<AnalyticSdf> {
    finite(&center)?;
    for h in half_extents.iter() {
        positive("half extent", *h)?;
    }
    Ok(AnalyticSdf::new(Shape::Box {
        center,
        half_extents,
    }))
}

pub fn make_torus(center: Vec3, major: f64, minor: f64) -> Result<AnalyticSdf> {
    finite(&center)?;
    positive("major radius", major)?;
    positive("minor radius", minor)?;
    Ok(AnalyticSdf::new(Shape::Torus {
        center,
        major,
        minor,
    }))
}

/// Pointwise minimum of two analytic oracles.
pub fn make_union(a: &AnalyticSdf, b: &AnalyticSdf) -> AnalyticSdf {
    AnalyticSdf::new(Shape::Union(
        std::boxed::Box::new(a.shape.clone()),
        std::boxed::Box::new(b.shape.clone()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        let s = make_sphere(Vec3::zeros(), 1.0).unwrap();
        assert_eq!(s.evaluate(&[Vec3::zeros()]), vec![-1.0]);
        let b = make_box(Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        assert_eq!(b.evaluate(&[Vec3::new(2.0, 0.0, 0.0)]), vec![1.0]);
        assert_eq!(b.evaluate(&[Vec3::new(0.5, 0.0, 0.0)]), vec![-0.5]);
        let t = make_torus(Vec3::zeros(), 1.0, 0.25).unwrap();
        assert_eq!(t.evaluate(&[Vec3::new(1.0, 0.0, 0.0)]), vec![-0.25]);
        assert_eq!(t.evaluate(&[Vec3::zeros()]), vec![0.75]);
    }

    #[test]
    fn counter_tracks_batches() {
        let s = make_sphere(Vec3::zeros(), 1.0).unwrap();
        s.evaluate(&[Vec3::zeros(); 7]);
        s.evaluate(&vec![Vec3::x(); 5000]);
        assert_eq!(s.query_count(), 5007);
        assert_eq!(s.clone().query_count(), 0);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(make_sphere(Vec3::zeros(), 0.0).is_err());
        assert!(make_box(Vec3::zeros(), Vec3::new(1.0, -1.0, 1.0)).is_err());
        assert!(make_torus(Vec3::zeros(), 1.0, f64::NAN).is_err());
    }

    #[test]
    fn union_is_min() {
        let a = make_sphere(Vec3::zeros(), 0.5).unwrap();
        let b = make_box(Vec3::new(0.6, 0.0, 0.0), Vec3::repeat(0.3)).unwrap();
        let u = make_union(&a, &b);
        for i in 0..50 {
            let p = Vec3::new((i as f64 * 0.3).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.01);
            assert_eq!(u.shape().distance(&p), a.shape().distance(&p).min(b.shape().distance(&p)));
        }
    }
}
