//! Dense and hierarchical (narrow-band) SDF decoding.

use rustc_hash::FxHashMap as HashMap;
use std::time::{Duration, Instant};

use super::grid::{dense_index, lattice_point, pack, CellSet, SparseValues, VoxelGrid};
use super::oracle::SdfOracle;
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStats {
    pub queries_issued: u64,
    /// `(resolution + 1)^3`.
    pub dense_equivalent: u64,
    /// `1 - queries_issued / dense_equivalent`.
    pub reduction: f64,
    pub wall_time: Duration,
    /// False when no cell was selected for refinement.
    pub surface_found: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalConfig {
    /// Coarse lattice resolution; `None` selects `resolution / 8`.
    pub coarse_resolution: Option<usize>,
    /// Cells whose smallest corner magnitude is within this many voxel
    /// diagonals of the next level are refined.
    pub band_halfwidth_voxels: f64,
    /// Chebyshev radius, in cells, by which the marked set grows per level.
    pub dilation_cells: usize,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        Self {
            coarse_resolution: None,
            band_halfwidth_voxels: 1.5,
            dilation_cells: 1,
        }
    }
}

/// Largest supported lattice resolution (coordinates are packed in 21 bits).
pub const MAX_RESOLUTION: usize = (1 << 21) - 1;

fn check_resolution(resolution: usize, bounds: &Aabb) -> Result<()> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least 2, got {resolution}"
        )));
    }
    if resolution > MAX_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "resolution {resolution} exceeds {MAX_RESOLUTION}"
        )));
    }
    let e = bounds.extent();
    if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
        return Err(Error::InvalidArgument("decode bounds must have positive extent".into()));
    }
    Ok(())
}

fn dense_equivalent(resolution: usize) -> u64 {
    ((resolution + 1) as u64).pow(3)
}

fn stats(queries: u64, resolution: usize, start: Instant, surface_found: bool) -> DecodeStats {
    let dense = dense_equivalent(resolution);
    DecodeStats {
        queries_issued: queries,
        dense_equivalent: dense,
        reduction: 1.0 - queries as f64 / dense as f64,
        wall_time: start.elapsed(),
        surface_found,
    }
}

/// Evaluates every lattice point, one z-slab per oracle batch.
pub fn dense_decode(
    oracle: &dyn SdfOracle,
    resolution: usize,
    bounds: &Aabb,
) -> Result<(VoxelGrid, DecodeStats)> {
    check_resolution(resolution, bounds)?;
    let start = Instant::now();
    let before = oracle.query_count();
    let n = resolution + 1;
    let mut values = vec![0.0; n * n * n];
    let mut slab = Vec::with_capacity(n * n);
    let mut any_negative = false;
    let mut any_positive = false;
    for k in 0..n {
        slab.clear();
        for j in 0..n {
            for i in 0..n {
                slab.push(lattice_point(bounds, resolution, [i, j, k]));
            }
        }
        let vals = oracle.evaluate(&slab);
        let offset = dense_index(resolution, [0, 0, k]);
        for (dst, &v) in values[offset..offset + n * n].iter_mut().zip(&vals) {
            any_negative |= v < 0.0;
            any_positive |= v >= 0.0;
            *dst = v;
        }
    }
    let queries = oracle.query_count() - before;
    let st = stats(queries, resolution, start, any_negative && any_positive);
    Ok((VoxelGrid::dense(resolution, *bounds, values), st))
}

/// Cell coordinates at one level.
type Cell = [usize; 3];

struct Refiner<'a> {
    oracle: &'a dyn SdfOracle,
    bounds: Aabb,
    finest: usize,
    values: HashMap<u64, f64>,
}

impl Refiner<'_> {
    /// Evaluates, in sorted order, the listed fine lattice points that are
    /// not yet known.
    fn evaluate(&mut self, mut points: Vec<[usize; 3]>) {
        points.sort_unstable_by_key(|p| [p[2], p[1], p[0]]);
        points.dedup();
        points.retain(|p| !self.values.contains_key(&pack(*p)));
        if points.is_empty() {
            return;
        }
        let world: Vec<Vec3> = points
            .iter()
            .map(|&p| lattice_point(&self.bounds, self.finest, p))
            .collect();
        let vals = self.oracle.evaluate(&world);
        for (p, v) in points.into_iter().zip(vals) {
            self.values.insert(pack(p), v);
        }
    }

    fn corner(&self, cell: Cell, c: usize, stride: usize) -> f64 {
        let q = [
            (cell[0] + (c & 1)) * stride,
            (cell[1] + ((c >> 1) & 1)) * stride,
            (cell[2] + ((c >> 2) & 1)) * stride,
        ];
        self.values[&pack(q)]
    }

    /// Cells straddling zero or with a corner within `threshold` of it.
    fn marked(&self, cells: &[Cell], stride: usize, threshold: f64) -> Vec<Cell> {
        cells
            .iter()
            .copied()
            .filter(|&cell| {
                let (mut lo, mut hi, mut min_abs) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
                for c in 0..8 {
                    let v = self.corner(cell, c, stride);
                    lo = lo.min(v);
                    hi = hi.max(v);
                    min_abs = min_abs.min(v.abs());
                }
                (lo < 0.0 && hi >= 0.0) || min_abs <= threshold
            })
            .collect()
    }
}

fn dilate(cells: &[Cell], radius: usize, res: usize) -> Vec<Cell> {
    let mut set = CellSet::new(res);
    for &c in cells {
        set.insert(c);
    }
    set.dilated(radius).iter().collect()
}

/// Resolution chain from the coarse level to `resolution`, doubling each step.
fn level_chain(resolution: usize, cfg: &HierarchicalConfig) -> Result<Vec<usize>> {
    let coarse = match cfg.coarse_resolution {
        Some(c) => c,
        None => {
            if resolution % 8 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "default coarse resolution needs a resolution divisible by 8, got {resolution}"
                )));
            }
            resolution / 8
        }
    };
    if coarse < 1 || coarse > resolution || resolution % coarse != 0 || !(resolution / coarse).is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "coarse resolution {coarse} must divide {resolution} by a power of two"
        )));
    }
    let mut levels = vec![coarse];
    while *levels.last().expect("non-empty") < resolution {
        let next = levels.last().expect("non-empty") * 2;
        levels.push(next);
    }
    Ok(levels)
}

/// Decodes a coarse lattice densely, then repeatedly refines only the cells
/// near the zero level set.
///
/// At each level, cells whose corners change sign or come within
/// `band_halfwidth_voxels` voxel diagonals (of the next level) of zero are
/// marked, dilated, and subdivided; only lattice points not already known are
/// queried. Points never evaluated read back as trilinear interpolations of
/// the deepest enclosing evaluated cell.
pub fn hierarchical_decode(
    oracle: &dyn SdfOracle,
    resolution: usize,
    bounds: &Aabb,
    cfg: &HierarchicalConfig,
) -> Result<(VoxelGrid, DecodeStats)> {
    check_resolution(resolution, bounds)?;
    if !(cfg.band_halfwidth_voxels >= 0.0) || !cfg.band_halfwidth_voxels.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "band half-width must be non-negative, got {}",
            cfg.band_halfwidth_voxels
        )));
    }
    let levels = level_chain(resolution, cfg)?;
    let start = Instant::now();
    let before = oracle.query_count();
    let mut r = Refiner {
        oracle,
        bounds: *bounds,
        finest: resolution,
        values: HashMap::default(),
    };

    let coarse = levels[0];
    let stride0 = resolution / coarse;
    let mut pts = Vec::with_capacity((coarse + 1).pow(3));
    for k in 0..=coarse {
        for j in 0..=coarse {
            for i in 0..=coarse {
                pts.push([i * stride0, j * stride0, k * stride0]);
            }
        }
    }
    r.evaluate(pts);

    let mut cells_per_level: Vec<CellSet> = vec![CellSet::new(0)];
    let mut current: Vec<Cell> = Vec::with_capacity(coarse.pow(3));
    for k in 0..coarse {
        for j in 0..coarse {
            for i in 0..coarse {
                current.push([i, j, k]);
            }
        }
    }
    let mut surface_found = true;
    for level in 0..levels.len() - 1 {
        let stride = resolution / levels[level];
        let child_voxel = (bounds.extent() / levels[level + 1] as f64).norm();
        let marked = r.marked(&current, stride, cfg.band_halfwidth_voxels * child_voxel);
        if marked.is_empty() {
            surface_found = level > 0;
            break;
        }
        let active = dilate(&marked, cfg.dilation_cells, levels[level]);
        let child_stride = stride / 2;
        let mut children = Vec::with_capacity(active.len() * 8);
        let mut new_points = Vec::with_capacity(active.len() * 27);
        for cell in &active {
            for c in 0..8 {
                let child = [
                    cell[0] * 2 + (c & 1),
                    cell[1] * 2 + ((c >> 1) & 1),
                    cell[2] * 2 + ((c >> 2) & 1),
                ];
                children.push(child);
            }
            for dz in 0..=2 {
                for dy in 0..=2 {
                    for dx in 0..=2 {
                        new_points.push([
                            (cell[0] * 2 + dx) * child_stride,
                            (cell[1] * 2 + dy) * child_stride,
                            (cell[2] * 2 + dz) * child_stride,
                        ]);
                    }
                }
            }
        }
        r.evaluate(new_points);
        let mut set = CellSet::new(levels[level + 1]);
        for &c in &children {
            set.insert(c);
        }
        current = set.iter().collect();
        cells_per_level.push(set);
    }
    if levels.len() == 1 {
        surface_found = !r.marked(&current, stride0, 0.0).is_empty();
    }

    let queries = oracle.query_count() - before;
    let st = stats(queries, resolution, start, surface_found);
    let grid = VoxelGrid::sparse(
        resolution,
        *bounds,
        SparseValues {
            values: r.values,
            resolution,
            levels: levels[..cells_per_level.len()].to_vec(),
            cells: cells_per_level,
        },
    );
    Ok((grid, st))
}
