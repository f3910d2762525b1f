//! Lattice storage for sampled SDF values.

use rustc_hash::FxHashMap as HashMap;

use crate::geom::{Aabb, Vec3};

/// Lattice coordinate `(i, j, k)`, each in `[0, resolution]`.
pub type LatticePoint = [usize; 3];

/// Packs a lattice coordinate (each component < 2^21) into one key.
pub(crate) fn pack(p: [usize; 3]) -> u64 {
    (p[0] as u64) | ((p[1] as u64) << 21) | ((p[2] as u64) << 42)
}

/// Hierarchically refined values: every evaluated lattice point, plus for each
/// refinement level the cells whose eight corners were all evaluated.
#[derive(Debug, Clone)]
pub(crate) struct SparseValues {
    pub(crate) values: HashMap<u64, f64>,
    /// Resolution of the full lattice the keys refer to.
    pub(crate) resolution: usize,
    /// `levels[l]` holds the resolution of refinement level `l`.
    pub(crate) levels: Vec<usize>,
    /// Cells (in level coordinates) fully evaluated at each level `>= 1`;
    /// level 0 is complete.
    pub(crate) cells: Vec<CellSet>,
}

/// Bitset over the cells of a `res^3` cell grid; iteration order is `(k, j, i)`.
#[derive(Debug, Clone)]
pub(crate) struct CellSet {
    res: usize,
    bits: Vec<u64>,
}

impl CellSet {
    pub(crate) fn new(res: usize) -> Self {
        Self {
            res,
            bits: vec![0; res.pow(3).div_ceil(64)],
        }
    }

    fn linear(&self, c: [usize; 3]) -> usize {
        c[0] + self.res * (c[1] + self.res * c[2])
    }

    pub(crate) fn insert(&mut self, c: [usize; 3]) {
        let l = self.linear(c);
        self.bits[l / 64] |= 1u64 << (l % 64);
    }

    pub(crate) fn contains(&self, c: [usize; 3]) -> bool {
        let l = self.linear(c);
        self.bits[l / 64] & (1u64 << (l % 64)) != 0
    }

    /// Inserts every cell within Chebyshev distance `radius` of a member.
    pub(crate) fn dilated(&self, radius: usize) -> Self {
        let mut out = Self::new(self.res);
        let r = radius as isize;
        for c in self.iter() {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let n = [c[0] as isize + dx, c[1] as isize + dy, c[2] as isize + dz];
                        if n.iter().all(|&v| v >= 0 && (v as usize) < self.res) {
                            out.insert([n[0] as usize, n[1] as usize, n[2] as usize]);
                        }
                    }
                }
            }
        }
        out
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let res = self.res;
        self.bits.iter().enumerate().flat_map(move |(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                let l = w * 64 + b;
                Some([l % res, (l / res) % res, l / (res * res)])
            })
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Storage {
    Dense(Vec<f64>),
    Sparse(SparseValues),
}

/// SDF samples on the `(resolution + 1)^3` lattice spanning `bounds`.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    resolution: usize,
    bounds: Aabb,
    pub(crate) storage: Storage,
}

impl VoxelGrid {
    pub(crate) fn dense(resolution: usize, bounds: Aabb, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), (resolution + 1).pow(3));
        Self {
            resolution,
            bounds,
            storage: Storage::Dense(values),
        }
    }

    pub(crate) fn sparse(resolution: usize, bounds: Aabb, values: SparseValues) -> Self {
        Self {
            resolution,
            bounds,
            storage: Storage::Sparse(values),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Lattice spacing per axis.
    pub fn voxel_size(&self) -> Vec3 {
        self.bounds.extent() / self.resolution as f64
    }

    /// World position of a lattice point.
    pub fn point(&self, p: LatticePoint) -> Vec3 {
        lattice_point(&self.bounds, self.resolution, p)
    }

    pub fn evaluated_count(&self) -> usize {
        match &self.storage {
            Storage::Dense(v) => v.len(),
            Storage::Sparse(s) => s.values.len(),
        }
    }

    /// Value actually decoded at `p`, if any.
    pub fn evaluated(&self, p: LatticePoint) -> Option<f64> {
        if p.iter().any(|&c| c > self.resolution) {
            return None;
        }
        match &self.storage {
            Storage::Dense(v) => Some(v[dense_index(self.resolution, p)]),
            Storage::Sparse(s) => s.values.get(&pack(p)).copied(),
        }
    }

    /// Decoded value, or for unevaluated points the trilinear interpolation
    /// of the deepest fully evaluated enclosing cell.
    pub fn value(&self, p: LatticePoint) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[dense_index(self.resolution, p)],
            Storage::Sparse(s) => match s.values.get(&pack(p)) {
                Some(&v) => v,
                None => s.interpolate(p),
            },
        }
    }

    /// All evaluated lattice points with their values, sorted by `(k, j, i)`.
    pub fn evaluated_points(&self) -> Vec<(LatticePoint, f64)> {
        match &self.storage {
            Storage::Dense(v) => {
                let n = self.resolution + 1;
                (0..v.len())
                    .map(|idx| ([idx % n, (idx / n) % n, idx / (n * n)], v[idx]))
                    .collect()
            }
            Storage::Sparse(s) => {
                let mut out: Vec<(LatticePoint, f64)> = s
                    .values
                    .iter()
                    .map(|(&key, &v)| (unpack(key), v))
                    .collect();
                out.sort_unstable_by_key(|(p, _)| [p[2], p[1], p[0]]);
                out
            }
        }
    }
}

fn unpack(key: u64) -> [usize; 3] {
    let mask = (1u64 << 21) - 1;
    [
        (key & mask) as usize,
        ((key >> 21) & mask) as usize,
        ((key >> 42) & mask) as usize,
    ]
}

pub(crate) fn dense_index(resolution: usize, p: LatticePoint) -> usize {
    let n = resolution + 1;
    p[0] + n * (p[1] + n * p[2])
}

pub(crate) fn lattice_point(bounds: &Aabb, resolution: usize, p: LatticePoint) -> Vec3 {
    let step = bounds.extent() / resolution as f64;
    Vec3::new(
        bounds.min.x + p[0] as f64 * step.x,
        bounds.min.y + p[1] as f64 * step.y,
        bounds.min.z + p[2] as f64 * step.z,
    )
}

impl SparseValues {
    fn stride(&self, level: usize) -> usize {
        self.resolution / self.levels[level]
    }

    fn interpolate(&self, p: LatticePoint) -> f64 {
        for level in (0..self.levels.len()).rev() {
            let stride = self.stride(level);
            let res = self.levels[level];
            let cell = [
                (p[0] / stride).min(res - 1),
                (p[1] / stride).min(res - 1),
                (p[2] / stride).min(res - 1),
            ];
            if level > 0 && !self.cells[level].contains(cell) {
                continue;
            }
            let mut corners = [0.0; 8];
            for (c, slot) in corners.iter_mut().enumerate() {
                let q = [
                    (cell[0] + (c & 1)) * stride,
                    (cell[1] + ((c >> 1) & 1)) * stride,
                    (cell[2] + ((c >> 2) & 1)) * stride,
                ];
                *slot = self.values[&pack(q)];
            }
            let f = [
                (p[0] - cell[0] * stride) as f64 / stride as f64,
                (p[1] - cell[1] * stride) as f64 / stride as f64,
                (p[2] - cell[2] * stride) as f64 / stride as f64,
            ];
            return trilinear(&corners, f);
        }
        unreachable!("level 0 covers the whole lattice")
    }
}

/// Trilinear interpolation; `corners[c]` sits at offset `(c & 1, c >> 1 & 1,
/// c >> 2 & 1)`.
fn trilinear(corners: &[f64; 8], f: [f64; 3]) -> f64 {
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let x00 = lerp(corners[0], corners[1], f[0]);
    let x10 = lerp(corners[2], corners[3], f[0]);
    let x01 = lerp(corners[4], corners[5], f[0]);
    let x11 = lerp(corners[6], corners[7], f[0]);
    lerp(lerp(x00, x10, f[1]), lerp(x01, x11, f[1]), f[2])
}
