//! Table-driven marching cubes over dense or sparse lattices.

use rayon::prelude::*;
use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use super::grid::{lattice_point, pack, Storage, VoxelGrid};
use super::tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};
use crate::geom::{TriangleMesh, Vec3};

/// An edge of the lattice: its lower endpoint (packed) and axis.
type EdgeKey = (u64, u8);

struct CellTriangles {
    /// Per triangle, the lattice edges of its vertices.
    tris: Vec<[EdgeKey; 3]>,
    /// Position of every edge vertex first produced in this chunk.
    positions: Vec<(EdgeKey, Vec3)>,
}

fn edge_key(a: [usize; 3], b: [usize; 3]) -> EdgeKey {
    let axis = (0..3).find(|&d| a[d] != b[d]).expect("edge endpoints differ");
    (pack(a), axis as u8)
}

/// Triangulates one cell given its corner values in table order.
fn polygonise(
    cell: [usize; 3],
    values: &[f64; 8],
    iso: f64,
    grid: &VoxelGrid,
    out: &mut CellTriangles,
    seen: &mut HashSet<EdgeKey>,
) {
    let mut case = 0usize;
    for (c, &v) in values.iter().enumerate() {
        if v < iso {
            case |= 1 << c;
        }
    }
    let edges = EDGE_TABLE[case];
    if edges == 0 {
        return;
    }
    let corner = |c: usize| {
        let o = CORNER_OFFSETS[c];
        [cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]]
    };
    let mut keys = [(0u64, 0u8); 12];
    for (e, pair) in EDGE_CORNERS.iter().enumerate() {
        if edges & (1 << e) == 0 {
            continue;
        }
        let (a, b) = (corner(pair[0]), corner(pair[1]));
        let key = edge_key(a, b);
        keys[e] = key;
        if seen.insert(key) {
            let (va, vb) = (values[pair[0]], values[pair[1]]);
            let pa = lattice_point(grid.bounds(), grid.resolution(), a);
            let pb = lattice_point(grid.bounds(), grid.resolution(), b);
            let t = (iso - va) / (vb - va);
            out.positions.push((key, pa + (pb - pa) * t));
        }
    }
    for tri in TRI_TABLE[case].chunks(3) {
        if tri[0] < 0 {
            break;
        }
        // Table winding faces the low side; reverse so normals face +SDF.
        out.tris.push([keys[tri[0] as usize], keys[tri[2] as usize], keys[tri[1] as usize]]);
    }
}

fn corner_values(grid: &VoxelGrid, cell: [usize; 3]) -> [f64; 8] {
    std::array::from_fn(|c| {
        let o = CORNER_OFFSETS[c];
        grid.value([cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]])
    })
}

fn run_cells<I>(grid: &VoxelGrid, iso: f64, cells: I) -> CellTriangles
where
    I: IntoIterator<Item = [usize; 3]>,
{
    let mut out = CellTriangles {
        tris: Vec::new(),
        positions: Vec::new(),
    };
    let mut seen = HashSet::default();
    for cell in cells {
        let values = corner_values(grid, cell);
        polygonise(cell, &values, iso, grid, &mut out, &mut seen);
    }
    out
}

/// Cells of a sparse grid that can carry surface: the finest refined cells and
/// their immediate neighbours, sorted by `(k, j, i)`.
fn sparse_candidates(grid: &VoxelGrid) -> Vec<[usize; 3]> {
    let Storage::Sparse(s) = &grid.storage else {
        unreachable!("called on sparse grids only")
    };
    let res = grid.resolution();
    let last = s.levels.len() - 1;
    if s.levels[last] != res {
        // Refinement stopped early: no marked cell anywhere.
        return Vec::new();
    }
    if last == 0 {
        let mut all = Vec::with_capacity(res.pow(3));
        for k in 0..res {
            for j in 0..res {
                for i in 0..res {
                    all.push([i, j, k]);
                }
            }
        }
        return all;
    }
    s.cells[last].dilated(1).iter().collect()
}

/// Extracts the `iso` level set as a triangle mesh in world coordinates.
///
/// Vertices are shared between neighbouring cells (one per lattice edge) and
/// numbered in cell order, so the output is deterministic. Faces are wound
/// so that their normals point toward increasing SDF. Sparse grids read
/// unevaluated corners through coarse interpolation.
pub fn marching_cubes(grid: &VoxelGrid, iso: f64) -> TriangleMesh {
    let res = grid.resolution();
    let chunks: Vec<CellTriangles> = match grid.storage {
        Storage::Dense(_) => (0..res)
            .into_par_iter()
            .map(|k| {
                let cells = (0..res).flat_map(move |j| (0..res).map(move |i| [i, j, k]));
                run_cells(grid, iso, cells)
            })
            .collect(),
        Storage::Sparse(_) => {
            let cells = sparse_candidates(grid);
            cells
                .par_chunks(4096)
                .map(|chunk| run_cells(grid, iso, chunk.iter().copied()))
                .collect()
        }
    };

    let mut index: HashMap<EdgeKey, u32> = HashMap::default();
    let mut position: HashMap<EdgeKey, Vec3> = HashMap::default();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for chunk in chunks {
        for (key, p) in chunk.positions {
            position.entry(key).or_insert(p);
        }
        for tri in chunk.tris {
            let mut f = [0u32; 3];
            for (slot, key) in f.iter_mut().zip(tri.iter()) {
                *slot = *index.entry(*key).or_insert_with(|| {
                    vertices.push(position[key]);
                    (vertices.len() - 1) as u32
                });
            }
            faces.push(f);
        }
    }
    TriangleMesh::new(vertices, faces).expect("marching cubes produces valid indices")
}
