//! Marching-cubes isosurface extraction.
//!
//! Every one of the 256 corner-sign configurations is triangulated from the
//! same face rules: on each cube face the crossing points are paired into
//! oriented segments (ambiguous faces resolved with the asymptotic decider),
//! segments are chained into loops, and each loop is closed with a fan.
//! Two cubes sharing a face see the same four samples, so they pair the
//! crossings identically and the surface is watertight by construction.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Aabb;
use crate::mesh::sdf::Grid;
use crate::mesh::{remove_small_components, TriMesh};
use crate::tolerance::{EDGE_T_CLAMP, ISO_TIE_NUDGE};
use crate::volume::VoxelVolume;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsoError {
    #[error("volume dimensions {0:?} are too small for marching cubes (need ≥ 2 per axis)")]
    DegenerateVolume([usize; 3]),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsoParams {
    pub iso_hu: f64,
    /// Connected components enclosing less than this are dropped.
    pub min_component_volume_mm3: f64,
}

impl IsoParams {
    pub const DEFAULT_SKIN_HU: f64 = -300.0;
    pub const DEFAULT_BONE_HU: f64 = 250.0;
    pub const DEFAULT_MIN_COMPONENT_MM3: f64 = 10.0;

    pub fn skin() -> Self {
        IsoParams {
            iso_hu: Self::DEFAULT_SKIN_HU,
            min_component_volume_mm3: Self::DEFAULT_MIN_COMPONENT_MM3,
        }
    }

    pub fn bone() -> Self {
        IsoParams {
            iso_hu: Self::DEFAULT_BONE_HU,
            min_component_volume_mm3: Self::DEFAULT_MIN_COMPONENT_MM3,
        }
    }
}

/// Extracts the `iso_hu` surface of a CT volume. Normals point toward lower HU.
pub fn extract_isosurface(volume: &VoxelVolume, params: &IsoParams) -> Result<TriMesh, IsoError> {
    let slabs = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    extract_isosurface_slabs(volume, params, slabs)
}

/// As [`extract_isosurface`], splitting the work into `slabs` z-ranges.
/// The result does not depend on `slabs`.
pub fn extract_isosurface_slabs(
    volume: &VoxelVolume,
    params: &IsoParams,
    slabs: usize,
) -> Result<TriMesh, IsoError> {
    let dims = volume.dims();
    if dims.iter().any(|&d| d < 2) {
        return Err(IsoError::DegenerateVolume(dims));
    }
    if !(params.min_component_volume_mm3 >= 0.0) {
        return Err(IsoError::InvalidParameter(
            "min component volume must be ≥ 0".into(),
        ));
    }
    let samples = volume.samples();
    let (lo, hi) = samples
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let iso = params.iso_hu;
    if !(iso > lo as f64 && iso < hi as f64) {
        return Ok(TriMesh::empty());
    }
    let values: Vec<f64> = samples.iter().map(|&v| nudge(v as f64 - iso)).collect();
    let spacing = volume.spacing();
    let origin = volume.origin();
    let orient = *volume.orientation();
    let to_world = move |i: f64, j: f64, k: f64| {
        origin + orient * Vector3::new(i * spacing[0], j * spacing[1], k * spacing[2])
    };
    let flip = orient.determinant() < 0.0;
    let mesh = march(&values, dims, &to_world, flip, slabs);
    Ok(remove_small_components(&mesh, params.min_component_volume_mm3))
}

/// Meshes the zero level set of a signed distance field (negative inside)
/// sampled on a grid spanning `bounds` at `voxel` spacing. This is
/// [`extract_isosurface`] applied at iso 0 to the negated samples.
pub fn mesh_from_analytic_sdf(
    field: impl Fn(&Point3<f64>) -> f64,
    bounds: &Aabb,
    voxel: f64,
) -> Result<TriMesh, IsoError> {
    if !(voxel > 0.0) {
        return Err(IsoError::InvalidParameter("voxel must be > 0".into()));
    }
    let e = bounds.extent();
    if bounds.is_empty() || e.iter().any(|&v| !(v > 0.0)) {
        return Err(IsoError::InvalidParameter("bounds are degenerate".into()));
    }
    let dims = [0, 1, 2].map(|a| (e[a] / voxel).ceil() as usize + 1);
    let grid = Grid::new(bounds.min, voxel, dims);
    let values: Vec<f64> = (0..grid.len()).map(|n| field(&grid.point_at(n))).collect();
    Ok(mesh_sdf_samples(&values, &grid))
}

/// Meshes SDF samples (negative inside) laid out on `grid`.
pub(crate) fn mesh_sdf_samples(sdf: &[f64], grid: &Grid) -> TriMesh {
    let values: Vec<f64> = sdf.iter().map(|&v| nudge(-v)).collect();
    let (o, h) = (grid.origin, grid.spacing);
    let to_world = move |i: f64, j: f64, k: f64| Point3::new(o.x + i * h, o.y + j * h, o.z + k * h);
    march(&values, grid.dims, &to_world, false, 1)
}

fn nudge(f: f64) -> f64 {
    if f == 0.0 {
        ISO_TIE_NUDGE
    } else {
        f
    }
}

/// Corner ids `x + 2y + 4z`, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum VKey {
    Edge(u64),
    Centre(u64),
}

struct SlabOut {
    keys: Vec<VKey>,
    positions: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
}

/// Core extraction over values `f` where the solid is `f > 0`.
pub(crate) fn march(
    f: &[f64],
    dims: [usize; 3],
    to_world: &(dyn Fn(f64, f64, f64) -> Point3<f64> + Sync),
    flip: bool,
    slabs: usize,
) -> TriMesh {
    let [nx, ny, nz] = dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return TriMesh::empty();
    }
    let cells_z = nz - 1;
    let slabs = slabs.clamp(1, cells_z);
    let bounds: Vec<(usize, usize)> = (0..slabs)
        .map(|s| (s * cells_z / slabs, (s + 1) * cells_z / slabs))
        .collect();
    let outs: Vec<SlabOut> = if slabs == 1 {
        vec![march_slab(f, dims, to_world, 0, cells_z)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = bounds
                .iter()
                .map(|&(k0, k1)| scope.spawn(move || march_slab(f, dims, to_world, k0, k1)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("slab worker")).collect()
        })
    };
    let mut index: HashMap<VKey, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for out in outs {
        let local: Vec<u32> = out
            .keys
            .iter()
            .zip(&out.positions)
            .map(|(k, p)| {
                *index.entry(*k).or_insert_with(|| {
                    vertices.push(*p);
                    (vertices.len() - 1) as u32
                })
            })
            .collect();
        for t in out.triangles {
            let g = [local[t[0] as usize], local[t[1] as usize], local[t[2] as usize]];
            triangles.push(if flip { [g[0], g[2], g[1]] } else { g });
        }
    }
    TriMesh::new(vertices, triangles).expect("marching cubes output is indexed correctly")
}

fn march_slab(
    f: &[f64],
    dims: [usize; 3],
    to_world: &(dyn Fn(f64, f64, f64) -> Point3<f64> + Sync),
    k0: usize,
    k1: usize,
) -> SlabOut {
    let [nx, ny, _] = dims;
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let mut out = SlabOut {
        keys: Vec::new(),
        positions: Vec::new(),
        triangles: Vec::new(),
    };
    let mut local: HashMap<VKey, u32> = HashMap::new();
    let mut vertex = |key: VKey, pos: &dyn Fn() -> Point3<f64>, out: &mut SlabOut| -> u32 {
        *local.entry(key).or_insert_with(|| {
            out.keys.push(key);
            out.positions.push(pos());
            (out.keys.len() - 1) as u32
        })
    };
    let corner_offset = |c: usize| (c & 1, (c >> 1) & 1, (c >> 2) & 1);
    for k in k0..k1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut v = [0.0; 8];
                let mut mask = 0u8;
                for (c, val) in v.iter_mut().enumerate() {
                    let (dx, dy, dz) = corner_offset(c);
                    *val = f[idx(i + dx, j + dy, k + dz)];
                    if *val > 0.0 {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 0xff {
                    continue;
                }
                // crossing on cube edge (p, q) → (global edge key, local corners)
                let edge_key = |p: usize, q: usize| -> (u64, usize, usize) {
                    let lo = p.min(q);
                    let hi = p.max(q);
                    let axis = match hi - lo {
                        1 => 0,
                        2 => 1,
                        _ => 2,
                    };
                    let (dx, dy, dz) = corner_offset(lo);
                    let g = idx(i + dx, j + dy, k + dz) as u64;
                    (g * 3 + axis as u64, lo, hi)
                };
                let mut seg_from: [u64; 12] = [0; 12];
                let mut seg_to: [u64; 12] = [0; 12];
                let mut ends: [(usize, usize); 24] = [(0, 0); 24];
                let mut end_keys: [u64; 24] = [0; 24];
                let mut n_ends = 0;
                let mut n_seg = 0;
                for face in FACES {
                    let fv = face.map(|c| v[c]);
                    let mut entering = [0usize; 2];
                    let mut leaving = [0usize; 2];
                    let (mut ne, mut nl) = (0, 0);
                    for e in 0..4 {
                        let a = fv[e] > 0.0;
                        let b = fv[(e + 1) % 4] > 0.0;
                        if a != b {
                            if b {
                                entering[ne] = e;
                                ne += 1;
                            } else {
                                leaving[nl] = e;
                                nl += 1;
                            }
                        }
                    }
                    let mut push = |from_e: usize, to_e: usize| {
                        for (slot, e) in [(0, from_e), (1, to_e)] {
                            let (key, lo, hi) = edge_key(face[e], face[(e + 1) % 4]);
                            if slot == 0 {
                                seg_from[n_seg] = key;
                            } else {
                                seg_to[n_seg] = key;
                            }
                            if !end_keys[..n_ends].contains(&key) {
                                end_keys[n_ends] = key;
                                ends[n_ends] = (lo, hi);
                                n_ends += 1;
                            }
                        }
                        n_seg += 1;
                    };
                    match ne {
                        0 => {}
                        1 => push(entering[0], leaving[0]),
                        _ => {
                            let saddle = (fv[0] * fv[2] - fv[1] * fv[3])
                                / (fv[0] + fv[2] - fv[1] - fv[3]);
                            let joined = saddle > 0.0;
                            for &en in &entering[..2] {
                                let target = if joined { (en + 3) % 4 } else { (en + 1) % 4 };
                                push(en, target);
                            }
                        }
                    }
                }
                // chain segments into loops
                let mut used = [false; 12];
                for start in 0..n_seg {
                    if used[start] {
                        continue;
                    }
                    let mut loop_keys: Vec<u64> = Vec::with_capacity(8);
                    let mut s = start;
                    loop {
                        used[s] = true;
                        loop_keys.push(seg_from[s]);
                        let next_key = seg_to[s];
                        match (0..n_seg).find(|&t| !used[t] && seg_from[t] == next_key) {
                            Some(t) => s = t,
                            None => break,
                        }
                    }
                    let ids: Vec<u32> = loop_keys
                        .iter()
                        .map(|&key| {
                            let e = end_keys[..n_ends].iter().position(|&x| x == key).unwrap();
                            let (lo, hi) = ends[e];
                            let pos = || {
                                let (f0, f1) = (v[lo], v[hi]);
                                let t = (f0 / (f0 - f1)).clamp(EDGE_T_CLAMP, 1.0 - EDGE_T_CLAMP);
                                let (ax, ay, az) = corner_offset(lo);
                                let (bx, by, bz) = corner_offset(hi);
                                let lerp = |a: usize, b: usize| a as f64 + (b as f64 - a as f64) * t;
                                to_world(
                                    i as f64 + lerp(ax, bx),
                                    j as f64 + lerp(ay, by),
                                    k as f64 + lerp(az, bz),
                                )
                            };
                            vertex(VKey::Edge(key), &pos, &mut out)
                        })
                        .collect();
                    match ids.len() {
                        0..=2 => {}
                        3 => out.triangles.push([ids[0], ids[1], ids[2]]),
                        n => {
                            let cell = idx(i, j, k) as u64;
                            let key = VKey::Centre(cell * 16 + start as u64);
                            let centre = {
                                let s = ids.iter().fold(Vector3::zeros(), |acc, &id| {
                                    acc + out.positions[id as usize].coords
                                });
                                Point3::from(s / n as f64)
                            };
                            let c = vertex(key, &|| centre, &mut out);
                            for w in 0..n {
                                out.triangles.push([c, ids[w], ids[(w + 1) % n]]);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
