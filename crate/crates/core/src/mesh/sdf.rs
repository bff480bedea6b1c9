//! Signed distance fields: analytic primitives, meshes, and CSG over them.
//!
//! Negative inside. Mesh fields are exact within a band around the surface
//! and clamped to ±band outside it, which is all the mesher needs.

use std::sync::Arc;

use nalgebra::{Matrix3, Point3, Vector3};

use super::bvh::Bvh;
use super::{MeshError, TriMesh};
use crate::geom::Aabb;
use crate::isosurface::mesh_sdf_samples;

/// Regular cubic lattice, x fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub origin: Point3<f64>,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl Grid {
    pub fn new(origin: Point3<f64>, spacing: f64, dims: [usize; 3]) -> Self {
        Grid {
            origin,
            spacing,
            dims,
        }
    }

    /// Lattice-aligned grid (origin on a multiple of `spacing`) covering
    /// `bounds` grown by `pad`.
    pub fn covering(bounds: &Aabb, spacing: f64, pad: f64) -> Self {
        let lo = bounds.min.coords - Vector3::repeat(pad);
        let hi = bounds.max.coords + Vector3::repeat(pad);
        let origin = lo.map(|v| (v / spacing).floor() * spacing);
        let dims = [0, 1, 2].map(|a| ((hi[a] - origin[a]) / spacing).ceil() as usize + 1);
        Grid::new(Point3::from(origin), spacing, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        let h = self.spacing;
        Point3::new(
            self.origin.x + i as f64 * h,
            self.origin.y + j as f64 * h,
            self.origin.z + k as f64 * h,
        )
    }

    pub fn point_at(&self, n: usize) -> Point3<f64> {
        let i = n % self.dims[0];
        let j = (n / self.dims[0]) % self.dims[1];
        let k = n / (self.dims[0] * self.dims[1]);
        self.point(i, j, k)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }
}

/// Fills `out` (one value per grid point) row by row across threads.
fn par_rows(grid: &Grid, out: &mut [f64], fill: &(dyn Fn(usize, usize, &mut [f64]) + Sync)) {
    let nx = grid.dims[0];
    let rows = grid.dims[1] * grid.dims[2];
    if rows == 0 || nx == 0 {
        return;
    }
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(rows);
    let per = rows.div_ceil(threads);
    let ny = grid.dims[1];
    std::thread::scope(|s| {
        for (c, chunk) in out.chunks_mut(per * nx).enumerate() {
            s.spawn(move || {
                for (r, row) in chunk.chunks_mut(nx).enumerate() {
                    let g = c * per + r;
                    fill(g % ny, g / ny, row);
                }
            });
        }
    });
}

/// Ray/triangle hit with barycentrics, for parity counting.
fn ray_hit_bary(o: &Point3<f64>, d: &Vector3<f64>, tri: &[Point3<f64>; 3]) -> Option<(f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() <= 1e-12 * e1.norm() * e2.norm() * d.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let margin = u.min(v).min(1.0 - u - v);
    Some((e2.dot(&q) * inv, margin))
}

/// Distance field of a closed triangle mesh.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    mesh: TriMesh,
    bvh: Bvh,
}

/// Row offsets (in units of grid spacing) tried in turn when a ray grazes an edge.
const JITTER: [(f64, f64); 5] = [
    (1.234_567e-6, 2.718_281e-6),
    (-3.141_592e-6, 1.414_213e-6),
    (2.236_067e-6, -1.732_050e-6),
    (-1.618_033e-6, -2.645_751e-6),
    (4.123_105e-6, 3.316_624e-6),
];
const GRAZE: f64 = 1e-9;

impl MeshSdf {
    pub fn new(mesh: TriMesh) -> Result<Self, MeshError> {
        mesh.require_closed()?;
        let bvh = Bvh::new(&mesh);
        Ok(MeshSdf { mesh, bvh })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn bounds(&self) -> Aabb {
        self.mesh.bounds()
    }

    /// Sorted hit parameters of `o + t·d` over the whole line, or `None` if
    /// the ray grazes an edge or vertex.
    pub(crate) fn crossings(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<Vec<f64>> {
        let mut hits = Vec::new();
        let mut clean = true;
        // ray_hits reports t only; re-test with barycentrics to detect grazes
        let mut cands = Vec::new();
        self.bvh.ray_hits(o, d, f64::NEG_INFINITY, f64::INFINITY, |_, tri| cands.push(tri));
        for tri in cands {
            if let Some((t, margin)) = ray_hit_bary(o, d, self.bvh.triangle(tri)) {
                if margin < GRAZE {
                    clean = false;
                    break;
                }
                hits.push(t);
            }
        }
        if !clean || hits.len() % 2 == 1 {
            return None;
        }
        hits.sort_by(f64::total_cmp);
        Some(hits)
    }

    /// True if `p` is inside, by majority over three ray directions.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        if !self.bounds().contains(p) {
            return false;
        }
        let dirs = [
            Vector3::new(1.0, 0.000_123_4, 0.000_271_8),
            Vector3::new(-0.000_314_1, 1.0, 0.000_161_8),
            Vector3::new(0.000_141_4, -0.000_223_6, 1.0),
        ];
        let mut votes = 0;
        let mut counted = 0;
        for d in dirs {
            let mut n = 0usize;
            let mut graze = false;
            self.bvh.ray_hits(p, &d, 0.0, f64::INFINITY, |_, tri| {
                if let Some((_, m)) = ray_hit_bary(p, &d, self.bvh.triangle(tri)) {
                    if m < GRAZE {
                        graze = true;
                    }
                    n += 1;
                }
            });
            if graze {
                continue;
            }
            counted += 1;
            if n % 2 == 1 {
                votes += 1;
            }
        }
        counted > 0 && 2 * votes > counted
    }

    /// Signed distance at a single point.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let d = self
            .bvh
            .nearest(p, f64::INFINITY)
            .map(|n| n.distance_squared.sqrt())
            .unwrap_or(f64::INFINITY);
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// Samples on `grid`, exact where |d| < `band`, ±`band` elsewhere.
    pub fn sample(&self, grid: &Grid, band: f64) -> Vec<f64> {
        let mut out = vec![band; grid.len()];
        let mb = self.bounds();
        if mb.is_empty() {
            return out;
        }
        let zone = mb.inflated(band);
        let h = grid.spacing;
        par_rows(grid, &mut out, &|j, k, row| {
            let p0 = grid.point(0, j, k);
            if p0.y < zone.min.y || p0.y > zone.max.y || p0.z < zone.min.z || p0.z > zone.max.z {
                return;
            }
            let inside_row = p0.y >= mb.min.y && p0.y <= mb.max.y && p0.z >= mb.min.z && p0.z <= mb.max.z;
            let hits = if inside_row {
                let mut found = None;
                for (dy, dz) in JITTER {
                    let o = Point3::new(mb.min.x - 1.0, p0.y + dy * h, p0.z + dz * h);
                    if let Some(hs) = self.crossings(&o, &Vector3::x()) {
                        found = Some(hs.into_iter().map(|t| o.x + t).collect::<Vec<f64>>());
                        break;
                    }
                }
                found.unwrap_or_default()
            } else {
                Vec::new()
            };
            for (i, v) in row.iter_mut().enumerate() {
                let p = Point3::new(p0.x + i as f64 * h, p0.y, p0.z);
                let inside = hits.partition_point(|&x| x < p.x) % 2 == 1;
                let d = self
                    .bvh
                    .nearest(&p, band)
                    .map(|n| n.distance_squared.sqrt())
                    .unwrap_or(band);
                *v = if inside { -d } else { d };
            }
        });
        out
    }
}

/// Composable signed distance field.
#[derive(Debug, Clone)]
pub enum Sdf {
    Sphere { center: Point3<f64>, radius: f64 },
    Box(Aabb),
    /// Box with unit axes in the columns of `axes`.
    OrientedBox { center: Point3<f64>, axes: Matrix3<f64>, half: Vector3<f64> },
    Capsule { a: Point3<f64>, b: Point3<f64>, radius: f64 },
    /// Capped cylinder from `base` along unit `axis`.
    Cylinder { base: Point3<f64>, axis: Vector3<f64>, length: f64, radius: f64 },
    /// `n·(p − point)`: the solid is the side opposite `normal`.
    HalfSpace { point: Point3<f64>, normal: Vector3<f64> },
    Mesh(Arc<MeshSdf>),
    Union(Vec<Sdf>),
    Intersection(Vec<Sdf>),
    Difference(Box<Sdf>, Box<Sdf>),
    /// Grows the solid by the given distance (shrinks if negative).
    Offset(Box<Sdf>, f64),
}

fn box_distance(q: Vector3<f64>, half: &Vector3<f64>) -> f64 {
    let d = q.abs() - half;
    d.sup(&Vector3::zeros()).norm() + d.max().min(0.0)
}

impl Sdf {
    pub fn mesh(mesh: TriMesh) -> Result<Sdf, MeshError> {
        Ok(Sdf::Mesh(Arc::new(MeshSdf::new(mesh)?)))
    }

    pub fn difference(a: Sdf, b: Sdf) -> Sdf {
        Sdf::Difference(Box::new(a), Box::new(b))
    }

    pub fn offset(a: Sdf, d: f64) -> Sdf {
        Sdf::Offset(Box::new(a), d)
    }

    pub fn eval(&self, p: &Point3<f64>) -> f64 {
        match self {
            Sdf::Sphere { center, radius } => (p - center).norm() - radius,
            Sdf::Box(b) => box_distance(p - b.center(), &(b.extent() * 0.5)),
            Sdf::OrientedBox { center, axes, half } => box_distance(axes.transpose() * (p - center), half),
            Sdf::Capsule { a, b, radius } => {
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared().max(1e-300)).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm() - radius
            }
            Sdf::Cylinder { base, axis, length, radius } => {
                let v = p - base;
                let h = v.dot(axis);
                let r = (v - axis * h).norm();
                let dr = r - radius;
                let dh = (h - 0.5 * length).abs() - 0.5 * length;
                let outside = Vector3::new(dr.max(0.0), dh.max(0.0), 0.0).norm();
                outside + dr.max(dh).min(0.0)
            }
            Sdf::HalfSpace { point, normal } => normal.dot(&(p - point)),
            Sdf::Mesh(m) => m.distance(p),
            Sdf::Union(parts) => parts.iter().map(|s| s.eval(p)).fold(f64::INFINITY, f64::min),
            Sdf::Intersection(parts) => parts.iter().map(|s| s.eval(p)).fold(f64::NEG_INFINITY, f64::max),
            Sdf::Difference(a, b) => a.eval(p).max(-b.eval(p)),
            Sdf::Offset(a, d) => a.eval(p) - d,
        }
    }

    /// Conservative bounds of the solid; `None` if unbounded.
    pub fn bounds(&self) -> Option<Aabb> {
        match self {
            Sdf::Sphere { center, radius } => Some(Aabb::new(
                center - Vector3::repeat(*radius),
                center + Vector3::repeat(*radius),
            )),
            Sdf::Box(b) => Some(*b),
            Sdf::OrientedBox { center, axes, half } => {
                let r = axes.abs() * half;
                Some(Aabb::new(center - r, center + r))
            }
            Sdf::Capsule { a, b, radius } => Some(Aabb::from_points([a, b]).inflated(*radius)),
            Sdf::Cylinder { base, axis, length, radius } => {
                let top = base + axis * *length;
                Some(Aabb::from_points([base, &top]).inflated(*radius))
            }
            Sdf::HalfSpace { .. } => None,
            Sdf::Mesh(m) => Some(m.bounds()),
            Sdf::Union(parts) => parts
                .iter()
                .map(|s| s.bounds())
                .try_fold(Aabb::empty(), |acc, b| b.map(|b| acc.union(&b))),
            Sdf::Intersection(parts) => {
                let bounded: Vec<Aabb> = parts.iter().filter_map(|s| s.bounds()).collect();
                if bounded.is_empty() {
                    None
                } else {
                    Some(bounded.iter().skip(1).fold(bounded[0], |acc, b| acc.intersection(b)))
                }
            }
            Sdf::Difference(a, _) => a.bounds(),
            Sdf::Offset(a, d) => a.bounds().map(|b| if *d > 0.0 { b.inflated(*d) } else { b }),
        }
    }

    /// Samples the field on `grid`. Values are exact within `band` of the
    /// surface; farther away only their sign is meaningful.
    pub fn sample(&self, grid: &Grid, band: f64) -> Vec<f64> {
        match self {
            Sdf::Mesh(m) => m.sample(grid, band),
            Sdf::Union(parts) => combine(parts, grid, band, f64::INFINITY, f64::min),
            Sdf::Intersection(parts) => combine(parts, grid, band, f64::NEG_INFINITY, f64::max),
            Sdf::Difference(a, b) => {
                let mut va = a.sample(grid, band);
                let vb = b.sample(grid, band);
                for (x, y) in va.iter_mut().zip(vb) {
                    *x = x.max(-y);
                }
                va
            }
            Sdf::Offset(a, d) => {
                let mut v = a.sample(grid, band + d.abs());
                for x in &mut v {
                    *x -= d;
                }
                v
            }
            analytic => {
                let mut out = vec![0.0; grid.len()];
                par_rows(grid, &mut out, &|j, k, row| {
                    for (i, v) in row.iter_mut().enumerate() {
                        *v = analytic.eval(&grid.point(i, j, k));
                    }
                });
                out
            }
        }
    }

    /// Meshes the zero level set on `grid`.
    pub fn mesh_on(&self, grid: &Grid) -> TriMesh {
        let values = self.sample(grid, 3.0 * grid.spacing);
        mesh_sdf_samples(&values, grid)
    }

    /// Meshes the zero level set on a lattice-aligned grid at `voxel` spacing.
    pub fn to_mesh(&self, voxel: f64) -> Result<TriMesh, MeshError> {
        if !(voxel > 0.0) {
            return Err(MeshError::InvalidParameter("voxel must be > 0".into()));
        }
        let b = self
            .bounds()
            .ok_or_else(|| MeshError::InvalidParameter("cannot mesh an unbounded field".into()))?;
        if b.is_empty() {
            return Ok(TriMesh::empty());
        }
        Ok(self.mesh_on(&Grid::covering(&b, voxel, 2.0 * voxel)))
    }
}

fn combine(parts: &[Sdf], grid: &Grid, band: f64, init: f64, op: fn(f64, f64) -> f64) -> Vec<f64> {
    let mut acc = vec![init; grid.len()];
    for s in parts {
        let v = s.sample(grid, band);
        for (a, b) in acc.iter_mut().zip(v) {
            *a = op(*a, b);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{box_mesh, icosphere};
    use crate::mesh::signed_volume;
    use std::f64::consts::PI;

    #[test]
    fn covering_grid_is_lattice_aligned() {
        let g = Grid::covering(&Aabb::new(Point3::new(0.13, -1.01, 2.0), Point3::new(1.0, 1.0, 3.0)), 0.25, 0.5);
        for a in 0..3 {
            let r = g.origin[a] / 0.25;
            assert!((r - r.round()).abs() < 1e-9);
        }
        let far = g.point(g.dims[0] - 1, g.dims[1] - 1, g.dims[2] - 1);
        assert!(far.x >= 1.5 && far.y >= 1.5 && far.z >= 3.5);
        assert_eq!(g.point_at(g.index(2, 3, 1)), g.point(2, 3, 1));
    }

    #[test]
    fn mesh_field_matches_sphere() {
        let s = MeshSdf::new(icosphere(Point3::origin(), 5.0, 4)).unwrap();
        for p in [Point3::new(0.0, 0.0, 0.0), Point3::new(7.0, 1.0, 0.0), Point3::new(1.0, -2.0, 3.0)] {
            let exact = p.coords.norm() - 5.0;
            assert!((s.distance(&p) - exact).abs() < 0.05, "{p}");
        }
        let g = Grid::covering(&s.bounds(), 0.5, 1.0);
        let v = s.sample(&g, 1.0);
        for n in (0..g.len()).step_by(97) {
            let p = g.point_at(n);
            let exact = (p.coords.norm() - 5.0).clamp(-1.0, 1.0);
            assert!((v[n] - exact).abs() < 0.05, "{p}: {} vs {exact}", v[n]);
        }
    }

    #[test]
    fn row_sign_survives_lattice_aligned_vertices() {
        // box faces and edges sit exactly on grid rows
        let b = box_mesh(Point3::new(1.0, 1.0, 1.0), Vector3::new(1.0, 1.0, 1.0));
        let s = MeshSdf::new(b).unwrap();
        let g = Grid::new(Point3::new(-1.0, -1.0, -1.0), 0.5, [9, 9, 9]);
        let v = s.sample(&g, 2.0);
        let inside = v.iter().filter(|&&x| x < 0.0).count();
        // strictly interior lattice points of [0,2]^3 at 0.5 spacing: 3^3
        assert_eq!(inside, 27);
    }

    #[test]
    fn csg_volumes() {
        let a = Sdf::Sphere { center: Point3::origin(), radius: 5.0 };
        let cut = Sdf::Intersection(vec![a.clone(), Sdf::HalfSpace { point: Point3::origin(), normal: Vector3::z() }]);
        let m = cut.to_mesh(0.25).unwrap();
        let v = signed_volume(&m).unwrap();
        let exact = 2.0 / 3.0 * PI * 125.0;
        assert!(((v - exact) / exact).abs() < 0.02, "{v}");
        let grown = Sdf::offset(a.clone(), 1.0).to_mesh(0.25).unwrap();
        let exact = 4.0 / 3.0 * PI * 216.0;
        assert!(((signed_volume(&grown).unwrap() - exact) / exact).abs() < 0.02);
        assert!(Sdf::offset(a, -6.0).to_mesh(0.5).unwrap().is_empty());
    }

    #[test]
    fn primitive_distances() {
        let c = Sdf::Cylinder { base: Point3::origin(), axis: Vector3::z(), length: 4.0, radius: 1.0 };
        assert!((c.eval(&Point3::new(0.0, 0.0, 2.0)) + 1.0).abs() < 1e-12);
        assert!((c.eval(&Point3::new(3.0, 0.0, 2.0)) - 2.0).abs() < 1e-12);
        assert!((c.eval(&Point3::new(0.0, 0.0, 6.0)) - 2.0).abs() < 1e-12);
        let ob = Sdf::OrientedBox { center: Point3::origin(), axes: Matrix3::identity(), half: Vector3::new(1.0, 2.0, 3.0) };
        assert!((ob.eval(&Point3::new(0.0, 0.0, 4.0)) - 1.0).abs() < 1e-12);
        let cap = Sdf::Capsule { a: Point3::origin(), b: Point3::new(0.0, 10.0, 0.0), radius: 2.0 };
        assert!((cap.eval(&Point3::new(0.0, 13.0, 0.0)) - 1.0).abs() < 1e-12);
    }
}
