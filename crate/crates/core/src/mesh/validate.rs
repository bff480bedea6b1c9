//! Printability checks.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::bvh::Bvh;
use super::{TriMesh, UnionFind};
use crate::tolerance::PRINT_ACCURACY_MM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub triangles: usize,
    pub closed: bool,
    pub manifold: bool,
    pub consistent_winding: bool,
    pub open_edges: usize,
    pub non_manifold_edges: usize,
    pub non_manifold_vertices: usize,
    pub self_intersections: usize,
    /// Smallest inward wall thickness found, mm.
    pub min_feature_mm: f64,
    pub min_feature_ok: bool,
}

impl ValidationReport {
    pub fn is_printable(&self) -> bool {
        self.closed
            && self.manifold
            && self.consistent_winding
            && self.self_intersections == 0
            && self.min_feature_ok
    }
}

pub fn validate_mesh(mesh: &TriMesh) -> ValidationReport {
    let tris = mesh.triangles();
    let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(tris.len() * 3);
    for t in tris {
        for e in 0..3 {
            *directed.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
        }
    }
    let mut undirected: HashMap<(u32, u32), u32> = HashMap::with_capacity(directed.len());
    for (&(a, b), &n) in &directed {
        *undirected.entry((a.min(b), a.max(b))).or_default() += n;
    }
    let open_edges = undirected.values().filter(|&&n| n == 1).count();
    let non_manifold_edges = undirected.values().filter(|&&n| n > 2).count();
    let consistent_winding = directed.values().all(|&n| n == 1);
    let non_manifold_vertices = count_non_manifold_vertices(mesh);
    let closed = !tris.is_empty() && open_edges == 0 && non_manifold_edges == 0;
    let manifold = non_manifold_edges == 0 && non_manifold_vertices == 0;
    let self_intersections = count_self_intersections(mesh);
    let min_feature_mm = min_feature_size(mesh);
    ValidationReport {
        triangles: tris.len(),
        closed,
        manifold,
        consistent_winding,
        open_edges,
        non_manifold_edges,
        non_manifold_vertices,
        self_intersections,
        min_feature_mm,
        min_feature_ok: min_feature_mm >= PRINT_ACCURACY_MM,
    }
}

/// Vertices whose incident triangles do not form a single edge-connected fan.
fn count_non_manifold_vertices(mesh: &TriMesh) -> usize {
    let tris = mesh.triangles();
    let mut incident: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertices().len()];
    for (i, t) in tris.iter().enumerate() {
        for &v in t {
            incident[v as usize].push(i as u32);
        }
    }
    let mut bad = 0;
    for (v, fan) in incident.iter().enumerate() {
        if fan.len() < 2 {
            continue;
        }
        let mut uf = UnionFind::new(fan.len());
        // neighbour vertex → first fan slot that uses it
        let mut seen: HashMap<u32, usize> = HashMap::new();
        for (slot, &t) in fan.iter().enumerate() {
            for &w in &tris[t as usize] {
                if w as usize == v {
                    continue;
                }
                match seen.get(&w) {
                    Some(&other) => uf.union(slot, other),
                    None => {
                        seen.insert(w, slot);
                    }
                }
            }
        }
        let root = uf.find(0);
        if (1..fan.len()).any(|s| uf.find(s) != root) {
            bad += 1;
        }
    }
    bad
}

/// Endpoints closer than this to a triangle's plane count as lying in it,
/// which absorbs rounding on coplanar neighbours.
const COPLANAR_MM: f64 = 1e-9;

/// Proper crossing of segment `ab` through triangle `tri`; coplanar and
/// touching configurations are not reported.
fn segment_hits_triangle(a: &Point3<f64>, b: &Point3<f64>, tri: &[Point3<f64>; 3]) -> bool {
    let [p, q, r] = tri;
    let n = (q - p).cross(&(r - p));
    let len = n.norm();
    if len == 0.0 {
        return false;
    }
    let n = n / len;
    let (da, db) = (n.dot(&(a - p)), n.dot(&(b - p)));
    if da.abs() <= COPLANAR_MM || db.abs() <= COPLANAR_MM || (da > 0.0) == (db > 0.0) {
        return false;
    }
    let x = a + (b - a) * (da / (da - db));
    [(p, q), (q, r), (r, p)].iter().all(|(u, v)| (*v - *u).cross(&(x - *u)).dot(&n) >= 0.0)
}

fn triangles_intersect(p: &[Point3<f64>; 3], q: &[Point3<f64>; 3]) -> bool {
    (0..3).any(|e| segment_hits_triangle(&p[e], &p[(e + 1) % 3], q))
        || (0..3).any(|e| segment_hits_triangle(&q[e], &q[(e + 1) % 3], p))
}

fn par_chunks<T: Send>(n: usize, work: &(dyn Fn(std::ops::Range<usize>) -> T + Sync)) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    let threads = std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1).min(n);
    let per = n.div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|c| {
                let r = (c * per).min(n)..((c + 1) * per).min(n);
                s.spawn(move || work(r))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker")).collect()
    })
}

/// Number of triangle pairs that share no vertex yet intersect.
pub fn count_self_intersections(mesh: &TriMesh) -> usize {
    self_intersecting_pairs(mesh).len()
}

/// Triangle pairs `(i, j)`, `i < j`, that share no vertex yet intersect.
pub fn self_intersecting_pairs(mesh: &TriMesh) -> Vec<(usize, usize)> {
    let bvh = Bvh::new(mesh);
    let tris = mesh.triangles();
    par_chunks(tris.len(), &|range| {
        let mut pairs = Vec::new();
        for i in range {
            let ti = tris[i];
            let pi = mesh.triangle(i);
            let b = crate::geom::Aabb::from_points(pi.iter());
            bvh.query_box(&b, |j| {
                if j <= i {
                    return;
                }
                let tj = tris[j];
                if ti.iter().any(|v| tj.contains(v)) {
                    return;
                }
                if triangles_intersect(&pi, bvh.triangle(j)) {
                    pairs.push((i, j));
                }
            });
        }
        pairs.sort_unstable();
        pairs
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Smallest wall thickness: the shortest inward ray from a triangle centroid
/// to the far side of the solid, ignoring the triangle's 1-ring.
pub fn min_feature_size(mesh: &TriMesh) -> f64 {
    if mesh.is_empty() {
        return f64::INFINITY;
    }
    let bvh = Bvh::new(mesh);
    let tris = mesh.triangles();
    par_chunks(tris.len(), &|range| {
        let mut best = f64::INFINITY;
        for i in range {
            let n = mesh.triangle_normal(i);
            if n.norm_squared() == 0.0 {
                continue;
            }
            let p = mesh.triangle(i);
            let c = Point3::from((p[0].coords + p[1].coords + p[2].coords) / 3.0);
            let dir: Vector3<f64> = -n;
            let ti = tris[i];
            let hit = bvh.first_hit(&c, &dir, best, |j| {
                j == i || tris[j].iter().any(|v| ti.contains(v)) || mesh.triangle_normal(j).dot(&dir) <= 0.0
            });
            if let Some((t, _)) = hit {
                best = best.min(t);
            }
        }
        best
    })
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{aabb_mesh, icosphere};

    #[test]
    fn closed_box_is_printable() {
        let r = validate_mesh(&aabb_mesh(Point3::origin(), Point3::new(2.0, 1.0, 0.5)));
        assert!(r.is_printable(), "{r:?}");
        assert!((r.min_feature_mm - 0.5).abs() < 1e-12);
    }

    #[test]
    fn thin_plate_fails_feature_check() {
        let r = validate_mesh(&aabb_mesh(Point3::origin(), Point3::new(5.0, 5.0, 0.05)));
        assert!(r.closed && !r.min_feature_ok);
    }

    #[test]
    fn overlapping_shells_self_intersect() {
        let a = icosphere(Point3::origin(), 2.0, 1);
        let b = icosphere(Point3::new(1.0, 0.0, 0.0), 2.0, 1);
        let r = validate_mesh(&TriMesh::merged(&[&a, &b]));
        assert!(r.closed && r.self_intersections > 0);
        assert_eq!(validate_mesh(&a).self_intersections, 0);
    }

    #[test]
    fn coplanar_neighbours_in_a_tilted_box_do_not_intersect() {
        use crate::geom::RigidTransform;
        use crate::mesh::sdf::Sdf;
        use crate::mesh::transform_mesh;
        use nalgebra::Vector3;
        // a meshed box has many coplanar neighbours; tilting adds rounding noise
        let b = Sdf::Cylinder { base: Point3::origin(), axis: Vector3::z(), length: 6.0, radius: 2.0 };
        let mesh = Sdf::Intersection(vec![b, Sdf::OrientedBox {
            center: Point3::new(0.0, 0.0, 3.0),
            axes: nalgebra::Matrix3::identity(),
            half: Vector3::new(1.5, 1.5, 2.0),
        }])
        .to_mesh(0.25)
        .unwrap();
        let t = RigidTransform::about_axis(&Point3::new(0.3, 0.1, 0.2), &Vector3::new(1.0, 2.0, 3.0), 0.7);
        let tilted = transform_mesh(&mesh, &t);
        assert_eq!(count_self_intersections(&mesh), 0);
        assert_eq!(count_self_intersections(&tilted), 0);
    }

    #[test]
    fn open_and_flipped_faces_are_reported() {
        let c = aabb_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        let mut t = c.triangles().to_vec();
        t.pop();
        let open = TriMesh::new(c.vertices().to_vec(), t.clone()).unwrap();
        let r = validate_mesh(&open);
        assert!(!r.closed && r.open_edges == 3);
        let mut flipped = c.triangles().to_vec();
        flipped[0] = [flipped[0][0], flipped[0][2], flipped[0][1]];
        let r = validate_mesh(&TriMesh::new(c.vertices().to_vec(), flipped).unwrap());
        assert!(r.closed && !r.consistent_winding);
    }

    #[test]
    fn bowtie_vertex_is_non_manifold() {
        // two tetrahedra sharing a single vertex
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
            Point3::new(0.0, 0.0, -1.0),
        ];
        let t = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3], [0, 5, 4], [0, 4, 6], [0, 6, 5], [4, 5, 6]];
        let r = validate_mesh(&TriMesh::new(v, t).unwrap());
        assert!(r.closed && !r.manifold && r.non_manifold_vertices == 1);
    }
}
