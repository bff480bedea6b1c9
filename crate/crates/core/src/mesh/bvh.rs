//! Bounding-volume hierarchy over mesh triangles.

use nalgebra::{Point3, Vector3};

use super::TriMesh;
use crate::geom::Aabb;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `start..start+count` into `order`; inner: children at `left`, `left+1`.
    start: u32,
    count: u32,
    left: u32,
}

/// Triangle BVH with closest-point and ray queries.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Point3<f64>; 3]>,
}

/// Closest point on a mesh.
#[derive(Debug, Clone, Copy)]
pub struct Nearest {
    pub distance_squared: f64,
    pub triangle: usize,
    pub point: Point3<f64>,
}

impl Bvh {
    pub fn new(mesh: &TriMesh) -> Self {
        let tris: Vec<[Point3<f64>; 3]> = (0..mesh.len()).map(|i| mesh.triangle(i)).collect();
        let centroids: Vec<Point3<f64>> = tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        if !tris.is_empty() {
            nodes.push(Node {
                bounds: Aabb::empty(),
                start: 0,
                count: tris.len() as u32,
                left: 0,
            });
            let mut stack = vec![0usize];
            while let Some(ni) = stack.pop() {
                let (start, count) = (nodes[ni].start as usize, nodes[ni].count as usize);
                let slice = &mut order[start..start + count];
                let mut b = Aabb::empty();
                let mut cb = Aabb::empty();
                for &t in slice.iter() {
                    for p in &tris[t as usize] {
                        b.grow(p);
                    }
                    cb.grow(&centroids[t as usize]);
                }
                nodes[ni].bounds = b;
                if count <= LEAF_SIZE {
                    continue;
                }
                let e = cb.extent();
                let axis = if e.x >= e.y && e.x >= e.z {
                    0
                } else if e.y >= e.z {
                    1
                } else {
                    2
                };
                let mid = count / 2;
                slice.select_nth_unstable_by(mid, |&a, &b| {
                    centroids[a as usize][axis]
                        .total_cmp(&centroids[b as usize][axis])
                        .then(a.cmp(&b))
                });
                let left = nodes.len();
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    start: start as u32,
                    count: mid as u32,
                    left: 0,
                });
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    start: (start + mid) as u32,
                    count: (count - mid) as u32,
                    left: 0,
                });
                nodes[ni].count = 0;
                nodes[ni].left = left as u32;
                stack.push(left);
                stack.push(left + 1);
            }
        }
        Bvh { nodes, order, tris }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn triangle(&self, i: usize) -> &[Point3<f64>; 3] {
        &self.tris[i]
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(|n| n.bounds).unwrap_or_else(Aabb::empty)
    }

    /// Closest triangle within `max_distance`; ties go to the lower triangle index.
    pub fn nearest(&self, p: &Point3<f64>, max_distance: f64) -> Option<Nearest> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best_d2 = max_distance * max_distance;
        let mut best: Option<Nearest> = None;
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds.distance_squared(p) > best_d2 {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let tri = &self.tris[t as usize];
                    let q = closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2]);
                    let d2 = (q - p).norm_squared();
                    let better = match &best {
                        None => d2 <= best_d2,
                        Some(b) => d2 < b.distance_squared || (d2 == b.distance_squared && (t as usize) < b.triangle),
                    };
                    if better {
                        best_d2 = d2;
                        best = Some(Nearest {
                            distance_squared: d2,
                            triangle: t as usize,
                            point: q,
                        });
                    }
                }
            } else {
                let (l, r) = (node.left as usize, node.left as usize + 1);
                let dl = self.nodes[l].bounds.distance_squared(p);
                let dr = self.nodes[r].bounds.distance_squared(p);
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    /// Visits every triangle hit by the ray `origin + t·dir`, `t ∈ (t_min, t_max)`.
    pub fn ray_hits(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
        t_max: f64,
        mut visit: impl FnMut(f64, usize),
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !ray_box(origin, &inv, &node.bounds, t_min, t_max) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    let tri = &self.tris[t as usize];
                    if let Some(s) = ray_triangle(origin, dir, tri) {
                        if s > t_min && s < t_max {
                            visit(s, t as usize);
                        }
                    }
                }
            } else {
                stack.push(node.left as usize);
                stack.push(node.left as usize + 1);
            }
        }
    }

    /// First hit along the ray, skipping triangles rejected by `skip`.
    pub fn first_hit(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        t_max: f64,
        skip: impl Fn(usize) -> bool,
    ) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        self.ray_hits(origin, dir, 0.0, t_max, |s, t| {
            if skip(t) {
                return;
            }
            if best.map_or(true, |(bs, bt)| s < bs || (s == bs && t < bt)) {
                best = Some((s, t));
            }
        });
        best
    }

    /// Indices of triangles whose bounds overlap `b`.
    pub fn query_box(&self, b: &Aabb, mut visit: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.bounds.overlaps(b) {
                continue;
            }
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    visit(t as usize);
                }
            } else {
                stack.push(node.left as usize);
                stack.push(node.left as usize + 1);
            }
        }
    }
}

fn ray_box(o: &Point3<f64>, inv: &Vector3<f64>, b: &Aabb, t_min: f64, t_max: f64) -> bool {
    let mut lo = t_min;
    let mut hi = t_max;
    for i in 0..3 {
        let mut t0 = (b.min[i] - o[i]) * inv[i];
        let mut t1 = (b.max[i] - o[i]) * inv[i];
        if t0.is_nan() || t1.is_nan() {
            // ray parallel to and on a slab boundary
            if o[i] < b.min[i] || o[i] > b.max[i] {
                return false;
            }
            continue;
        }
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        lo = lo.max(t0);
        hi = hi.min(t1);
        if lo > hi {
            return false;
        }
    }
    true
}

/// Möller–Trumbore; returns the ray parameter of the hit.
pub fn ray_triangle(o: &Point3<f64>, d: &Vector3<f64>, tri: &[Point3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    // parallel rays give a det of pure rounding noise
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
    Some(e2.dot(&q) * inv)
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{icosphere, unit_cube};

    #[test]
    fn nearest_matches_brute_force() {
        let s = icosphere(Point3::new(0.5, 0.0, 0.0), 3.0, 2);
        let bvh = Bvh::new(&s);
        for k in 0..50 {
            let f = k as f64;
            let p = Point3::new((f * 0.37).sin() * 5.0, (f * 0.71).cos() * 5.0, f * 0.1 - 2.5);
            let brute = (0..s.len())
                .map(|i| {
                    let [a, b, c] = s.triangle(i);
                    (closest_point_on_triangle(&p, &a, &b, &c) - p).norm_squared()
                })
                .fold(f64::INFINITY, f64::min);
            let got = bvh.nearest(&p, f64::INFINITY).unwrap();
            assert!((got.distance_squared - brute).abs() < 1e-12);
        }
        assert!(bvh.nearest(&Point3::new(100.0, 0.0, 0.0), 1.0).is_none());
    }

    #[test]
    fn ray_through_cube_hits_twice() {
        let c = unit_cube();
        let bvh = Bvh::new(&c);
        let mut hits = Vec::new();
        bvh.ray_hits(
            &Point3::new(-1.0, 0.3, 0.6),
            &Vector3::x(),
            0.0,
            f64::INFINITY,
            |t, _| hits.push(t),
        );
        hits.sort_by(f64::total_cmp);
        assert_eq!(hits.len(), 2);
        assert!((hits[0] - 1.0).abs() < 1e-12 && (hits[1] - 2.0).abs() < 1e-12);
    }
}
