//! Exact polygon CSG on BSP trees, after Evan Wallace's csg.js.
//!
//! Output polygons are welded, T-junctions are split, and each convex polygon
//! is triangulated so the result can be checked for closedness.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::TriMesh;
use crate::tolerance::{BSP_EPSILON, WELD_EPSILON};

#[derive(Debug, Clone)]
struct BspPlane {
    normal: Vector3<f64>,
    w: f64,
}

#[derive(Debug, Clone)]
struct Polygon {
    vertices: Vec<Point3<f64>>,
    plane: BspPlane,
}

impl BspPlane {
    fn from_points(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if !(len > 0.0) {
            return None;
        }
        let normal = n / len;
        Some(BspPlane {
            normal,
            w: normal.dot(&a.coords),
        })
    }

    fn flip(&mut self) {
        self.normal = -self.normal;
        self.w = -self.w;
    }

    /// Splits `poly` into the four csg.js buckets.
    fn split(
        &self,
        poly: &Polygon,
        coplanar_front: &mut Vec<Polygon>,
        coplanar_back: &mut Vec<Polygon>,
        front: &mut Vec<Polygon>,
        back: &mut Vec<Polygon>,
    ) {
        const COPLANAR: u8 = 0;
        const FRONT: u8 = 1;
        const BACK: u8 = 2;
        const SPANNING: u8 = 3;
        let mut kind = 0u8;
        let types: Vec<u8> = poly
            .vertices
            .iter()
            .map(|v| {
                let t = self.normal.dot(&v.coords) - self.w;
                let ty = if t < -BSP_EPSILON {
                    BACK
                } else if t > BSP_EPSILON {
                    FRONT
                } else {
                    COPLANAR
                };
                kind |= ty;
                ty
            })
            .collect();
        match kind {
            COPLANAR => {
                if self.normal.dot(&poly.plane.normal) > 0.0 {
                    coplanar_front.push(poly.clone());
                } else {
                    coplanar_back.push(poly.clone());
                }
            }
            FRONT => front.push(poly.clone()),
            BACK => back.push(poly.clone()),
            _ => {
                let n = poly.vertices.len();
                let mut f = Vec::with_capacity(n + 1);
                let mut b = Vec::with_capacity(n + 1);
                for i in 0..n {
                    let j = (i + 1) % n;
                    let (ti, tj) = (types[i], types[j]);
                    let (vi, vj) = (poly.vertices[i], poly.vertices[j]);
                    if ti != BACK {
                        f.push(vi);
                    }
                    if ti != FRONT {
                        b.push(vi);
                    }
                    if (ti | tj) == SPANNING {
                        let t = (self.w - self.normal.dot(&vi.coords)) / self.normal.dot(&(vj - vi));
                        let v = vi + (vj - vi) * t;
                        f.push(v);
                        b.push(v);
                    }
                }
                if f.len() >= 3 {
                    front.push(Polygon {
                        vertices: f,
                        plane: poly.plane.clone(),
                    });
                }
                if b.len() >= 3 {
                    back.push(Polygon {
                        vertices: b,
                        plane: poly.plane.clone(),
                    });
                }
            }
        }
    }
}

impl Polygon {
    fn flip(&mut self) {
        self.vertices.reverse();
        self.plane.flip();
    }
}

#[derive(Debug, Default)]
struct Node {
    plane: Option<BspPlane>,
    front: Option<Box<Node>>,
    back: Option<Box<Node>>,
    polygons: Vec<Polygon>,
}

impl Node {
    fn new(polygons: Vec<Polygon>) -> Self {
        let mut n = Node::default();
        n.build(polygons);
        n
    }

    fn invert(&mut self) {
        for p in &mut self.polygons {
            p.flip();
        }
        if let Some(p) = &mut self.plane {
            p.flip();
        }
        if let Some(f) = &mut self.front {
            f.invert();
        }
        if let Some(b) = &mut self.back {
            b.invert();
        }
        std::mem::swap(&mut self.front, &mut self.back);
    }

    fn clip_polygons(&self, polygons: Vec<Polygon>) -> Vec<Polygon> {
        let Some(plane) = &self.plane else {
            return polygons;
        };
        let mut front = Vec::new();
        let mut back = Vec::new();
        for p in &polygons {
            let mut cf = Vec::new();
            let mut cb = Vec::new();
            plane.split(p, &mut cf, &mut cb, &mut front, &mut back);
            front.extend(cf);
            back.extend(cb);
        }
        let mut front = match &self.front {
            Some(f) => f.clip_polygons(front),
            None => front,
        };
        let back = match &self.back {
            Some(b) => b.clip_polygons(back),
            None => Vec::new(),
        };
        front.extend(back);
        front
    }

    fn clip_to(&mut self, other: &Node) {
        self.polygons = other.clip_polygons(std::mem::take(&mut self.polygons));
        if let Some(f) = &mut self.front {
            f.clip_to(other);
        }
        if let Some(b) = &mut self.back {
            b.clip_to(other);
        }
    }

    fn all_polygons(&self) -> Vec<Polygon> {
        let mut out = self.polygons.clone();
        if let Some(f) = &self.front {
            out.extend(f.all_polygons());
        }
        if let Some(b) = &self.back {
            out.extend(b.all_polygons());
        }
        out
    }

    fn build(&mut self, polygons: Vec<Polygon>) {
        if polygons.is_empty() {
            return;
        }
        if self.plane.is_none() {
            self.plane = Some(polygons[0].plane.clone());
        }
        let plane = self.plane.clone().unwrap();
        let mut front = Vec::new();
        let mut back = Vec::new();
        for p in &polygons {
            let mut cf = Vec::new();
            let mut cb = Vec::new();
            plane.split(p, &mut cf, &mut cb, &mut front, &mut back);
            self.polygons.extend(cf);
            self.polygons.extend(cb);
        }
        if !front.is_empty() {
            self.front.get_or_insert_with(Default::default).build(front);
        }
        if !back.is_empty() {
            self.back.get_or_insert_with(Default::default).build(back);
        }
    }
}

fn to_polygons(mesh: &TriMesh) -> Vec<Polygon> {
    (0..mesh.len())
        .filter_map(|i| {
            let t = mesh.triangle(i);
            BspPlane::from_points(&t[0], &t[1], &t[2]).map(|plane| Polygon {
                vertices: t.to_vec(),
                plane,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Union,
    Difference,
    Intersection,
}

/// Exact CSG; the result may still contain slivers, so callers check closedness.
pub(crate) fn csg(a: &TriMesh, b: &TriMesh, op: Op) -> TriMesh {
    let mut na = Node::new(to_polygons(a));
    let mut nb = Node::new(to_polygons(b));
    match op {
        Op::Union => {
            na.clip_to(&nb);
            nb.clip_to(&na);
            nb.invert();
            nb.clip_to(&na);
            nb.invert();
            na.build(nb.all_polygons());
        }
        Op::Difference => {
            na.invert();
            na.clip_to(&nb);
            nb.clip_to(&na);
            nb.invert();
            nb.clip_to(&na);
            nb.invert();
            na.build(nb.all_polygons());
            na.invert();
        }
        Op::Intersection => {
            na.invert();
            nb.clip_to(&na);
            nb.invert();
            na.clip_to(&nb);
            nb.clip_to(&na);
            na.build(nb.all_polygons());
            na.invert();
        }
    }
    polygons_to_mesh(&na.all_polygons())
}

/// Welds, splits T-junctions and triangulates.
fn polygons_to_mesh(polys: &[Polygon]) -> TriMesh {
    // weld on a hashed lattice of pitch WELD_EPSILON, checking neighbour cells
    let cell = |p: &Point3<f64>| -> [i64; 3] { [0, 1, 2].map(|a| (p[a] / WELD_EPSILON).floor() as i64) };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let mut verts: Vec<Point3<f64>> = Vec::new();
    let mut weld = |p: &Point3<f64>| -> u32 {
        let c = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &id in ids {
                            if (verts[id as usize] - p).norm() <= WELD_EPSILON {
                                return id;
                            }
                        }
                    }
                }
            }
        }
        verts.push(*p);
        let id = (verts.len() - 1) as u32;
        grid.entry(c).or_default().push(id);
        id
    };
    let mut rings: Vec<Vec<u32>> = Vec::with_capacity(polys.len());
    for p in polys {
        let mut r: Vec<u32> = p.vertices.iter().map(&mut weld).collect();
        r.dedup();
        while r.len() > 1 && r.first() == r.last() {
            r.pop();
        }
        if r.len() >= 3 {
            rings.push(r);
        }
    }
    let rings = split_t_junctions(&verts, rings);
    let mut triangles = Vec::new();
    for r in rings {
        let n = r.len();
        let collinear = (0..n).any(|i| {
            let a = verts[r[(i + n - 1) % n] as usize];
            let b = verts[r[i] as usize];
            let c = verts[r[(i + 1) % n] as usize];
            (b - a).cross(&(c - b)).norm() <= WELD_EPSILON * (c - a).norm()
        });
        if n == 3 {
            triangles.push([r[0], r[1], r[2]]);
        } else if !collinear {
            for k in 1..n - 1 {
                triangles.push([r[0], r[k], r[k + 1]]);
            }
        } else {
            let c = r.iter().fold(Vector3::zeros(), |s, &i| s + verts[i as usize].coords) / n as f64;
            verts.push(Point3::from(c));
            let ci = (verts.len() - 1) as u32;
            for k in 0..n {
                triangles.push([ci, r[k], r[(k + 1) % n]]);
            }
        }
    }
    TriMesh::new(verts, triangles).unwrap_or_else(|_| TriMesh::empty())
}

/// Inserts every welded vertex lying on a ring edge into that edge.
fn split_t_junctions(verts: &[Point3<f64>], rings: Vec<Vec<u32>>) -> Vec<Vec<u32>> {
    let used: Vec<u32> = {
        let mut u: Vec<u32> = rings.iter().flatten().copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    rings
        .into_iter()
        .map(|r| {
            let n = r.len();
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = (r[i], r[(i + 1) % n]);
                out.push(a);
                let pa = verts[a as usize];
                let pb = verts[b as usize];
                let d = pb - pa;
                let len2 = d.norm_squared();
                if len2 == 0.0 {
                    continue;
                }
                let lo = pa.coords.inf(&pb.coords) - Vector3::repeat(WELD_EPSILON);
                let hi = pa.coords.sup(&pb.coords) + Vector3::repeat(WELD_EPSILON);
                let mut on: Vec<(f64, u32)> = used
                    .iter()
                    .copied()
                    .filter(|&v| v != a && v != b)
                    .filter_map(|v| {
                        let p = verts[v as usize];
                        if (0..3).any(|k| p[k] < lo[k] || p[k] > hi[k]) {
                            return None;
                        }
                        let t = (p - pa).dot(&d) / len2;
                        if t <= 0.0 || t >= 1.0 {
                            return None;
                        }
                        let off = (p - (pa + d * t)).norm();
                        (off <= WELD_EPSILON).then_some((t, v))
                    })
                    .collect();
                on.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                out.extend(on.into_iter().map(|(_, v)| v));
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::aabb_mesh;
    use crate::mesh::signed_volume;

    #[test]
    fn overlapping_boxes() {
        let a = aabb_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        let b = aabb_mesh(Point3::new(0.5, 0.0, 0.0), Point3::new(1.5, 1.0, 1.0));
        let u = csg(&a, &b, Op::Union);
        assert!(u.is_closed());
        assert!((signed_volume(&u).unwrap() - 1.5).abs() < 1e-9);
        let i = csg(&a, &b, Op::Intersection);
        assert!(i.is_closed());
        assert!((signed_volume(&i).unwrap() - 0.5).abs() < 1e-9);
        let d = csg(&a, &b, Op::Difference);
        assert!(d.is_closed());
        assert!((signed_volume(&d).unwrap() - 0.5).abs() < 1e-9);
    }
}
