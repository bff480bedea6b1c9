//! Indexed triangle meshes and the solid-modelling operations built on them.

mod boolean;
mod bsp;
pub mod bvh;
mod cut;
mod measure;
mod polygon;
pub mod primitives;
pub mod sdf;
mod validate;

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use thiserror::Error;

use crate::geom::{Aabb, Plane, RigidTransform};
use crate::tolerance::DEGENERATE_AREA_MM2;

pub use boolean::{boolean, boolean_with, offset_mesh, BooleanKind, BooleanOptions, BooleanPath};
pub use cut::{cut_with_plane, split_with_plane};
pub use measure::{contains_point, intersection_volume, scanline_volume};
pub use validate::{count_self_intersections, min_feature_size, self_intersecting_pairs, validate_mesh, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("non-finite vertex coordinate at index {0}")]
    NonFiniteVertex(usize),
    #[error("operation requires a closed mesh ({open_edges} open or non-manifold edges)")]
    NonClosedInput { open_edges: usize },
    #[error("boolean failed to produce a valid solid: {0}")]
    RobustnessFailure(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Indexed triangle surface in millimetres.
///
/// Triangles wind counter-clockwise seen from outside, so a solid has
/// positive signed volume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
}

/// What [`TriMesh::with_report`] removed while building a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildReport {
    pub degenerate_dropped: usize,
    pub unused_vertices_dropped: usize,
}

impl TriMesh {
    pub fn empty() -> Self {
        TriMesh::default()
    }

    /// Validates indices and coordinates, drops degenerate triangles and
    /// unreferenced vertices.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        Self::with_report(vertices, triangles).map(|(m, _)| m)
    }

    pub fn with_report(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<(Self, BuildReport), MeshError> {
        if let Some(i) = vertices
            .iter()
            .position(|v| !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()))
        {
            return Err(MeshError::NonFiniteVertex(i));
        }
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i as usize >= n {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        count: n,
                    });
                }
            }
        }
        let mut report = BuildReport::default();
        let kept: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| {
                let ok = t[0] != t[1]
                    && t[1] != t[2]
                    && t[0] != t[2]
                    && triangle_area(
                        &vertices[t[0] as usize],
                        &vertices[t[1] as usize],
                        &vertices[t[2] as usize],
                    ) >= DEGENERATE_AREA_MM2;
                if !ok {
                    report.degenerate_dropped += 1;
                }
                ok
            })
            .collect();
        let mut remap = vec![u32::MAX; n];
        let mut out_vertices = Vec::with_capacity(n);
        let mut out_triangles = Vec::with_capacity(kept.len());
        for t in kept {
            let mut o = [0u32; 3];
            for k in 0..3 {
                let i = t[k] as usize;
                if remap[i] == u32::MAX {
                    remap[i] = out_vertices.len() as u32;
                    out_vertices.push(vertices[i]);
                }
                o[k] = remap[i];
            }
            out_triangles.push(o);
        }
        report.unused_vertices_dropped = n - out_vertices.len();
        Ok((
            TriMesh {
                vertices: out_vertices,
                triangles: out_triangles,
            },
            report,
        ))
    }

    /// Builds a mesh from a triangle soup, welding exactly equal coordinates.
    pub fn from_soup(soup: &[[Point3<f64>; 3]]) -> Result<Self, MeshError> {
        let mut index: HashMap<[u64; 3], u32> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(soup.len());
        for tri in soup {
            let mut t = [0u32; 3];
            for k in 0..3 {
                let p = tri[k];
                let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
                t[k] = *index.entry(key).or_insert_with(|| {
                    vertices.push(p);
                    (vertices.len() - 1) as u32
                });
            }
            triangles.push(t);
        }
        TriMesh::new(vertices, triangles)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn triangle_normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Mean of the vertex positions.
    pub fn vertex_centroid(&self) -> Point3<f64> {
        if self.vertices.is_empty() {
            return Point3::origin();
        }
        let s = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, v| acc + v.coords);
        Point3::from(s / self.vertices.len() as f64)
    }

    /// Centroid of the enclosed volume; falls back to the vertex centroid
    /// for meshes without volume.
    pub fn volume_centroid(&self) -> Point3<f64> {
        let mut vol = 0.0;
        let mut acc = Vector3::zeros();
        let o = self.bounds().center();
        for i in 0..self.len() {
            let [a, b, c] = self.triangle(i);
            let (a, b, c) = (a - o, b - o, c - o);
            let v = a.dot(&b.cross(&c)) / 6.0;
            vol += v;
            acc += (a + b + c) * (v / 4.0);
        }
        if vol.abs() < 1e-12 {
            self.vertex_centroid()
        } else {
            o + acc / vol
        }
    }

    /// Reverses every triangle.
    pub fn flipped(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
        }
    }

    /// Concatenates meshes without welding.
    pub fn merged(parts: &[&TriMesh]) -> TriMesh {
        let mut out = TriMesh::empty();
        for p in parts {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&p.vertices);
            out.triangles
                .extend(p.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
        out
    }

    /// Rounds every coordinate to `f32`, as a binary STL stores it.
    pub fn quantized_f32(&self) -> Result<TriMesh, MeshError> {
        let soup: Vec<[Point3<f64>; 3]> = (0..self.len())
            .map(|i| {
                self.triangle(i)
                    .map(|p| p.map(|c| c as f32 as f64))
            })
            .collect();
        TriMesh::from_soup(&soup)
    }

    /// Undirected edge → number of incident triangles, plus directed edge counts.
    fn edge_tables(&self) -> (HashMap<(u32, u32), u32>, HashMap<(u32, u32), u32>) {
        let mut undirected: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.len() * 2);
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.len() * 3);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *undirected.entry((a.min(b), a.max(b))).or_default() += 1;
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        (undirected, directed)
    }

    /// Number of edges not shared by exactly two triangles.
    pub fn open_edge_count(&self) -> usize {
        let (u, _) = self.edge_tables();
        u.values().filter(|&&c| c != 2).count()
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_closed(&self) -> bool {
        !self.is_empty() && self.open_edge_count() == 0
    }

    pub(crate) fn require_closed(&self) -> Result<(), MeshError> {
        if self.is_empty() {
            return Ok(());
        }
        let open = self.open_edge_count();
        if open > 0 {
            Err(MeshError::NonClosedInput { open_edges: open })
        } else {
            Ok(())
        }
    }

    /// Euler characteristic V − E + F.
    pub fn euler_characteristic(&self) -> i64 {
        let (u, _) = self.edge_tables();
        self.vertices.len() as i64 - u.len() as i64 + self.triangles.len() as i64
    }

    /// Splits into edge-connected components, in order of first triangle.
    pub fn connected_components(&self) -> Vec<TriMesh> {
        let labels = self.component_labels();
        let count = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        let mut groups: Vec<Vec<[u32; 3]>> = vec![Vec::new(); count];
        for (t, &l) in self.triangles.iter().zip(&labels) {
            groups[l].push(*t);
        }
        groups
            .into_iter()
            .map(|tris| {
                TriMesh::new(self.vertices.clone(), tris).expect("sub-mesh of a valid mesh")
            })
            .collect()
    }

    /// Component label per triangle (components share vertices).
    pub(crate) fn component_labels(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.vertices.len());
        for t in &self.triangles {
            uf.union(t[0] as usize, t[1] as usize);
            uf.union(t[1] as usize, t[2] as usize);
        }
        let mut root_label: HashMap<usize, usize> = HashMap::new();
        self.triangles
            .iter()
            .map(|t| {
                let r = uf.find(t[0] as usize);
                let next = root_label.len();
                *root_label.entry(r).or_insert(next)
            })
            .collect()
    }

    /// Samples `n` points uniformly by area. Returns points and their triangle index.
    pub fn sample_surface<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<(Point3<f64>, usize)> {
        if self.is_empty() || n == 0 {
            return Vec::new();
        }
        let mut cdf = Vec::with_capacity(self.len());
        let mut total = 0.0;
        for i in 0..self.len() {
            let [a, b, c] = self.triangle(i);
            total += triangle_area(&a, &b, &c);
            cdf.push(total);
        }
        (0..n)
            .map(|_| {
                let r = rng.gen::<f64>() * total;
                let i = cdf.partition_point(|&c| c < r).min(self.len() - 1);
                let [a, b, c] = self.triangle(i);
                let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
                let s = r1.sqrt();
                let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - r2)) + c.coords * (s * r2);
                (Point3::from(p), i)
            })
            .collect()
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeps labelling deterministic
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

pub fn triangle_area(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Applies `v ↦ R v + t`; connectivity is unchanged.
pub fn transform_mesh(mesh: &TriMesh, t: &RigidTransform) -> TriMesh {
    TriMesh {
        vertices: mesh.vertices.iter().map(|v| t.apply_point(v)).collect(),
        triangles: mesh.triangles.clone(),
    }
}

/// Reflects across `plane` and flips winding so solids keep positive volume.
pub fn mirror_mesh(mesh: &TriMesh, plane: &Plane) -> TriMesh {
    TriMesh {
        vertices: mesh.vertices.iter().map(|v| plane.reflect_point(v)).collect(),
        triangles: mesh.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
    }
}

/// Signed enclosed volume (divergence theorem). Requires a closed mesh.
pub fn signed_volume(mesh: &TriMesh) -> Result<f64, MeshError> {
    mesh.require_closed()?;
    Ok(signed_volume_unchecked(mesh))
}

pub(crate) fn signed_volume_unchecked(mesh: &TriMesh) -> f64 {
    if mesh.is_empty() {
        return 0.0;
    }
    // Reference point near the mesh keeps the sum well-conditioned.
    let o = mesh.bounds().center();
    let mut v = 0.0;
    for i in 0..mesh.len() {
        let [a, b, c] = mesh.triangle(i);
        v += (a - o).dot(&(b - o).cross(&(c - o)));
    }
    v / 6.0
}

pub fn surface_area(mesh: &TriMesh) -> f64 {
    (0..mesh.len())
        .map(|i| {
            let [a, b, c] = mesh.triangle(i);
            triangle_area(&a, &b, &c)
        })
        .sum()
}

/// Drops connected components whose |volume| is below `min_volume`.
pub fn remove_small_components(mesh: &TriMesh, min_volume: f64) -> TriMesh {
    if min_volume <= 0.0 || mesh.is_empty() {
        return mesh.clone();
    }
    let labels = mesh.component_labels();
    let count = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut vol = vec![0.0; count];
    let o = mesh.bounds().center();
    for (i, &l) in labels.iter().enumerate() {
        let [a, b, c] = mesh.triangle(i);
        vol[l] += (a - o).dot(&(b - o).cross(&(c - o))) / 6.0;
    }
    let tris = mesh
        .triangles
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| vol[l].abs() >= min_volume)
        .map(|(t, _)| *t)
        .collect();
    TriMesh::new(mesh.vertices.clone(), tris).expect("sub-mesh of a valid mesh")
}

#[cfg(test)]
mod tests {
    use super::primitives::{box_mesh, unit_cube};
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn unit_cube_measures() {
        let c = unit_cube();
        assert!(c.is_closed());
        assert!((signed_volume(&c).unwrap() - 1.0).abs() < 1e-12);
        assert!((surface_area(&c) - 6.0).abs() < 1e-12);
        assert_eq!(c.euler_characteristic(), 2);
    }

    #[test]
    fn inverted_cube_has_negative_volume() {
        let c = unit_cube().flipped();
        assert!((signed_volume(&c).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_has_no_volume() {
        let c = unit_cube();
        let open = TriMesh::new(c.vertices().to_vec(), c.triangles()[2..].to_vec()).unwrap();
        assert!(matches!(
            signed_volume(&open),
            Err(MeshError::NonClosedInput { .. })
        ));
    }

    #[test]
    fn degenerate_triangles_are_dropped_with_report() {
        let v = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        let (m, r) = TriMesh::with_report(v, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(r.degenerate_dropped, 1);
        assert_eq!(r.unused_vertices_dropped, 1);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = TriMesh::new(vec![Point3::origin()], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { .. }));
    }

    #[test]
    fn identity_transform_is_exact() {
        let c = unit_cube();
        assert_eq!(transform_mesh(&c, &RigidTransform::identity()), c);
    }

    #[test]
    fn translation_shifts_centroid() {
        let c = unit_cube();
        let d = Vector3::new(1.0, 2.0, 3.0);
        let t = transform_mesh(&c, &RigidTransform::translation(d));
        let shift = t.vertex_centroid() - c.vertex_centroid();
        assert!((shift - d).amax() < 1e-12);
    }

    #[test]
    fn rotation_preserves_volume() {
        let c = unit_cube();
        let r = RigidTransform::about_axis(&Point3::origin(), &Vector3::z(), FRAC_PI_2);
        let t = transform_mesh(&c, &r);
        assert!((signed_volume(&t).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mirror_keeps_volume_positive_and_is_involution() {
        let b = box_mesh(Point3::new(1.0, -2.0, 0.5), Vector3::new(0.5, 1.0, 2.0));
        let p = Plane::new(Point3::new(0.3, 0.0, 0.0), Vector3::new(1.0, 0.2, -0.1)).unwrap();
        let m = mirror_mesh(&b, &p);
        assert!((signed_volume(&m).unwrap() - signed_volume(&b).unwrap()).abs() < 1e-9);
        let back = mirror_mesh(&m, &p);
        for (u, v) in back.vertices().iter().zip(b.vertices()) {
            assert!((u - v).norm() <= 1e-12);
        }
        assert_eq!(back.triangles(), b.triangles());
    }

    #[test]
    fn mirror_of_symmetric_cube_has_same_vertex_set() {
        let c = box_mesh(Point3::origin(), Vector3::repeat(0.5));
        let p = Plane::new(Point3::origin(), Vector3::x()).unwrap();
        let m = mirror_mesh(&c, &p);
        let key = |v: &Point3<f64>| (v.x.to_bits(), v.y.to_bits(), v.z.to_bits());
        let mut a: Vec<_> = c.vertices().iter().map(key).collect();
        let mut b: Vec<_> = m.vertices().iter().map(|v| key(&(v + Vector3::zeros()))).collect();
        // -0.0 and 0.0 never occur here: all coordinates are ±0.5
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn components_and_speckle_removal() {
        let a = box_mesh(Point3::origin(), Vector3::repeat(1.0));
        let b = box_mesh(Point3::new(5.0, 0.0, 0.0), Vector3::repeat(0.1));
        let m = TriMesh::merged(&[&a, &b]);
        assert_eq!(m.connected_components().len(), 2);
        let cleaned = remove_small_components(&m, 0.5);
        assert_eq!(cleaned.connected_components().len(), 1);
        assert!((signed_volume(&cleaned).unwrap() - 8.0).abs() < 1e-12);
    }
}
