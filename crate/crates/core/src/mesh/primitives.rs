//! Closed polyhedral primitives.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::TriMesh;
use crate::geom::orthonormal_basis;

/// Axis-aligned box given by centre and half extents.
pub fn box_mesh(center: Point3<f64>, half: Vector3<f64>) -> TriMesh {
    let min = center - half;
    let max = center + half;
    aabb_mesh(min, max)
}

/// Axis-aligned box between two corners.
pub fn aabb_mesh(min: Point3<f64>, max: Point3<f64>) -> TriMesh {
    let v: Vec<Point3<f64>> = (0..8)
        .map(|c| {
            Point3::new(
                if c & 1 == 0 { min.x } else { max.x },
                if c & 2 == 0 { min.y } else { max.y },
                if c & 4 == 0 { min.z } else { max.z },
            )
        })
        .collect();
    let quads = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let mut t = Vec::with_capacity(12);
    for q in quads {
        t.push([q[0], q[1], q[2]]);
        t.push([q[0], q[2], q[3]]);
    }
    TriMesh::new(v, t).expect("box is valid")
}

/// The cube [0,1]³.
pub fn unit_cube() -> TriMesh {
    aabb_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
}

/// Capped cylinder from `base` along `axis` (normalised internally).
pub fn cylinder_mesh(
    base: Point3<f64>,
    axis: Vector3<f64>,
    length: f64,
    radius: f64,
    segments: usize,
) -> TriMesh {
    let a = axis.normalize();
    let (u, v) = orthonormal_basis(&a);
    let n = segments.max(3);
    let mut verts = Vec::with_capacity(2 * n + 2);
    for ring in 0..2 {
        let c = base + a * (length * ring as f64);
        for i in 0..n {
            let th = std::f64::consts::TAU * i as f64 / n as f64;
            verts.push(c + (u * th.cos() + v * th.sin()) * radius);
        }
    }
    let bottom = verts.len() as u32;
    verts.push(base);
    let top = verts.len() as u32;
    verts.push(base + a * length);
    let n32 = n as u32;
    let mut tris = Vec::with_capacity(4 * n);
    for i in 0..n32 {
        let j = (i + 1) % n32;
        tris.push([i, j, n32 + j]);
        tris.push([i, n32 + j, n32 + i]);
        tris.push([bottom, j, i]);
        tris.push([top, n32 + i, n32 + j]);
    }
    TriMesh::new(verts, tris).expect("cylinder is valid")
}

/// Geodesic sphere from a subdivided icosahedron, vertices on the sphere.
pub fn icosphere(center: Point3<f64>, radius: f64, subdivisions: usize) -> TriMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        for f in &faces {
            let ab = midpoint(f[0], f[1], &mut verts);
            let bc = midpoint(f[1], f[2], &mut verts);
            let ca = midpoint(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    let pts = verts
        .into_iter()
        .map(|v| center + v * radius)
        .collect();
    TriMesh::new(pts, faces).expect("icosphere is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{signed_volume, surface_area};

    #[test]
    fn primitives_are_closed_with_positive_volume() {
        let c = cylinder_mesh(Point3::origin(), Vector3::new(0.0, 1.0, 1.0), 3.0, 1.0, 32);
        assert!(c.is_closed());
        let v = signed_volume(&c).unwrap();
        let exact = 0.5 * 32.0 * (std::f64::consts::TAU / 32.0).sin() * 3.0;
        assert!((v - exact).abs() < 1e-9);
        let s = icosphere(Point3::new(1.0, 2.0, 3.0), 2.0, 2);
        assert!(s.is_closed());
        assert!(signed_volume(&s).unwrap() > 0.0);
        assert_eq!(s.euler_characteristic(), 2);
        assert!((surface_area(&box_mesh(Point3::origin(), Vector3::new(1.0, 2.0, 3.0))) - 88.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_volume_is_inscribed_and_close() {
        let s = icosphere(Point3::origin(), 10.0, 4);
        let v = signed_volume(&s).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 1000.0;
        assert!(v < exact);
        assert!((exact - v) / exact < 0.01);
    }
}
