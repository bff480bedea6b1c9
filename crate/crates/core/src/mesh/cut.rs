//! Plane cuts with optional planar capping.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Point2, Point3};

use super::polygon::{signed_area, triangulate};
use super::{MeshError, TriMesh};
use crate::geom::Plane;
use crate::tolerance::CUT_SNAP_MM;

/// Keeps the part of `mesh` on the side opposite `plane`'s normal. With
/// `cap`, the opening is closed with planar faces whose normal is the plane
/// normal, so a closed input gives a closed output.
pub fn cut_with_plane(mesh: &TriMesh, plane: &Plane, cap: bool) -> Result<TriMesh, MeshError> {
    if cap {
        mesh.require_closed()?;
    }
    let n = plane.normal();
    let d: Vec<f64> = mesh
        .vertices()
        .iter()
        .map(|p| {
            let s = plane.signed_distance(p);
            if s.abs() < CUT_SNAP_MM {
                0.0
            } else {
                s
            }
        })
        .collect();
    let mut vertices = mesh.vertices().to_vec();
    let mut crossing: HashMap<(u32, u32), u32> = HashMap::new();
    let mut triangles = Vec::with_capacity(mesh.len());
    for (ti, t) in mesh.triangles().iter().enumerate() {
        let dv = t.map(|v| d[v as usize]);
        if dv.iter().all(|&x| x <= 0.0) {
            if dv.iter().all(|&x| x == 0.0) && mesh.triangle_normal(ti).dot(&n) <= 0.0 {
                continue;
            }
            triangles.push(*t);
            continue;
        }
        if dv.iter().all(|&x| x >= 0.0) {
            continue;
        }
        let mut poly: Vec<u32> = Vec::with_capacity(4);
        for e in 0..3 {
            let (p, q) = (t[e], t[(e + 1) % 3]);
            let (dp, dq) = (dv[e], dv[(e + 1) % 3]);
            if dp <= 0.0 {
                poly.push(p);
            }
            if (dp < 0.0 && dq > 0.0) || (dp > 0.0 && dq < 0.0) {
                let key = (p.min(q), p.max(q));
                let id = *crossing.entry(key).or_insert_with(|| {
                    let (a, b) = key;
                    let (da, db) = (d[a as usize], d[b as usize]);
                    let pa = vertices[a as usize];
                    let pb = vertices[b as usize];
                    vertices.push(pa + (pb - pa) * (da / (da - db)));
                    (vertices.len() - 1) as u32
                });
                poly.push(id);
            }
        }
        for k in 1..poly.len().saturating_sub(1) {
            triangles.push([poly[0], poly[k], poly[k + 1]]);
        }
    }
    if cap {
        add_cap(&vertices, &mut triangles, plane);
    }
    TriMesh::new(vertices, triangles)
}

/// Both halves: (opposite the normal, along the normal).
pub fn split_with_plane(mesh: &TriMesh, plane: &Plane, cap: bool) -> Result<(TriMesh, TriMesh), MeshError> {
    Ok((
        cut_with_plane(mesh, plane, cap)?,
        cut_with_plane(mesh, &plane.flipped(), cap)?,
    ))
}

/// Closes the open boundary with faces lying in `plane`.
fn add_cap(vertices: &[Point3<f64>], triangles: &mut Vec<[u32; 3]>, plane: &Plane) {
    let mut directed: HashMap<(u32, u32), i32> = HashMap::new();
    for t in triangles.iter() {
        for e in 0..3 {
            *directed.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
        }
    }
    // cap edges run opposite to unmatched boundary edges
    let mut out: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut pending: Vec<(u32, u32)> = directed
        .iter()
        .filter(|(&(a, b), &c)| c > directed.get(&(b, a)).copied().unwrap_or(0))
        .map(|(&(a, b), _)| (b, a))
        .collect();
    pending.sort_unstable();
    for &(a, b) in &pending {
        out.entry(a).or_default().push(b);
    }
    let mut loops: Vec<Vec<u32>> = Vec::new();
    while let Some((&start, _)) = out.iter().find(|(_, v)| !v.is_empty()) {
        let mut lp = vec![start];
        let mut cur = start;
        loop {
            let next = {
                let v = out.get_mut(&cur).unwrap();
                if v.is_empty() {
                    break;
                }
                v.remove(0)
            };
            if next == start {
                break;
            }
            lp.push(next);
            cur = next;
            if !out.get(&cur).is_some_and(|v| !v.is_empty()) {
                break;
            }
        }
        if lp.len() >= 3 {
            loops.push(lp);
        }
    }
    let (u, v) = plane.basis();
    let o = plane.point();
    let flat: Vec<Vec<Point2<f64>>> = loops
        .iter()
        .map(|lp| {
            lp.iter()
                .map(|&i| {
                    let q = vertices[i as usize] - o;
                    Point2::new(q.dot(&u), q.dot(&v))
                })
                .collect()
        })
        .collect();
    let areas: Vec<f64> = flat.iter().map(|r| signed_area(r)).collect();
    let outers: Vec<usize> = (0..loops.len()).filter(|&i| areas[i] > 0.0).collect();
    let mut holes_of: Vec<Vec<usize>> = vec![Vec::new(); loops.len()];
    for h in (0..loops.len()).filter(|&i| areas[i] < 0.0) {
        let probe = flat[h][0];
        let owner = outers
            .iter()
            .copied()
            .filter(|&o| point_in_ring(&probe, &flat[o]))
            .min_by(|&a, &b| areas[a].total_cmp(&areas[b]));
        if let Some(o) = owner {
            holes_of[o].push(h);
        }
    }
    for &o in &outers {
        let holes: Vec<Vec<Point2<f64>>> = holes_of[o].iter().map(|&h| flat[h].clone()).collect();
        let mut ids: Vec<u32> = loops[o].clone();
        for &h in &holes_of[o] {
            ids.extend_from_slice(&loops[h]);
        }
        for t in triangulate(&flat[o], &holes) {
            triangles.push([ids[t[0]], ids[t[1]], ids[t[2]]]);
        }
    }
}

fn point_in_ring(p: &Point2<f64>, ring: &[Point2<f64>]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}
