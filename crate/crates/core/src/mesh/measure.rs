//! Volume measurement by x-directed ray casting.
//!
//! Each ray crosses the mesh at sorted parameters; consecutive pairs bound the
//! inside intervals exactly, so only the y–z sampling is discretised.

use nalgebra::{Point3, Vector3};

use super::sdf::MeshSdf;
use super::{MeshError, TriMesh};
use crate::geom::Aabb;

/// Inside intervals (x ranges) of a mesh along the row at (`y`, `z`).
pub(crate) fn row_intervals(sdf: &MeshSdf, y: f64, z: f64, x0: f64) -> Vec<(f64, f64)> {
    for (dy, dz) in ROW_JITTER {
        let o = Point3::new(x0, y + dy, z + dz);
        if let Some(h) = sdf.crossings(&o, &Vector3::x()) {
            return h.chunks_exact(2).map(|p| (x0 + p[0], x0 + p[1])).collect();
        }
    }
    Vec::new()
}

const ROW_JITTER: [(f64, f64); 4] = [
    (0.0, 0.0),
    (1.7e-7, 2.3e-7),
    (-2.9e-7, 1.1e-7),
    (3.7e-7, -3.1e-7),
];

fn overlap_len(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            s += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    s
}

/// Sums `row(y, z)` over cell centres of a `spacing` lattice covering `b`'s
/// y–z extent, times the cell area.
fn integrate_rows(b: &Aabb, spacing: f64, row: &(dyn Fn(f64, f64) -> f64 + Sync)) -> f64 {
    if b.is_empty() {
        return 0.0;
    }
    let j0 = (b.min.y / spacing).floor() as i64;
    let j1 = (b.max.y / spacing).ceil() as i64;
    let k0 = (b.min.z / spacing).floor() as i64;
    let k1 = (b.max.z / spacing).ceil() as i64;
    let ny = (j1 - j0).max(0) as usize;
    let nz = (k1 - k0).max(0) as usize;
    let rows = ny * nz;
    if rows == 0 {
        return 0.0;
    }
    let mut sums = vec![0.0; rows];
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(rows);
    let per = rows.div_ceil(threads);
    std::thread::scope(|s| {
        for (c, chunk) in sums.chunks_mut(per).enumerate() {
            s.spawn(move || {
                for (r, v) in chunk.iter_mut().enumerate() {
                    let g = c * per + r;
                    let y = (j0 + (g % ny) as i64) as f64 * spacing + 0.5 * spacing;
                    let z = (k0 + (g / ny) as i64) as f64 * spacing + 0.5 * spacing;
                    *v = row(y, z);
                }
            });
        }
    });
    sums.iter().sum::<f64>() * spacing * spacing
}

/// Enclosed volume of a closed mesh, rows sampled every `spacing` in y and z.
pub fn scanline_volume(mesh: &TriMesh, spacing: f64) -> Result<f64, MeshError> {
    check_spacing(spacing)?;
    if mesh.is_empty() {
        return Ok(0.0);
    }
    let s = MeshSdf::new(mesh.clone())?;
    let b = mesh.bounds();
    let x0 = b.min.x - 1.0;
    Ok(integrate_rows(&b, spacing, &|y, z| {
        row_intervals(&s, y, z, x0).iter().map(|(a, b)| b - a).sum()
    }))
}

/// Volume common to two closed meshes.
pub fn intersection_volume(a: &TriMesh, b: &TriMesh, spacing: f64) -> Result<f64, MeshError> {
    check_spacing(spacing)?;
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let sa = MeshSdf::new(a.clone())?;
    let sb = MeshSdf::new(b.clone())?;
    intersection_volume_sdf(&sa, &sb, spacing)
}

pub(crate) fn intersection_volume_sdf(a: &MeshSdf, b: &MeshSdf, spacing: f64) -> Result<f64, MeshError> {
    let common = a.bounds().intersection(&b.bounds());
    if common.is_empty() || common.extent().min() <= 0.0 {
        return Ok(0.0);
    }
    let x0 = common.min.x - 1.0;
    Ok(integrate_rows(&common, spacing, &|y, z| {
        let ia = row_intervals(a, y, z, x0);
        if ia.is_empty() {
            return 0.0;
        }
        overlap_len(&ia, &row_intervals(b, y, z, x0))
    }))
}

fn check_spacing(spacing: f64) -> Result<(), MeshError> {
    if spacing > 0.0 && spacing.is_finite() {
        Ok(())
    } else {
        Err(MeshError::InvalidParameter(format!("spacing {spacing} must be > 0")))
    }
}

/// Point-in-solid test for a closed mesh.
pub fn contains_point(mesh: &TriMesh, p: &Point3<f64>) -> Result<bool, MeshError> {
    Ok(MeshSdf::new(mesh.clone())?.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{aabb_mesh, icosphere};
    use crate::mesh::signed_volume;

    #[test]
    fn box_volumes_are_exact_on_aligned_rows() {
        let a = aabb_mesh(Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 3.0, 4.0));
        assert!((scanline_volume(&a, 0.25).unwrap() - 24.0).abs() < 1e-9);
        let b = aabb_mesh(Point3::new(1.0, 1.0, 1.0), Point3::new(5.0, 5.0, 5.0));
        assert!((intersection_volume(&a, &b, 0.25).unwrap() - 6.0).abs() < 1e-9);
        let far = aabb_mesh(Point3::new(10.0, 0.0, 0.0), Point3::new(11.0, 1.0, 1.0));
        assert_eq!(intersection_volume(&a, &far, 0.25).unwrap(), 0.0);
    }

    #[test]
    fn sphere_volume_agrees_with_divergence_theorem() {
        let s = icosphere(Point3::new(0.3, -0.2, 0.1), 5.0, 3);
        let exact = signed_volume(&s).unwrap();
        let v = scanline_volume(&s, 0.05).unwrap();
        assert!(((v - exact) / exact).abs() < 2e-3, "{v} vs {exact}");
        assert!(contains_point(&s, &Point3::new(0.3, -0.2, 0.1)).unwrap());
        assert!(!contains_point(&s, &Point3::new(6.0, 0.0, 0.0)).unwrap());
    }
}
