//! Boolean operations and offsets on closed meshes.
//!
//! Three routes, tried in order: exact set identities (empty, disjoint or
//! identical operands), exact BSP clipping for small inputs, and SDF
//! resampling otherwise or when the exact result fails to close.

use serde::{Deserialize, Serialize};

use super::bsp::{csg, Op};
use super::sdf::Sdf;
use super::{MeshError, TriMesh};
use crate::tolerance::DEFAULT_VOXEL_MM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BooleanKind {
    Union,
    Difference,
    Intersection,
}

/// Which route produced a boolean result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BooleanPath {
    Identity,
    Exact,
    Voxel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BooleanOptions {
    /// Exact clipping is attempted while `|A|·|B|` triangles stay below this.
    pub exact_pair_limit: usize,
    pub voxel_mm: f64,
    /// Skip the exact route entirely.
    pub voxel_only: bool,
}

impl Default for BooleanOptions {
    fn default() -> Self {
        BooleanOptions {
            exact_pair_limit: 250_000,
            voxel_mm: DEFAULT_VOXEL_MM,
            voxel_only: false,
        }
    }
}

pub fn boolean(a: &TriMesh, b: &TriMesh, kind: BooleanKind) -> Result<TriMesh, MeshError> {
    boolean_with(a, b, kind, &BooleanOptions::default()).map(|(m, _)| m)
}

pub fn boolean_with(
    a: &TriMesh,
    b: &TriMesh,
    kind: BooleanKind,
    opts: &BooleanOptions,
) -> Result<(TriMesh, BooleanPath), MeshError> {
    if !(opts.voxel_mm > 0.0) {
        return Err(MeshError::InvalidParameter("voxel size must be > 0".into()));
    }
    a.require_closed()?;
    b.require_closed()?;
    if let Some(m) = identity(a, b, kind) {
        return Ok((m, BooleanPath::Identity));
    }
    if !opts.voxel_only && a.len().saturating_mul(b.len()) <= opts.exact_pair_limit {
        let op = match kind {
            BooleanKind::Union => Op::Union,
            BooleanKind::Difference => Op::Difference,
            BooleanKind::Intersection => Op::Intersection,
        };
        let m = csg(a, b, op);
        if m.is_empty() || m.is_closed() {
            return Ok((m, BooleanPath::Exact));
        }
    }
    let (sa, sb) = (Sdf::mesh(a.clone())?, Sdf::mesh(b.clone())?);
    let field = match kind {
        BooleanKind::Union => Sdf::Union(vec![sa, sb]),
        BooleanKind::Difference => Sdf::difference(sa, sb),
        BooleanKind::Intersection => Sdf::Intersection(vec![sa, sb]),
    };
    let m = field.to_mesh(opts.voxel_mm)?;
    if !m.is_empty() && !m.is_closed() {
        return Err(MeshError::RobustnessFailure(format!(
            "{kind:?} result has {} open edges after resampling",
            m.open_edge_count()
        )));
    }
    Ok((m, BooleanPath::Voxel))
}

fn identity(a: &TriMesh, b: &TriMesh, kind: BooleanKind) -> Option<TriMesh> {
    use BooleanKind::*;
    if a.is_empty() || b.is_empty() {
        return Some(match kind {
            Union => if a.is_empty() { b.clone() } else { a.clone() },
            Difference => a.clone(),
            Intersection => TriMesh::empty(),
        });
    }
    if !a.bounds().overlaps(&b.bounds()) {
        return Some(match kind {
            Union => TriMesh::merged(&[a, b]),
            Difference => a.clone(),
            Intersection => TriMesh::empty(),
        });
    }
    if a == b {
        return Some(match kind {
            Union | Intersection => a.clone(),
            Difference => TriMesh::empty(),
        });
    }
    None
}

/// Grows (`distance > 0`) or shrinks a closed mesh by resampling its
/// distance field at `voxel_mm`.
pub fn offset_mesh(mesh: &TriMesh, distance: f64, voxel_mm: f64) -> Result<TriMesh, MeshError> {
    if !distance.is_finite() || !(voxel_mm > 0.0) {
        return Err(MeshError::InvalidParameter(format!(
            "offset {distance} at voxel {voxel_mm}"
        )));
    }
    if mesh.is_empty() {
        return Ok(TriMesh::empty());
    }
    Sdf::offset(Sdf::mesh(mesh.clone())?, distance).to_mesh(voxel_mm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{aabb_mesh, icosphere};
    use crate::mesh::signed_volume;
    use nalgebra::Point3;
    use std::f64::consts::PI;

    #[test]
    fn cube_and_half_slab() {
        let a = aabb_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        let b = aabb_mesh(Point3::new(0.5, 0.0, 0.0), Point3::new(1.5, 1.0, 1.0));
        let (u, path) = boolean_with(&a, &b, BooleanKind::Union, &BooleanOptions::default()).unwrap();
        assert_eq!(path, BooleanPath::Exact);
        assert!((signed_volume(&u).unwrap() - 1.5).abs() < 1e-6);
        let i = boolean(&a, &b, BooleanKind::Intersection).unwrap();
        assert!((signed_volume(&i).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn identities() {
        let a = aabb_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        let far = aabb_mesh(Point3::new(3.0, 0.0, 0.0), Point3::new(4.0, 2.0, 1.0));
        let (u, p) = boolean_with(&a, &far, BooleanKind::Union, &BooleanOptions::default()).unwrap();
        assert_eq!(p, BooleanPath::Identity);
        assert!((signed_volume(&u).unwrap() - 3.0).abs() < 1e-12);
        assert!(boolean(&a, &a, BooleanKind::Difference).unwrap().is_empty());
        assert!(boolean(&a, &far, BooleanKind::Intersection).unwrap().is_empty());
        assert_eq!(boolean(&a, &TriMesh::empty(), BooleanKind::Union).unwrap(), a);
    }

    #[test]
    fn open_input_is_rejected() {
        let a = aabb_mesh(Point3::origin(), Point3::new(1.0, 1.0, 1.0));
        let mut t = a.triangles().to_vec();
        t.pop();
        let open = TriMesh::new(a.vertices().to_vec(), t).unwrap();
        assert!(matches!(
            boolean(&open, &a, BooleanKind::Union),
            Err(MeshError::NonClosedInput { .. })
        ));
    }

    #[test]
    fn voxel_route_matches_exact_on_spheres() {
        let a = icosphere(Point3::origin(), 4.0, 2);
        let b = icosphere(Point3::new(3.0, 0.0, 0.0), 4.0, 2);
        let opts = BooleanOptions { voxel_only: true, voxel_mm: 0.2, ..Default::default() };
        let (v, path) = boolean_with(&a, &b, BooleanKind::Union, &opts).unwrap();
        assert_eq!(path, BooleanPath::Voxel);
        let (e, _) = boolean_with(&a, &b, BooleanKind::Union, &BooleanOptions::default()).unwrap();
        let (vv, ve) = (signed_volume(&v).unwrap(), signed_volume(&e).unwrap());
        assert!(((vv - ve) / ve).abs() < 0.02, "{vv} vs {ve}");
    }

    #[test]
    fn offsets() {
        let s = icosphere(Point3::origin(), 10.0, 4);
        let grown = offset_mesh(&s, 1.5, 0.5).unwrap();
        let exact = 4.0 / 3.0 * PI * 11.5f64.powi(3);
        let v = signed_volume(&grown).unwrap();
        assert!(((v - exact) / exact).abs() < 0.03, "{v}");
        assert!(offset_mesh(&s, -12.0, 0.5).unwrap().is_empty());
    }
}
