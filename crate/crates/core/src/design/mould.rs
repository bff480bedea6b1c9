//! Two-part split mould around the silicone cavity.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{orthonormal_basis, Aabb, Plane};
use crate::isosurface::mesh_sdf_samples;
use crate::mesh::primitives::aabb_mesh;
use crate::mesh::sdf::{Grid, Sdf};
use crate::mesh::{
    boolean_with, cut_with_plane, intersection_volume, signed_volume, triangle_area, BooleanKind, BooleanOptions,
    BooleanPath, TriMesh,
};

use super::{check_closed, principal_axes, DesignError, DesignParams, Fin};

/// Exact clipping is used below this cavity size when nothing else is cut.
const EXACT_TRIANGLE_LIMIT: usize = 5000;
/// The mould halves stand off the parts they enclose by this much so the
/// coarser mould lattice never cuts into them.
const MOULD_STANDOFF_MM: f64 = 0.05;
/// Screw holes run this far past the block faces.
const HOLE_OVERRUN_MM: f64 = 1.0;
/// Row spacing for fin stub volumes.
const STUB_SPACING_MM: f64 = 0.05;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MouldInserts {
    /// Core forming the sleeve's inner surface; the fins are joined to it.
    pub sleeve_mould: Option<TriMesh>,
    pub bone_insert: Option<TriMesh>,
    pub fins: Vec<Fin>,
}

impl MouldInserts {
    fn is_empty(&self) -> bool {
        self.sleeve_mould.is_none() && self.bone_insert.is_none() && self.fins.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MouldAssembly {
    pub half_a: TriMesh,
    pub half_b: TriMesh,
    /// Sleeve core with its fins.
    pub sleeve_mould: TriMesh,
    pub bone_insert: TriMesh,
    /// The cast silicone together with the bone insert and fin stubs.
    pub finger_preview: TriMesh,
    pub fins: Vec<Fin>,
    /// Half A lies opposite the normal.
    pub split_plane: Plane,
    pub block: Aabb,
    pub screw_holes: Vec<TriMesh>,
    pub path: BooleanPath,
    pub conservation: Conservation,
}

impl MouldAssembly {
    /// The five printed or cast solids, named.
    pub fn parts(&self) -> [(&'static str, &TriMesh); 5] {
        [
            ("mould_half_a", &self.half_a),
            ("mould_half_b", &self.half_b),
            ("sleeve_mould", &self.sleeve_mould),
            ("bone_insert", &self.bone_insert),
            ("finger_preview", &self.finger_preview),
        ]
    }
}

/// Volume bookkeeping of the split: the halves plus everything removed from
/// the block must add up to the block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub block_mm3: f64,
    pub half_a_mm3: f64,
    pub half_b_mm3: f64,
    pub removed_mm3: f64,
    pub rel_error: f64,
}

impl Conservation {
    fn new(block: f64, a: f64, b: f64, removed: f64) -> Self {
        Conservation {
            block_mm3: block,
            half_a_mm3: a,
            half_b_mm3: b,
            removed_mm3: removed,
            rel_error: ((a + b + removed - block) / block).abs(),
        }
    }
}

/// Among the world planes through the cavity centroid that contain the
/// axis closest to the cavity's principal axis, the one with the larger
/// cross-section (ties to the lower axis index).
pub fn default_split_plane(cavity: &TriMesh) -> Result<Plane, DesignError> {
    check_closed(cavity, "cavity")?;
    let (_, axes) = principal_axes(cavity.vertices());
    let along = (0..3).max_by(|&a, &b| axes[0][a].abs().total_cmp(&axes[0][b].abs()).then(b.cmp(&a))).unwrap();
    let c = cavity.volume_centroid();
    let mut best: Option<(f64, Plane)> = None;
    for a in (0..3).filter(|&a| a != along) {
        let mut n = Vector3::zeros();
        n[a] = 1.0;
        let plane = Plane::from_unit(c, n).expect("axis normal");
        let area = cross_section_area(cavity, &plane)?;
        if best.as_ref().map_or(true, |(b, _)| area > *b) {
            best = Some((area, plane));
        }
    }
    Ok(best.expect("two candidate axes").1)
}

fn cross_section_area(mesh: &TriMesh, plane: &Plane) -> Result<f64, DesignError> {
    let cut = cut_with_plane(mesh, plane, true)?;
    Ok((0..cut.len())
        .map(|i| cut.triangle(i))
        .filter(|t| t.iter().all(|p| plane.signed_distance(p).abs() < 1e-9))
        .map(|t| triangle_area(&t[0], &t[1], &t[2]))
        .sum())
}

/// Corner screw holes normal to the split plane, spanning the block.
fn screw_holes(block: &Aabb, plane: &Plane, params: &DesignParams) -> Vec<Sdf> {
    if params.screws.count == 0 {
        return Vec::new();
    }
    let n = plane.normal();
    let (u, v) = orthonormal_basis(&n);
    let corners = block.corners();
    let span = |d: &Vector3<f64>| {
        corners
            .iter()
            .map(|p| p.coords.dot(d))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
    };
    let (u0, u1) = span(&u);
    let (v0, v1) = span(&v);
    let (n0, n1) = span(&n);
    let s = params.screws.inset_mm;
    let mut holes = Vec::with_capacity(4);
    for (a, b) in [(u0 + s, v0 + s), (u1 - s, v0 + s), (u1 - s, v1 - s), (u0 + s, v1 - s)] {
        let base = Point3::from(u * a + v * b + n * (n0 - HOLE_OVERRUN_MM));
        holes.push(Sdf::Cylinder {
            base,
            axis: n,
            length: n1 - n0 + 2.0 * HOLE_OVERRUN_MM,
            radius: 0.5 * params.screws.hole_diameter_mm,
        });
    }
    holes
}

/// Block = cavity bounds grown by the margin, cut at the split plane; each
/// half loses the cavity, the inserts, the fins and the screw holes.
///
/// With no inserts, no screws and a small cavity the halves are clipped
/// exactly. Otherwise everything removed from the block is sampled once on
/// the mould lattice and the two halves and the removed volume are meshed
/// from those samples, so they tile the block.
pub fn split_mould(cavity: &TriMesh, inserts: &MouldInserts, params: &DesignParams) -> Result<MouldAssembly, DesignError> {
    params.validate()?;
    check_closed(cavity, "cavity")?;
    if let Some(m) = &inserts.sleeve_mould {
        check_closed(m, "sleeve mould")?;
    }
    if let Some(m) = &inserts.bone_insert {
        check_closed(m, "bone insert")?;
    }
    let block = cavity.bounds().inflated(params.block_margin_mm);
    let plane = match params.split_plane {
        Some(p) => p,
        None => default_split_plane(cavity)?,
    };
    let sides: Vec<f64> = block.corners().iter().map(|c| plane.signed_distance(c)).collect();
    if sides.iter().all(|&s| s >= 0.0) || sides.iter().all(|&s| s <= 0.0) {
        return Err(DesignError::SplitMiss);
    }
    let holes = screw_holes(&block, &plane, params);

    if inserts.is_empty() && holes.is_empty() && cavity.len() <= EXACT_TRIANGLE_LIMIT {
        if let Some(m) = exact_split(cavity, &block, &plane)? {
            return Ok(m);
        }
    }

    // everything that is not mould material
    let mut removed = vec![Sdf::mesh(cavity.clone())?];
    let mut sleeve_parts = Vec::new();
    if let Some(m) = &inserts.sleeve_mould {
        sleeve_parts.push(Sdf::mesh(m.clone())?);
    }
    sleeve_parts.extend(inserts.fins.iter().map(Fin::sdf));
    let sleeve_sdf = (!sleeve_parts.is_empty()).then(|| Sdf::Union(sleeve_parts));
    removed.extend(sleeve_sdf.iter().cloned());
    if let Some(m) = &inserts.bone_insert {
        removed.push(Sdf::mesh(m.clone())?);
    }
    let mut removed = vec![Sdf::offset(Sdf::Union(removed), MOULD_STANDOFF_MM)];
    removed.extend(holes.iter().cloned());
    let removed = Sdf::Union(removed);

    let h = params.mould_voxel_mm;
    let grid = Grid::covering(&block, h, 2.0 * h);
    let s = removed.sample(&grid, 3.0 * h);
    let box_sdf = Sdf::Box(block);
    let mut fa = vec![0.0; grid.len()];
    let mut fb = vec![0.0; grid.len()];
    let mut fu = vec![0.0; grid.len()];
    for (n, &sv) in s.iter().enumerate() {
        let p = grid.point_at(n);
        let bx = box_sdf.eval(&p);
        // a lattice point on the plane belongs to exactly one half
        let pd = match plane.signed_distance(&p) {
            d if d == 0.0 => f64::MIN_POSITIVE,
            d => d,
        };
        fa[n] = bx.max(-sv).max(pd);
        fb[n] = bx.max(-sv).max(-pd);
        fu[n] = bx.max(sv);
    }
    let half_a = mesh_sdf_samples(&fa, &grid);
    let half_b = mesh_sdf_samples(&fb, &grid);
    let cut_away = mesh_sdf_samples(&fu, &grid);
    let conservation = Conservation::new(
        block.volume(),
        signed_volume(&half_a)?,
        signed_volume(&half_b)?,
        signed_volume(&cut_away)?,
    );

    // preview and sleeve mould from one set of samples so their shared
    // surface is identical
    let hd = params.detail_voxel_mm;
    let (finger_preview, sleeve_mould) = match &sleeve_sdf {
        Some(ss) => {
            let bounds = cavity.bounds().union(&ss.bounds().expect("bounded sleeve mould"));
            let g = Grid::covering(&bounds, hd, 2.0 * hd);
            let fc = Sdf::mesh(cavity.clone())?.sample(&g, 3.0 * hd);
            let fp = ss.sample(&g, 3.0 * hd);
            let fv: Vec<f64> = fc.iter().zip(&fp).map(|(c, p)| c.max(-p)).collect();
            (mesh_sdf_samples(&fv, &g), mesh_sdf_samples(&fp, &g))
        }
        None => (cavity.clone(), TriMesh::empty()),
    };
    Ok(MouldAssembly {
        half_a,
        half_b,
        sleeve_mould,
        bone_insert: inserts.bone_insert.clone().unwrap_or_default(),
        finger_preview,
        fins: inserts.fins.clone(),
        split_plane: plane,
        block,
        screw_holes: holes.iter().map(|hs| hs.to_mesh(hd)).collect::<Result<_, _>>()?,
        path: BooleanPath::Voxel,
        conservation,
    })
}

/// Clipped halves for a bare cavity; `None` if the exact route gave up.
fn exact_split(cavity: &TriMesh, block: &Aabb, plane: &Plane) -> Result<Option<MouldAssembly>, DesignError> {
    let block_mesh = aabb_mesh(block.min, block.max);
    let opts = BooleanOptions::default();
    let mut halves = Vec::with_capacity(2);
    for p in [*plane, plane.flipped()] {
        let side = cut_with_plane(&block_mesh, &p, true)?;
        let (m, path) = boolean_with(&side, cavity, BooleanKind::Difference, &opts)?;
        if path == BooleanPath::Voxel {
            return Ok(None);
        }
        halves.push(m);
    }
    let half_b = halves.pop().expect("two halves");
    let half_a = halves.pop().expect("two halves");
    let conservation = Conservation::new(
        block.volume(),
        signed_volume(&half_a)?,
        signed_volume(&half_b)?,
        signed_volume(cavity)?,
    );
    Ok(Some(MouldAssembly {
        half_a,
        half_b,
        sleeve_mould: TriMesh::empty(),
        bone_insert: TriMesh::empty(),
        finger_preview: cavity.clone(),
        fins: Vec::new(),
        split_plane: *plane,
        block: *block,
        screw_holes: Vec::new(),
        path: BooleanPath::Exact,
        conservation,
    }))
}

/// Silicone to pour: the preview less the bone insert and the fin stubs
/// standing inside it.
pub fn silicone_cavity_volume(assembly: &MouldAssembly) -> Result<f64, DesignError> {
    let preview = signed_volume(&assembly.finger_preview)?;
    let bone = if assembly.bone_insert.is_empty() { 0.0 } else { signed_volume(&assembly.bone_insert)? };
    let mut stubs = 0.0;
    for f in &assembly.fins {
        stubs += intersection_volume(&f.mesh, &assembly.finger_preview, STUB_SPACING_MM)?;
    }
    Ok(preview - bone - stubs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;
    use crate::tolerance::VOLUME_CONSERVATION_REL_TOL;
    use std::f64::consts::PI;

    fn mid_z() -> Option<Plane> {
        Some(Plane::new(Point3::origin(), Vector3::z()).unwrap())
    }

    #[test]
    fn sphere_halves_match_the_analytic_split() {
        let sphere = icosphere(Point3::origin(), 5.0, 4);
        let p = DesignParams { split_plane: mid_z(), ..Default::default() };
        let m = split_mould(&sphere, &MouldInserts::default(), &p).unwrap();
        assert_eq!(m.path, BooleanPath::Voxel);
        assert!((m.block.extent() - Vector3::repeat(26.0)).norm() < 0.01);
        let hole = PI * 1.7f64.powi(2) * 26.0;
        let expect = (26f64.powi(3) - 4.0 / 3.0 * PI * 125.0 - 4.0 * hole) / 2.0;
        for v in [m.conservation.half_a_mm3, m.conservation.half_b_mm3] {
            assert!(((v - expect) / expect).abs() < VOLUME_CONSERVATION_REL_TOL, "{v} vs {expect}");
        }
        assert!(m.conservation.rel_error < VOLUME_CONSERVATION_REL_TOL);
        assert!(m.half_a.is_closed() && m.half_b.is_closed());
        // vertices may sit a hundredth of a voxel off the plane
        let slack = 0.01 * p.mould_voxel_mm + 1e-9;
        assert!(m.half_a.bounds().max.z <= slack && m.half_b.bounds().min.z >= -slack);
    }

    #[test]
    fn bare_cavity_is_split_exactly() {
        let sphere = icosphere(Point3::new(0.3, -0.2, 0.1), 5.0, 2);
        let p = DesignParams {
            split_plane: mid_z(),
            screws: crate::design::ScrewParams { count: 0, ..Default::default() },
            ..Default::default()
        };
        let m = split_mould(&sphere, &MouldInserts::default(), &p).unwrap();
        assert_eq!(m.path, BooleanPath::Exact);
        assert!(m.conservation.rel_error < 1e-6, "{:?}", m.conservation);
        assert!(m.half_a.is_closed() && m.half_b.is_closed());
    }

    #[test]
    fn plane_outside_the_block_misses() {
        let sphere = icosphere(Point3::origin(), 5.0, 2);
        let p = DesignParams {
            split_plane: Some(Plane::new(Point3::new(0.0, 0.0, 100.0), Vector3::z()).unwrap()),
            ..Default::default()
        };
        assert!(matches!(split_mould(&sphere, &MouldInserts::default(), &p), Err(DesignError::SplitMiss)));
    }

    #[test]
    fn default_plane_contains_the_long_axis() {
        let rod = crate::mesh::primitives::aabb_mesh(Point3::new(0.0, 0.0, 0.0), Point3::new(4.0, 30.0, 8.0));
        let p = default_split_plane(&rod).unwrap();
        // larger section is the 30 × 8 one, normal along x
        assert!((p.normal() - Vector3::x()).norm() < 1e-12);
        assert!((p.point() - Point3::new(2.0, 15.0, 4.0)).norm() < 1e-9);
    }

    #[test]
    fn pour_volume_without_bone_is_preview_less_stubs() {
        let sphere = icosphere(Point3::origin(), 5.0, 2);
        let p = DesignParams { split_plane: mid_z(), ..Default::default() };
        let mut m = split_mould(&sphere, &MouldInserts::default(), &p).unwrap();
        assert!((silicone_cavity_volume(&m).unwrap() - signed_volume(&sphere).unwrap()).abs() < 1e-9);
        m.bone_insert = m.finger_preview.clone();
        assert!(silicone_cavity_volume(&m).unwrap().abs() < 1e-9);
    }
}
