//! Silicone sleeve over the stump and the core that moulds its inside.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::Plane;
use crate::mesh::bvh::Bvh;
use crate::mesh::sdf::Sdf;
use crate::mesh::{cut_with_plane, TriMesh};

use super::{check_closed, pick_component, DesignError, DesignParams};

/// The core runs this far past the extension plane, through the mould
/// opening, so it crosses the cavity boundary instead of ending on it.
pub const CORE_PRINT_MM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Sleeve {
    /// The silicone shell.
    pub solid: TriMesh,
    /// Core filling the sleeve cavity: the stump grown by the fit clearance,
    /// reaching [`CORE_PRINT_MM`] past the extension plane.
    pub mould: TriMesh,
    /// Outer envelope of the shell (cavity plus wall).
    pub outer: TriMesh,
    pub wall: WallStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallStats {
    pub samples: usize,
    pub median_mm: f64,
    pub min_mm: f64,
    pub max_mm: f64,
}

/// Sleeve cavity = stump grown by the fit clearance, cropped at the
/// extension plane; the shell is that cavity grown by the sleeve thickness,
/// minus the cavity.
///
/// Of the stump pieces beyond the extension plane, the one nearest
/// `finger_skin` is the stump finger. The returned core is the cavity
/// extended proximally by [`CORE_PRINT_MM`].
pub fn design_sleeve(stump_skin: &TriMesh, finger_skin: &TriMesh, params: &DesignParams) -> Result<Sleeve, DesignError> {
    params.validate()?;
    check_closed(stump_skin, "stump skin")?;
    check_closed(finger_skin, "finger skin")?;
    let ext = params
        .extension_plane
        .ok_or_else(|| DesignError::InvalidParameter("an extension plane is required".into()))?;
    let fb = finger_skin.bounds();
    let fc = finger_skin.volume_centroid();
    let nearest_piece = |plane: &Plane| -> Result<TriMesh, DesignError> {
        let cut = cut_with_plane(stump_skin, plane, true)?;
        pick_component(&cut, |c| {
            // box gap first, centroid distance breaks ties
            let b = c.bounds();
            let gap = (0..3)
                .map(|a| (b.min[a] - fb.max[a]).max(fb.min[a] - b.max[a]).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt();
            gap * 1e6 + (c.volume_centroid() - fc).norm()
        })
        .ok_or_else(|| DesignError::InvalidInput("extension plane does not intersect the stump".into()))
    };
    let piece = nearest_piece(&ext)?;
    let print_plane = ext.offset(CORE_PRINT_MM);
    let print_piece = nearest_piece(&print_plane)?;

    let half = |p: &Plane| Sdf::HalfSpace {
        point: p.point(),
        normal: p.normal(),
    };
    let base = Sdf::mesh(piece)?;
    let c = params.fit_clearance_mm;
    let t = params.sleeve_thickness_mm;
    let cavity = Sdf::Intersection(vec![Sdf::offset(base.clone(), c), half(&ext)]);
    let outer = Sdf::Intersection(vec![Sdf::offset(base, c + t), half(&ext)]);
    let core = Sdf::Intersection(vec![Sdf::offset(Sdf::mesh(print_piece)?, c), half(&print_plane)]);
    let h = params.detail_voxel_mm;
    let mould = core.to_mesh(h)?;
    let inner = cavity.to_mesh(h)?;
    let outer_mesh = outer.to_mesh(h)?;
    let solid = Sdf::difference(outer, cavity).to_mesh(h)?;

    let samples = sample_wall_thickness(&inner, &solid, Some((&ext, t + 2.0 * h)), params.wall_samples, params.seed);
    if samples.is_empty() {
        return Err(DesignError::InvalidInput("no sleeve wall could be sampled".into()));
    }
    let wall = wall_stats(&samples);
    let limit = 0.5 * t;
    if wall.min_mm < limit {
        return Err(DesignError::ThicknessViolation {
            min_mm: wall.min_mm,
            limit_mm: limit,
        });
    }
    Ok(Sleeve {
        solid,
        mould,
        outer: outer_mesh,
        wall,
    })
}

/// Wall thickness of `shell` measured from random points on `inner` along
/// its outward normal to the first outward-facing shell surface beyond it.
/// Points within `exclude.1` of plane `exclude.0` are skipped.
pub fn sample_wall_thickness(
    inner: &TriMesh,
    shell: &TriMesh,
    exclude: Option<(&Plane, f64)>,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    if inner.is_empty() || shell.is_empty() {
        return Vec::new();
    }
    let bvh = Bvh::new(shell);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for (p, tri) in inner.sample_surface(n, &mut rng) {
        if let Some((plane, d)) = exclude {
            if plane.signed_distance(&p).abs() < d {
                continue;
            }
        }
        let nrm = inner.triangle_normal(tri);
        let len = nrm.norm();
        if len == 0.0 {
            continue;
        }
        let dir = nrm / len;
        let hit = bvh.first_hit(&p, &dir, f64::INFINITY, |j| {
            let m = shell.triangle_normal(j);
            m.dot(&dir) <= 0.0
        });
        // the shell's inner surface coincides with `inner`; skip hits on it
        let hit = match hit {
            Some((t, _)) if t > 1e-3 => Some(t),
            Some(_) => bvh
                .first_hit(&(p + dir * 1e-3), &dir, f64::INFINITY, |j| shell.triangle_normal(j).dot(&dir) <= 0.0)
                .map(|(t, _)| t + 1e-3),
            None => None,
        };
        if let Some(t) = hit {
            out.push(t);
        }
    }
    out
}

fn wall_stats(samples: &[f64]) -> WallStats {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    let median = if m % 2 == 1 { s[m / 2] } else { 0.5 * (s[m / 2 - 1] + s[m / 2]) };
    WallStats {
        samples: m,
        median_mm: median,
        min_mm: s[0],
        max_mm: s[m - 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{cylinder_mesh, icosphere};
    use nalgebra::{Point3, Vector3};

    fn radii_at(mesh: &TriMesh, y: f64) -> Vec<f64> {
        mesh.vertices()
            .iter()
            .filter(|v| (v.y - y).abs() < 0.3)
            .map(|v| (v.x * v.x + v.z * v.z).sqrt())
            .collect()
    }

    fn setup(clearance: f64) -> (Sleeve, DesignParams) {
        let stump = cylinder_mesh(Point3::new(0.0, 0.0, 0.0), Vector3::y(), 20.0, 7.0, 256);
        let finger = icosphere(Point3::new(0.0, 26.0, 0.0), 5.0, 2);
        let params = DesignParams {
            fit_clearance_mm: clearance,
            extension_plane: Some(Plane::new(Point3::new(0.0, 4.0, 0.0), -Vector3::y()).unwrap()),
            wall_samples: 500,
            ..Default::default()
        };
        (design_sleeve(&stump, &finger, &params).unwrap(), params)
    }

    #[test]
    fn cylinder_stump_radii() {
        let (s, _) = setup(0.15);
        for y in [8.0, 12.0, 16.0] {
            let inner = radii_at(&s.mould, y);
            assert!(!inner.is_empty());
            assert!(inner.iter().all(|r| (r - 7.15).abs() < 0.2), "{inner:?}");
            let outer: Vec<f64> = radii_at(&s.solid, y).into_iter().filter(|&r| r > 7.9).collect();
            assert!(!outer.is_empty());
            assert!(outer.iter().all(|r| (r - 8.65).abs() < 0.2), "{outer:?}");
        }
        assert!((s.wall.median_mm - 1.5).abs() <= 0.15, "{:?}", s.wall);
        assert!(s.solid.is_closed() && s.mould.is_closed());
        // marching-cubes vertices may sit a hundredth of a voxel off the plane
        let slack = 0.01 * 0.2 + 1e-9;
        assert!((s.mould.bounds().min.y - (4.0 - CORE_PRINT_MM)).abs() <= slack);
    }

    #[test]
    fn zero_clearance_tracks_the_stump() {
        let (s, _) = setup(0.0);
        for y in [8.0, 12.0] {
            assert!(radii_at(&s.mould, y).iter().all(|r| (r - 7.0).abs() < 0.1));
        }
    }

    #[test]
    fn thin_wall_is_rejected() {
        let stump = cylinder_mesh(Point3::origin(), Vector3::y(), 20.0, 7.0, 64);
        let finger = icosphere(Point3::new(0.0, 26.0, 0.0), 5.0, 1);
        let params = DesignParams {
            sleeve_thickness_mm: 0.1,
            detail_voxel_mm: 0.4,
            extension_plane: Some(Plane::new(Point3::new(0.0, 4.0, 0.0), -Vector3::y()).unwrap()),
            ..Default::default()
        };
        let r = design_sleeve(&stump, &finger, &params);
        assert!(matches!(r, Err(DesignError::ThicknessViolation { .. })), "{r:?}");
    }
}
