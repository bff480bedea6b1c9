//! Synthetic hand phantoms.
//!
//! Two mirror-image hands, each a rounded palm slab with three capsule
//! fingers around capsule bones. The hand on the −x side has its middle
//! finger truncated; the matching finger of the other hand, mirrored, is the
//! ground truth for the missing part.
//!
//! Voxel x positions are measured from the mirror plane as
//! `(i − (n−1)/2)·h`, which is exactly antisymmetric in `i`, so mirrored
//! voxel centres receive bit-identical samples.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, Plane};
use crate::isosurface::{mesh_from_analytic_sdf, IsoParams};
use crate::mesh::TriMesh;
use crate::volume::{save_raw_volume, VolumeError, VoxelVolume};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HuLevels {
    pub air_hu: f64,
    pub soft_tissue_hu: f64,
    pub bone_hu: f64,
}

impl Default for HuLevels {
    fn default() -> Self {
        HuLevels {
            air_hu: -1000.0,
            soft_tissue_hu: 40.0,
            bone_hu: 700.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Seeds the optional sample noise.
    pub seed: u64,
    pub dims: [usize; 3],
    pub voxel_mm: f64,
    /// World x of the symmetry plane.
    pub mirror_x_mm: f64,
    pub finger_radius_mm: f64,
    /// Length of the straight part of each finger capsule.
    pub finger_length_mm: f64,
    pub bone_radius_mm: f64,
    /// Fraction of the finger length kept on the stump.
    pub truncation_fraction: f64,
    /// Soft tissue left over the cut bone end of the stump.
    pub stump_cover_mm: f64,
    pub hu: HuLevels,
    /// Standard deviation of mirrored Gaussian sample noise; 0 disables it.
    pub noise_sigma_hu: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            dims: [128, 128, 128],
            voxel_mm: 1.0,
            mirror_x_mm: 63.5,
            finger_radius_mm: 8.5,
            finger_length_mm: 56.0,
            bone_radius_mm: 5.5,
            truncation_fraction: 0.35,
            stump_cover_mm: 2.0,
            hu: HuLevels::default(),
            noise_sigma_hu: 0.0,
        }
    }
}

/// Gap between each hand and the mirror plane.
const MIDLINE_GAP_MM: f64 = 3.0;
/// Gap between neighbouring fingers.
const FINGER_GAP_MM: f64 = 2.0;
const PALM_START_Y_MM: f64 = 12.0;
const FINGER_BASE_Y_MM: f64 = 50.0;
/// The palm reaches this far past the finger bases.
const PALM_OVERLAP_MM: f64 = 4.0;
const PALM_ROUNDING_MM: f64 = 3.0;
/// Default sleeve extension plane, distal of the finger base.
const EXTENSION_OFFSET_MM: f64 = 6.0;
/// Voxels of air required around the hands.
const MIN_PAD_VOXELS: f64 = 2.0;

/// Analytic description of what the phantom contains.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub mirror_plane: Plane,
    /// Through the stump end; the normal points toward the hand, so the
    /// missing part is on the side opposite the normal.
    pub crop_plane: Plane,
    /// Default proximal limit of the sleeve, normal as for the crop plane.
    pub extension_plane: Plane,
    /// Axis of the truncated finger (distal direction +y).
    pub stump_axis_point: Point3<f64>,
    /// Missing part of the finger: skin and bone, meshed from their fields.
    pub missing_skin: TriMesh,
    pub missing_bone: TriMesh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: VoxelVolume,
    pub truth: PhantomTruth,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        self.validate_with_iso(IsoParams::DEFAULT_SKIN_HU, IsoParams::DEFAULT_BONE_HU)
    }

    /// Also checks that the iso values fall between the tissue levels.
    pub fn validate_with_iso(&self, skin_iso: f64, bone_iso: f64) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        let positive = [
            ("voxel_mm", self.voxel_mm),
            ("finger_radius_mm", self.finger_radius_mm),
            ("finger_length_mm", self.finger_length_mm),
            ("bone_radius_mm", self.bone_radius_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.truncation_fraction > 0.0 && self.truncation_fraction < 1.0) {
            return bad(format!(
                "truncation_fraction must be in (0, 1), got {}",
                self.truncation_fraction
            ));
        }
        if !(self.bone_radius_mm < self.finger_radius_mm) {
            return bad("bone radius must be smaller than finger radius".into());
        }
        if !(self.stump_cover_mm >= 0.0) || self.stump_cover_mm >= self.truncation_fraction * self.finger_length_mm {
            return bad("stump_cover_mm must be ≥ 0 and shorter than the stump".into());
        }
        if !(self.noise_sigma_hu >= 0.0 && self.noise_sigma_hu.is_finite()) {
            return bad("noise_sigma_hu must be ≥ 0".into());
        }
        if !self.mirror_x_mm.is_finite() {
            return bad("mirror_x_mm must be finite".into());
        }
        let h = &self.hu;
        if !(h.air_hu < skin_iso && skin_iso < h.soft_tissue_hu && h.soft_tissue_hu < bone_iso && bone_iso < h.bone_hu) {
            return bad(format!(
                "need air < skin iso < soft tissue < bone iso < bone, got {} < {skin_iso} < {} < {bone_iso} < {}",
                h.air_hu, h.soft_tissue_hu, h.bone_hu
            ));
        }
        let need = self.content_bounds();
        let have = self.volume_bounds();
        let pad = MIN_PAD_VOXELS * self.voxel_mm;
        if !(have.min.coords.iter().zip(need.min.coords.iter()).all(|(a, b)| *a <= b - pad)
            && have.max.coords.iter().zip(need.max.coords.iter()).all(|(a, b)| *a >= b + pad))
        {
            return bad(format!(
                "hands span {:?}..{:?} mm but the volume only covers {:?}..{:?} mm with {pad} mm padding",
                need.min.coords.as_slice(),
                need.max.coords.as_slice(),
                have.min.coords.as_slice(),
                have.max.coords.as_slice()
            ));
        }
        Ok(())
    }

    fn origin(&self) -> Point3<f64> {
        let h = self.voxel_mm;
        Point3::new(self.mirror_x_mm - (self.dims[0] as f64 - 1.0) * 0.5 * h, 0.0, 0.0)
    }

    fn centre_z(&self) -> f64 {
        (self.dims[2] as f64 - 1.0) * 0.5 * self.voxel_mm
    }

    fn volume_bounds(&self) -> Aabb {
        let o = self.origin();
        let e = Vector3::from(self.dims.map(|d| (d as f64 - 1.0) * self.voxel_mm));
        Aabb::new(o, o + e)
    }

    fn layout(&self) -> Layout {
        let r = self.finger_radius_mm;
        let pitch = 2.0 * r + FINGER_GAP_MM;
        let fingers = [0, 1, 2].map(|k| MIDLINE_GAP_MM + r + k as f64 * pitch);
        Layout {
            fingers,
            palm_u: (MIDLINE_GAP_MM + 0.5, fingers[2] + r - 1.0),
            palm_half_z: r + 0.5,
            tip_y: FINGER_BASE_Y_MM + self.finger_length_mm,
            cut_y: FINGER_BASE_Y_MM + self.truncation_fraction * self.finger_length_mm,
        }
    }

    fn content_bounds(&self) -> Aabb {
        let l = self.layout();
        let r = self.finger_radius_mm;
        let umax = l.fingers[2] + r;
        let zc = self.centre_z();
        Aabb::new(
            Point3::new(self.mirror_x_mm - umax, PALM_START_Y_MM, zc - r.max(l.palm_half_z)),
            Point3::new(self.mirror_x_mm + umax, l.tip_y + r, zc + r.max(l.palm_half_z)),
        )
    }
}

struct Layout {
    /// |u| of the finger axes.
    fingers: [f64; 3],
    /// |u| range of the palm.
    palm_u: (f64, f64),
    palm_half_z: f64,
    tip_y: f64,
    /// y of the stump end.
    cut_y: f64,
}

fn capsule_y(u: f64, y: f64, w: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let dy = y - y.clamp(y0, y1);
    (u * u + dy * dy + w * w).sqrt() - r
}

fn rounded_box(q: Vector3<f64>, half: Vector3<f64>, rounding: f64) -> f64 {
    let d = q.abs() - (half - Vector3::repeat(rounding));
    d.sup(&Vector3::zeros()).norm() + d.max().min(0.0) - rounding
}

/// Fields in hand coordinates: `u` from the mirror plane, `w` from the
/// volume's mid-z. The stump is the middle finger of the `u < 0` hand.
struct Fields<'a> {
    spec: &'a PhantomSpec,
    layout: Layout,
}

impl Fields<'_> {
    fn is_stump(&self, u: f64, k: usize) -> bool {
        u < 0.0 && k == 1
    }

    fn skin(&self, u: f64, y: f64, w: f64) -> f64 {
        let s = self.spec;
        let l = &self.layout;
        let au = u.abs();
        let palm_c = Vector3::new(
            0.5 * (l.palm_u.0 + l.palm_u.1),
            0.5 * (PALM_START_Y_MM + FINGER_BASE_Y_MM + PALM_OVERLAP_MM),
            0.0,
        );
        let palm_half = Vector3::new(
            0.5 * (l.palm_u.1 - l.palm_u.0),
            0.5 * (FINGER_BASE_Y_MM + PALM_OVERLAP_MM - PALM_START_Y_MM),
            l.palm_half_z,
        );
        let mut d = rounded_box(Vector3::new(au, y, w) - palm_c, palm_half, PALM_ROUNDING_MM);
        for (k, &fu) in l.fingers.iter().enumerate() {
            let f = capsule_y(au - fu, y, w, FINGER_BASE_Y_MM, l.tip_y, s.finger_radius_mm);
            let f = if self.is_stump(u, k) { f.max(y - l.cut_y) } else { f };
            d = d.min(f);
        }
        d
    }

    fn bone(&self, u: f64, y: f64, w: f64) -> f64 {
        let s = self.spec;
        let l = &self.layout;
        let mut d = f64::INFINITY;
        for (k, &fu) in l.fingers.iter().enumerate() {
            let b = capsule_y(u.abs() - fu, y, w, FINGER_BASE_Y_MM, l.tip_y, s.bone_radius_mm);
            let b = if self.is_stump(u, k) {
                b.max(y - (l.cut_y - s.stump_cover_mm))
            } else {
                b
            };
            d = d.min(b);
        }
        d
    }
}

/// Partial-volume occupancy of a voxel whose centre lies `d` from a surface.
fn occupancy(d: f64, h: f64) -> f64 {
    (0.5 - d / h).clamp(0.0, 1.0)
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let fields = Fields {
        spec,
        layout: spec.layout(),
    };
    let [nx, ny, nz] = spec.dims;
    let h = spec.voxel_mm;
    let hu = spec.hu;
    let half_x = (nx as f64 - 1.0) * 0.5;
    let half_z = (nz as f64 - 1.0) * 0.5;
    let mut samples = vec![0f32; nx * ny * nz];
    for k in 0..nz {
        let w = (k as f64 - half_z) * h;
        for j in 0..ny {
            let y = j as f64 * h;
            let row = &mut samples[nx * (j + ny * k)..nx * (j + ny * k + 1)];
            for (i, v) in row.iter_mut().enumerate() {
                let u = (i as f64 - half_x) * h;
                let soft = occupancy(fields.skin(u, y, w), h);
                let bone = occupancy(fields.bone(u, y, w), h);
                *v = (hu.air_hu + (hu.soft_tissue_hu - hu.air_hu) * soft + (hu.bone_hu - hu.soft_tissue_hu) * bone) as f32;
            }
        }
    }
    if spec.noise_sigma_hu > 0.0 {
        add_mirrored_noise(&mut samples, spec);
    }
    let origin = spec.origin();
    let volume = VoxelVolume::axis_aligned(spec.dims, [h; 3], origin.coords.into(), samples)?;
    let truth = ground_truth(spec, &fields)?;
    Ok(Phantom { volume, truth })
}

fn add_mirrored_noise(samples: &mut [f32], spec: &PhantomSpec) {
    let [nx, ny, nz] = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma_hu).expect("sigma validated");
    for k in 0..nz {
        for j in 0..ny {
            let base = nx * (j + ny * k);
            for i in 0..nx.div_ceil(2) {
                let e = normal.sample(&mut rng) as f32;
                samples[base + i] += e;
                if nx - 1 - i != i {
                    samples[base + nx - 1 - i] += e;
                }
            }
        }
    }
}

fn ground_truth(spec: &PhantomSpec, f: &Fields) -> Result<PhantomTruth, PhantomError> {
    let l = &f.layout;
    let zc = spec.centre_z();
    let fu = l.fingers[1];
    let axis_x = spec.mirror_x_mm - fu;
    let stump_axis_point = Point3::new(axis_x, FINGER_BASE_Y_MM, zc);
    let plane = |y: f64| Plane::from_unit(Point3::new(axis_x, y, zc), -Vector3::y()).expect("unit normal");
    let r = spec.finger_radius_mm;
    let rb = spec.bone_radius_mm;
    // the missing part is the intact finger beyond the cut, placed on the stump
    let capsule = |p: &Point3<f64>, radius: f64| {
        capsule_y(p.x - axis_x, p.y, p.z - zc, FINGER_BASE_Y_MM, l.tip_y, radius).max(l.cut_y - p.y)
    };
    let fine = spec.voxel_mm * 0.25;
    let bounds = |radius: f64| {
        Aabb::new(
            Point3::new(axis_x - radius, l.cut_y, zc - radius),
            Point3::new(axis_x + radius, l.tip_y + radius, zc + radius),
        )
        .inflated(2.0 * fine)
    };
    let to_err = |e: crate::isosurface::IsoError| PhantomError::InvalidSpec(e.to_string());
    let missing_skin = mesh_from_analytic_sdf(|p| capsule(p, r), &bounds(r), fine).map_err(to_err)?;
    let missing_bone = mesh_from_analytic_sdf(|p| capsule(p, rb), &bounds(rb), fine).map_err(to_err)?;
    Ok(PhantomTruth {
        mirror_plane: Plane::from_unit(Point3::new(spec.mirror_x_mm, 0.0, zc), Vector3::x()).expect("unit normal"),
        crop_plane: plane(l.cut_y),
        extension_plane: plane(FINGER_BASE_Y_MM + EXTENSION_OFFSET_MM),
        stump_axis_point,
        missing_skin,
        missing_bone,
    })
}

/// Generates the phantom volume and writes it as a raw fixture at `header`.
pub fn write_phantom(spec: &PhantomSpec, header: &Path) -> Result<Phantom, PhantomError> {
    let p = generate_phantom(spec)?;
    save_raw_volume(&p.volume, header)?;
    Ok(p)
}
