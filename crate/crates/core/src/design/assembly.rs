//! End-to-end design of the mould set from a posed finger and the stump.

use serde::{Deserialize, Serialize};

use crate::geom::Plane;
use crate::mesh::sdf::Sdf;
use crate::mesh::{cut_with_plane, intersection_volume, signed_volume, validate_mesh, TriMesh, ValidationReport};
use crate::tolerance::{MAX_INTERFERENCE_MM3, VOLUME_CONSERVATION_REL_TOL};

use super::{
    design_connector, design_fins, design_sleeve, fin_normal_rank, key_interference, principal_axes,
    silicone_cavity_volume, split_mould, swept_interference, Connector, Conservation, DesignError, DesignParams, FingerModel,
    MouldAssembly, MouldInserts, Sleeve, WallStats,
};

/// Row spacing of the pairwise part interference integrals.
const PART_INTERFERENCE_SPACING_MM: f64 = 0.1;
/// Angles at which the connector key is tried.
const KEY_ANGLES_DEG: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
const SWEEP_STATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    pub name: String,
    pub triangles: usize,
    pub volume_mm3: f64,
    pub validation: ValidationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interference {
    pub a: String,
    pub b: String,
    pub volume_mm3: f64,
    /// False for pairs that are meant to overlap.
    pub checked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub parts: Vec<PartReport>,
    pub interference: Vec<Interference>,
    pub key_angles_deg: Vec<f64>,
    pub key_interference_mm3: Vec<f64>,
    /// Key angles at which the connector assembles.
    pub key_mating_angles: usize,
    pub swept_interference_mm3: Vec<f64>,
    pub fin_normal_rank: usize,
    pub wall: WallStats,
    pub pour_volume_mm3: f64,
    pub conservation: Conservation,
    /// Human-readable list of failed gates; empty when the set is printable.
    pub failures: Vec<String>,
}

impl AssemblyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DesignOutput {
    pub sleeve: Sleeve,
    pub connector: Connector,
    pub mould: MouldAssembly,
    pub report: AssemblyReport,
}

/// Sleeve, connector, fins and split mould for `finger` on `stump_skin`,
/// with every assembly gate evaluated.
///
/// The mould cavity is the finger skin joined to the sleeve's outer
/// surface. The bone insert is shortened where needed so it starts
/// `connector.gap_mm` beyond the sleeve mould's tip.
pub fn design_assembly(finger: &FingerModel, stump_skin: &TriMesh, params: &DesignParams) -> Result<DesignOutput, DesignError> {
    params.validate()?;
    let sleeve = design_sleeve(stump_skin, &finger.skin, params)?;
    design_with_sleeve(&finger.skin, &finger.bone, sleeve, params)
}

/// The part of [`design_assembly`] that follows the sleeve design.
///
/// Printable parts are rounded to `f32` coordinates, as they are stored in
/// STL, before the gates are evaluated.
pub fn design_with_sleeve(
    finger_skin: &TriMesh,
    finger_bone: &TriMesh,
    sleeve: Sleeve,
    params: &DesignParams,
) -> Result<DesignOutput, DesignError> {
    params.validate()?;
    let bone = trim_bone(finger_bone, &sleeve.mould, params.connector.gap_mm)?;
    let connector = design_connector(&bone, &sleeve.mould, params)?;
    let h = params.detail_voxel_mm;
    let envelope = Sdf::Union(vec![Sdf::mesh(finger_skin.clone())?, Sdf::mesh(sleeve.outer.clone())?]).to_mesh(h)?;
    let fins = design_fins(&envelope, std::slice::from_ref(&connector.sleeve_keyed), params)?;
    let inserts = MouldInserts {
        sleeve_mould: Some(connector.sleeve_keyed.clone()),
        bone_insert: Some(connector.bone_keyed.clone()),
        fins,
    };
    let mut mould = split_mould(&envelope, &inserts, params)?;
    for m in [
        &mut mould.half_a,
        &mut mould.half_b,
        &mut mould.sleeve_mould,
        &mut mould.bone_insert,
        &mut mould.finger_preview,
    ] {
        *m = m.quantized_f32()?;
    }
    let report = evaluate(&mould, &connector, &sleeve, params)?;
    Ok(DesignOutput {
        sleeve,
        connector,
        mould,
        report,
    })
}

/// Cuts the bone so it begins `gap` beyond the farthest point of `core`
/// along the bone's principal axis.
fn trim_bone(bone: &TriMesh, core: &TriMesh, gap: f64) -> Result<TriMesh, DesignError> {
    let (o, axes) = principal_axes(bone.vertices());
    let mut d = axes[0];
    if d.dot(&(o - core.volume_centroid())) < 0.0 {
        d = -d;
    }
    let reach = |m: &TriMesh, f: fn(f64, f64) -> f64, init: f64| {
        m.vertices().iter().map(|v| d.dot(&(v - o))).fold(init, f)
    };
    let tip = reach(core, f64::max, f64::NEG_INFINITY);
    let start = reach(bone, f64::min, f64::INFINITY);
    if start >= tip + gap {
        return Ok(bone.clone());
    }
    let plane = Plane::from_unit(o + d * (tip + gap), -d).expect("unit axis");
    let cut = cut_with_plane(bone, &plane, true)?;
    if cut.is_empty() {
        return Err(DesignError::InvalidInput("the sleeve mould reaches past the whole bone".into()));
    }
    Ok(cut)
}

fn evaluate(
    mould: &MouldAssembly,
    connector: &Connector,
    sleeve: &Sleeve,
    params: &DesignParams,
) -> Result<AssemblyReport, DesignError> {
    let mut failures = Vec::new();
    let parts = mould.parts();
    let mut reports = Vec::with_capacity(parts.len());
    for (name, mesh) in parts {
        let validation = validate_mesh(mesh);
        if !validation.is_printable() {
            failures.push(format!("{name} is not printable"));
        }
        reports.push(PartReport {
            name: name.into(),
            triangles: mesh.len(),
            volume_mm3: signed_volume(mesh)?,
            validation,
        });
    }

    let mut interference = Vec::new();
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            let (a, ma) = parts[i];
            let (b, mb) = parts[j];
            // the bone insert is cast inside the preview
            let checked = !matches!((a, b), ("bone_insert", "finger_preview"));
            let v = intersection_volume(ma, mb, PART_INTERFERENCE_SPACING_MM)?;
            if checked && v > MAX_INTERFERENCE_MM3 {
                failures.push(format!("{a} and {b} overlap by {v:.3} mm³"));
            }
            interference.push(Interference {
                a: a.into(),
                b: b.into(),
                volume_mm3: v,
                checked,
            });
        }
    }

    let key = key_interference(connector, &KEY_ANGLES_DEG)?;
    let key_mating_angles = key.iter().filter(|&&v| v <= MAX_INTERFERENCE_MM3).count();
    if key_mating_angles != 1 || key[0] > MAX_INTERFERENCE_MM3 {
        failures.push(format!("connector key mates at {key_mating_angles} of 4 angles"));
    }
    let sweep = swept_interference(connector, params.connector.depth_mm, SWEEP_STATIONS)?;
    if sweep.iter().any(|&v| v > MAX_INTERFERENCE_MM3) {
        failures.push("sleeve mould does not withdraw cleanly from the bone insert".into());
    }
    let rank = fin_normal_rank(&mould.fins.iter().map(|f| f.normal).collect::<Vec<_>>());
    if rank != 3 {
        failures.push(format!("fin normals span rank {rank}"));
    }
    let t = params.sleeve_thickness_mm;
    if (sleeve.wall.median_mm - t).abs() > 0.1 * t {
        failures.push(format!("median sleeve wall {:.3} mm is off the {t} mm target", sleeve.wall.median_mm));
    }
    if mould.conservation.rel_error > VOLUME_CONSERVATION_REL_TOL {
        failures.push(format!("mould volumes miss the block by {:.3} %", 100.0 * mould.conservation.rel_error));
    }
    Ok(AssemblyReport {
        parts: reports,
        interference,
        key_angles_deg: KEY_ANGLES_DEG.to_vec(),
        key_interference_mm3: key,
        key_mating_angles,
        swept_interference_mm3: sweep,
        fin_normal_rank: rank,
        wall: sleeve.wall,
        pour_volume_mm3: silicone_cavity_volume(mould)?,
        conservation: mould.conservation,
        failures,
    })
}
