//! Stage functions and their on-disk artifacts.
//!
//! Every stage reads its inputs from `<out>/stages/` and writes its outputs
//! there through a temporary file and a rename. `export` places the five
//! printable parts and `manifest.json` in `<out>` itself.

use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use digitforge_core::design::{
    build_finger_model, design_sleeve, design_with_sleeve, AssemblyReport, Conservation, DesignError, Interference,
    Sleeve, WallStats,
};
use digitforge_core::isosurface::extract_isosurface;
use digitforge_core::mesh::{signed_volume, BooleanPath, ValidationReport};
use digitforge_core::phantom::{generate_phantom, Phantom};
use digitforge_core::registration::estimate_mirror_plane;
use digitforge_core::stl::{decode_stl, encode_stl};
use digitforge_core::volume::{load_dicom_series, load_raw_volume, save_raw_volume};
use digitforge_core::{Plane, RigidTransform, TriMesh, VoxelVolume};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{InputSource, PipelineConfig};
use crate::{CliError, Stage};

pub const STAGES_DIR: &str = "stages";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PART_NAMES: [&str; 5] = ["mould_half_a", "mould_half_b", "sleeve_mould", "bone_insert", "finger_preview"];

const VOLUME_HEADER: &str = "volume.hdr";
const TRUTH_FILE: &str = "truth.json";
const MIRROR_FILE: &str = "mirror.json";
const REGISTRATION_FILE: &str = "registration.json";
const SLEEVE_FILE: &str = "sleeve.json";
const MOULD_FILE: &str = "mould.json";

/// Ground-truth planes of a phantom input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthPlanes {
    pub mirror_plane: Plane,
    pub crop_plane: Plane,
    pub extension_plane: Plane,
}

impl TruthPlanes {
    fn of(p: &Phantom) -> Self {
        TruthPlanes {
            mirror_plane: p.truth.mirror_plane,
            crop_plane: p.truth.crop_plane,
            extension_plane: p.truth.extension_plane,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MirrorRecord {
    mirror_plane: Plane,
    /// False when the plane came from the config.
    estimated: bool,
    stump_hand_volume_mm3: f64,
    contra_hand_volume_mm3: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistrationRecord {
    crop_plane: Plane,
    pose: RigidTransform,
    icp_rms_mm: f64,
    icp_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SleeveRecord {
    extension_plane: Plane,
    wall: WallStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MouldRecord {
    split_plane: Plane,
    block_min_mm: [f64; 3],
    block_max_mm: [f64; 3],
    boolean_path: BooleanPath,
    report: AssemblyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPart {
    pub name: String,
    pub file: String,
    pub stl_bytes: u64,
    pub triangles: usize,
    pub volume_mm3: f64,
    pub validation: ValidationReport,
}

/// Summary of a finished run, written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub parts: Vec<ManifestPart>,
    pub mirror_plane: Plane,
    pub crop_plane: Plane,
    pub extension_plane: Plane,
    pub split_plane: Plane,
    pub registration_rms_mm: f64,
    pub icp_iterations: usize,
    pub sleeve_wall: WallStats,
    pub pour_volume_mm3: f64,
    pub interference: Vec<Interference>,
    pub key_angles_deg: Vec<f64>,
    pub key_interference_mm3: Vec<f64>,
    pub key_mating_angles: usize,
    pub swept_interference_mm3: Vec<f64>,
    pub fin_normal_rank: usize,
    pub conservation: Conservation,
    pub failures: Vec<String>,
    pub passed: bool,
}

/// Runs one stage against the output directory `root` and returns the
/// failed validation gates, if any.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig, root: &Path) -> Result<Vec<String>, CliError> {
    let cx = Cx { cfg, root, stage };
    match stage {
        Stage::Ingest => cx.ingest(),
        Stage::Mesh => cx.mesh(),
        Stage::Mirror => cx.mirror(),
        Stage::Register => cx.register(),
        Stage::Sleeve => cx.sleeve(),
        Stage::Mould => cx.mould(),
        Stage::Export => cx.export(),
        Stage::Phantom => cx.phantom(),
    }
}

/// Runs every pipeline stage in a staging directory inside `out` and moves
/// the results into place only once all stages have finished.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Manifest, CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let staging = tempfile::Builder::new()
        .prefix(".digitforge-staging-")
        .tempdir_in(out)
        .map_err(io_err(out))?;
    let work = staging.path();
    for stage in Stage::PIPELINE {
        run_stage(stage, cfg, work)?;
    }
    let manifest: Manifest = read_json_file(Stage::Export, &work.join(MANIFEST_FILE))?;

    let stages = out.join(STAGES_DIR);
    if stages.exists() {
        let old = work.join("previous-stages");
        fs::rename(&stages, &old).map_err(io_err(&stages))?;
    }
    fs::rename(work.join(STAGES_DIR), &stages).map_err(io_err(&stages))?;
    for name in PART_NAMES.iter().map(|n| format!("{n}.stl")).chain([MANIFEST_FILE.to_string()]) {
        let dst = out.join(&name);
        fs::rename(work.join(&name), &dst).map_err(io_err(&dst))?;
    }
    Ok(manifest)
}

struct Cx<'a> {
    cfg: &'a PipelineConfig,
    root: &'a Path,
    stage: Stage,
}

impl Cx<'_> {
    fn dir(&self) -> PathBuf {
        self.root.join(STAGES_DIR)
    }

    fn need(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.dir().join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingUpstreamArtifact { stage: self.stage, path: p })
        }
    }

    fn fail(&self) -> impl Fn(&dyn Display) -> CliError + '_ {
        move |e| CliError::Stage {
            stage: self.stage,
            cause: e.to_string(),
        }
    }

    fn design_err(&self, e: DesignError) -> CliError {
        let gate = matches!(
            e,
            DesignError::BoneOutsideSkin { .. }
                | DesignError::ThicknessViolation { .. }
                | DesignError::AxisMiss(_)
                | DesignError::RankDeficient(_)
                | DesignError::SplitMiss
        );
        let cause = e.to_string();
        if gate {
            CliError::Gate { stage: self.stage, cause }
        } else {
            CliError::Stage { stage: self.stage, cause }
        }
    }

    fn read_mesh(&self, name: &str) -> Result<TriMesh, CliError> {
        let p = self.need(name)?;
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        decode_stl(&bytes).map_err(|e| self.fail()(&format!("{}: {e}", p.display())))
    }

    fn write_mesh(&self, name: &str, mesh: &TriMesh) -> Result<(), CliError> {
        let bytes = encode_stl(mesh).map_err(|e| self.fail()(&e))?;
        write_atomic(&self.dir().join(name), &bytes)
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        read_json_file(self.stage, &self.need(name)?)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        write_atomic(&self.dir().join(name), &json_bytes(value))
    }

    fn truth(&self) -> Result<TruthPlanes, CliError> {
        self.read_json(TRUTH_FILE)
    }

    fn ingest(&self) -> Result<Vec<String>, CliError> {
        let truth = self.dir().join(TRUTH_FILE);
        let volume = match self.cfg.source() {
            InputSource::Dicom(d) => load_dicom_series(d).map_err(|e| self.fail()(&e))?,
            InputSource::Raw(h) => load_raw_volume(h).map_err(|e| self.fail()(&e))?,
            InputSource::Phantom(_) => {
                let p = generate_phantom(&self.cfg.phantom_spec()).map_err(|e| self.fail()(&e))?;
                self.write_json(TRUTH_FILE, &TruthPlanes::of(&p))?;
                p.volume
            }
        };
        if !matches!(self.cfg.source(), InputSource::Phantom(_)) && truth.exists() {
            fs::remove_file(&truth).map_err(io_err(&truth))?;
        }
        save_volume_atomic(&volume, &self.dir(), "volume")?;
        Ok(Vec::new())
    }

    fn mesh(&self) -> Result<Vec<String>, CliError> {
        let hdr = self.need(VOLUME_HEADER)?;
        let volume = load_raw_volume(&hdr).map_err(|e| self.fail()(&e))?;
        let skin = extract_isosurface(&volume, &self.cfg.skin_iso()).map_err(|e| self.fail()(&e))?;
        let bone = extract_isosurface(&volume, &self.cfg.bone_iso()).map_err(|e| self.fail()(&e))?;
        if skin.is_empty() || bone.is_empty() {
            return Err(self.fail()(&"an iso value produced an empty surface"));
        }
        self.write_mesh("skin.stl", &skin)?;
        self.write_mesh("bone.stl", &bone)?;
        Ok(Vec::new())
    }

    /// The two largest skin components are the hands; the smaller of them
    /// is the stump hand. Bone components go with the hand on their side of
    /// the mirror plane.
    fn mirror(&self) -> Result<Vec<String>, CliError> {
        let skin = self.read_mesh("skin.stl")?;
        let bone = self.read_mesh("bone.stl")?;
        let mut hands = Vec::new();
        for c in skin.connected_components() {
            let v = signed_volume(&c).map_err(|e| self.fail()(&e))?;
            hands.push((v, c));
        }
        hands.sort_by(|a, b| b.0.total_cmp(&a.0));
        if hands.len() < 2 {
            return Err(self.fail()(&format!(
                "the skin surface has {} component(s); two hands are required",
                hands.len()
            )));
        }
        hands.truncate(2);
        let (contra_v, contra) = hands.remove(0);
        let (stump_v, stump) = hands.remove(0);
        let (plane, estimated) = match self.cfg.mirror_plane {
            Some(p) => (p, false),
            None => (estimate_mirror_plane(&stump, &contra).map_err(|e| self.fail()(&e))?, true),
        };
        let side = |m: &TriMesh| plane.signed_distance(&m.volume_centroid()) > 0.0;
        let contra_side = side(&contra);
        if side(&stump) == contra_side {
            return Err(self.fail()(&"both hands lie on the same side of the mirror plane"));
        }
        let bones: Vec<TriMesh> = bone.connected_components().into_iter().filter(|c| side(c) == contra_side).collect();
        if bones.is_empty() {
            return Err(self.fail()(&"no bone lies on the contralateral side"));
        }
        let contra_bone = TriMesh::merged(&bones.iter().collect::<Vec<_>>());
        self.write_mesh("stump_skin.stl", &stump)?;
        self.write_mesh("contra_skin.stl", &contra)?;
        self.write_mesh("contra_bone.stl", &contra_bone)?;
        self.write_json(
            MIRROR_FILE,
            &MirrorRecord {
                mirror_plane: plane,
                estimated,
                stump_hand_volume_mm3: stump_v,
                contra_hand_volume_mm3: contra_v,
            },
        )?;
        Ok(Vec::new())
    }

    fn register(&self) -> Result<Vec<String>, CliError> {
        let stump = self.read_mesh("stump_skin.stl")?;
        let contra = self.read_mesh("contra_skin.stl")?;
        let contra_bone = self.read_mesh("contra_bone.stl")?;
        let mirror: MirrorRecord = self.read_json(MIRROR_FILE)?;
        let crop = match self.cfg.crop_plane {
            Some(p) => p,
            None => self.truth()?.crop_plane,
        };
        let finger = build_finger_model(&contra, &contra_bone, &mirror.mirror_plane, &crop, &stump, &self.cfg.icp_params())
            .map_err(|e| self.design_err(e))?;
        self.write_mesh("finger_skin.stl", &finger.skin)?;
        self.write_mesh("finger_bone.stl", &finger.bone)?;
        self.write_json(
            REGISTRATION_FILE,
            &RegistrationRecord {
                crop_plane: crop,
                pose: finger.pose,
                icp_rms_mm: finger.icp_rms_mm,
                icp_history: finger.icp_history,
            },
        )?;
        Ok(Vec::new())
    }

    fn sleeve(&self) -> Result<Vec<String>, CliError> {
        let stump = self.read_mesh("stump_skin.stl")?;
        let finger = self.read_mesh("finger_skin.stl")?;
        let mut params = self.cfg.design_params();
        let ext = match params.extension_plane {
            Some(p) => p,
            None => self.truth()?.extension_plane,
        };
        params.extension_plane = Some(ext);
        let sleeve = design_sleeve(&stump, &finger, &params).map_err(|e| self.design_err(e))?;
        self.write_mesh("sleeve_solid.stl", &sleeve.solid)?;
        self.write_mesh("sleeve_core.stl", &sleeve.mould)?;
        self.write_mesh("sleeve_outer.stl", &sleeve.outer)?;
        self.write_json(
            SLEEVE_FILE,
            &SleeveRecord {
                extension_plane: ext,
                wall: sleeve.wall,
            },
        )?;
        Ok(Vec::new())
    }

    fn mould(&self) -> Result<Vec<String>, CliError> {
        let finger_skin = self.read_mesh("finger_skin.stl")?;
        let finger_bone = self.read_mesh("finger_bone.stl")?;
        let record: SleeveRecord = self.read_json(SLEEVE_FILE)?;
        let sleeve = Sleeve {
            solid: self.read_mesh("sleeve_solid.stl")?,
            mould: self.read_mesh("sleeve_core.stl")?,
            outer: self.read_mesh("sleeve_outer.stl")?,
            wall: record.wall,
        };
        let params = digitforge_core::design::DesignParams {
            extension_plane: Some(record.extension_plane),
            ..self.cfg.design_params()
        };
        let out = design_with_sleeve(&finger_skin, &finger_bone, sleeve, &params).map_err(|e| self.design_err(e))?;
        for (name, mesh) in out.mould.parts() {
            self.write_mesh(&format!("{name}.stl"), mesh)?;
        }
        let b = out.mould.block;
        let failures = out.report.failures.clone();
        self.write_json(
            MOULD_FILE,
            &MouldRecord {
                split_plane: out.mould.split_plane,
                block_min_mm: [b.min.x, b.min.y, b.min.z],
                block_max_mm: [b.max.x, b.max.y, b.max.z],
                boolean_path: out.mould.path,
                report: out.report,
            },
        )?;
        Ok(failures)
    }

    fn export(&self) -> Result<Vec<String>, CliError> {
        let mould: MouldRecord = self.read_json(MOULD_FILE)?;
        let mirror: MirrorRecord = self.read_json(MIRROR_FILE)?;
        let reg: RegistrationRecord = self.read_json(REGISTRATION_FILE)?;
        let sleeve: SleeveRecord = self.read_json(SLEEVE_FILE)?;
        let mut parts = Vec::with_capacity(PART_NAMES.len());
        for name in PART_NAMES {
            let file = format!("{name}.stl");
            let src = self.need(&file)?;
            let bytes = fs::read(&src).map_err(io_err(&src))?;
            let report = mould
                .report
                .parts
                .iter()
                .find(|p| p.name == name)
                .ok_or_else(|| self.fail()(&format!("{MOULD_FILE} has no entry for {name}")))?;
            write_atomic(&self.root.join(&file), &bytes)?;
            parts.push(ManifestPart {
                name: name.into(),
                file,
                stl_bytes: bytes.len() as u64,
                triangles: report.triangles,
                volume_mm3: report.volume_mm3,
                validation: report.validation.clone(),
            });
        }
        let r = mould.report;
        let manifest = Manifest {
            parts,
            mirror_plane: mirror.mirror_plane,
            crop_plane: reg.crop_plane,
            extension_plane: sleeve.extension_plane,
            split_plane: mould.split_plane,
            registration_rms_mm: reg.icp_rms_mm,
            icp_iterations: reg.icp_history.len(),
            sleeve_wall: sleeve.wall,
            pour_volume_mm3: r.pour_volume_mm3,
            interference: r.interference,
            key_angles_deg: r.key_angles_deg,
            key_interference_mm3: r.key_interference_mm3,
            key_mating_angles: r.key_mating_angles,
            swept_interference_mm3: r.swept_interference_mm3,
            fin_normal_rank: r.fin_normal_rank,
            conservation: r.conservation,
            passed: r.failures.is_empty(),
            failures: r.failures,
        };
        write_atomic(&self.root.join(MANIFEST_FILE), &json_bytes(&manifest))?;
        Ok(manifest.failures)
    }

    /// Writes the fixture volume as `phantom.hdr`/`phantom.raw` and its
    /// ground-truth planes as `phantom_truth.json` in the output directory.
    fn phantom(&self) -> Result<Vec<String>, CliError> {
        let p = generate_phantom(&self.cfg.phantom_spec()).map_err(|e| self.fail()(&e))?;
        save_volume_atomic(&p.volume, self.root, "phantom")?;
        write_atomic(&self.root.join("phantom_truth.json"), &json_bytes(&TruthPlanes::of(&p)))?;
        Ok(Vec::new())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact records serialize");
    v.push(b'\n');
    v
}

fn read_json_file<T: DeserializeOwned>(stage: Stage, path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Stage {
        stage,
        cause: format!("{}: {e}", path.display()),
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.partial"));
    let written = fs::File::create(&tmp).and_then(|mut f| f.write_all(bytes)).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path)(e));
    }
    Ok(())
}

/// Saves `<dir>/<stem>.hdr` and `<stem>.raw`, payload first.
fn save_volume_atomic(volume: &VoxelVolume, dir: &Path, stem: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = tempfile::tempdir_in(dir).map_err(io_err(dir))?;
    let hdr = tmp.path().join(format!("{stem}.hdr"));
    save_raw_volume(volume, &hdr).map_err(|e| CliError::Io {
        path: hdr.clone(),
        source: std::io::Error::other(e.to_string()),
    })?;
    for ext in ["raw", "hdr"] {
        let name = format!("{stem}.{ext}");
        let dst = dir.join(&name);
        fs::rename(tmp.path().join(&name), &dst).map_err(io_err(&dst))?;
    }
    Ok(())
}
