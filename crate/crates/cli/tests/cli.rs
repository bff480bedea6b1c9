use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use digitforge_cli::{run_pipeline, run_stage, CliError, InputConfig, Manifest, PipelineConfig, Stage, PART_NAMES};
use digitforge_core::phantom::PhantomSpec;
use digitforge_core::Plane;
use nalgebra::{Point3, Vector3};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_digitforge"))
}

fn phantom_config() -> PipelineConfig {
    PipelineConfig::new(InputConfig {
        phantom: Some(PhantomSpec::default()),
        ..Default::default()
    })
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    p
}

fn outputs() -> Vec<String> {
    PART_NAMES.iter().map(|n| format!("{n}.stl")).chain(["manifest.json".to_string()]).collect()
}

/// One full run and one stage-by-stage run of the default phantom.
struct Runs {
    _dir: tempfile::TempDir,
    config: PathBuf,
    full: PathBuf,
    staged: PathBuf,
    manifest: Manifest,
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(dir.path(), &phantom_config());
        let full = dir.path().join("full");
        let staged = dir.path().join("staged");
        let manifest = run_pipeline(&PipelineConfig::load(&config).unwrap(), &full).unwrap();
        for s in ["ingest", "mesh", "mirror", "register", "sleeve", "mould", "export"] {
            let st = bin().args([s, "--config"]).arg(&config).arg("--out").arg(&staged).status().unwrap();
            assert_eq!(st.code(), Some(0), "stage {s}");
        }
        Runs {
            _dir: dir,
            config,
            full,
            staged,
            manifest,
        }
    })
}

#[test]
fn default_phantom_passes_every_gate() {
    let r = runs();
    assert!(r.manifest.passed, "{:?}", r.manifest.failures);
    assert_eq!(r.manifest.parts.len(), 5);
    for name in outputs() {
        assert!(r.full.join(&name).is_file(), "{name}");
    }
    for p in &r.manifest.parts {
        let v = &p.validation;
        assert!(v.closed && v.manifold && v.self_intersections == 0 && v.min_feature_ok, "{}: {v:?}", p.name);
        assert_eq!(fs::metadata(r.full.join(&p.file)).unwrap().len(), p.stl_bytes);
        assert_eq!(p.stl_bytes, 84 + 50 * p.triangles as u64);
    }
    assert!(r.manifest.pour_volume_mm3 > 0.0);
    assert!(r.manifest.registration_rms_mm <= 1.0);
    // the staging area is gone
    let left: Vec<_> = fs::read_dir(&r.full)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with('.'))
        .collect();
    assert!(left.is_empty(), "{left:?}");
}

#[test]
fn stages_run_one_by_one_equal_the_full_run() {
    let r = runs();
    for name in outputs() {
        let a = fs::read(r.full.join(&name)).unwrap();
        let b = fs::read(r.staged.join(&name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn rerunning_export_is_byte_identical() {
    let r = runs();
    let before: Vec<Vec<u8>> = outputs().iter().map(|n| fs::read(r.staged.join(n)).unwrap()).collect();
    let st = bin().args(["export", "--config"]).arg(&r.config).arg("--out").arg(&r.staged).status().unwrap();
    assert_eq!(st.code(), Some(0));
    for (name, old) in outputs().iter().zip(before) {
        assert!(fs::read(r.staged.join(name)).unwrap() == old, "{name}");
    }
}

#[test]
fn two_input_sources_are_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, r#"{"input": {"phantom": {}, "raw_header": "scan.hdr"}}"#).unwrap();
    let e = PipelineConfig::load(&cfg).unwrap_err();
    assert!(matches!(e, CliError::Config(_)), "{e}");
    assert_eq!(e.exit_code(), 2);
    let out = dir.path().join("out");
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exactly one"));
    assert!(!out.exists());
}

#[test]
fn unwritable_output_is_an_io_error_with_nothing_left_behind() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, b"not a directory").unwrap();
    let out = blocker.join("out");
    let e = run_pipeline(&phantom_config(), &out).unwrap_err();
    assert!(matches!(e, CliError::Io { .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
    assert_eq!(fs::read(&blocker).unwrap(), b"not a directory");
    let entries: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
}

#[test]
fn a_failing_stage_publishes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = phantom_config();
    // a crop plane beyond the hand leaves no finger to design
    cfg.crop_plane = Some(Plane::new(Point3::new(0.0, 500.0, 0.0), -Vector3::y()).unwrap());
    let out = dir.path().join("out");
    let e = run_pipeline(&cfg, &out).unwrap_err();
    assert!(e.to_string().starts_with("register:"), "{e}");
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn mesh_before_ingest_is_a_missing_upstream_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let e = run_stage(Stage::Mesh, &phantom_config(), dir.path()).unwrap_err();
    assert!(
        matches!(&e, CliError::MissingUpstreamArtifact { stage: Stage::Mesh, path } if path.ends_with("volume.hdr")),
        "{e}"
    );
    let cfg = write_config(dir.path(), &phantom_config());
    let o = bin().args(["mesh", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing upstream artifact"));
}

#[test]
fn phantom_with_the_same_seed_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PhantomSpec {
        dims: [64, 64, 48],
        voxel_mm: 2.0,
        noise_sigma_hu: 20.0,
        ..Default::default()
    };
    let cfg = write_config(dir.path(), &PipelineConfig::new(InputConfig { phantom: Some(spec), ..Default::default() }));
    let read = |d: &str| -> Vec<Vec<u8>> {
        ["phantom.hdr", "phantom.raw", "phantom_truth.json"]
            .iter()
            .map(|f| fs::read(dir.path().join(d).join(f)).unwrap())
            .collect()
    };
    for d in ["a", "b", "c"] {
        let seed = if d == "c" { "8" } else { "7" };
        let st = bin()
            .args(["phantom", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(d))
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
    }
    assert!(read("a") == read("b"));
    assert!(read("a")[1] != read("c")[1], "the seed drives the noise");
}

#[test]
fn missing_output_directory_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &phantom_config());
    for cmd in ["ingest", "bogus"] {
        let o = bin().args([cmd, "--config"]).arg(&cfg).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{cmd}");
    }
}
