//! Pipeline configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use digitforge_core::design::DesignParams;
use digitforge_core::isosurface::IsoParams;
use digitforge_core::phantom::PhantomSpec;
use digitforge_core::registration::IcpParams;
use digitforge_core::Plane;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the CT volume comes from. Exactly one field may be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dicom_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_header: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource<'a> {
    Dicom(&'a Path),
    Raw(&'a Path),
    Phantom(&'a PhantomSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    #[serde(default = "default_skin_iso")]
    pub skin_iso_hu: f64,
    #[serde(default = "default_bone_iso")]
    pub bone_iso_hu: f64,
    #[serde(default = "default_min_component")]
    pub min_component_volume_mm3: f64,
    /// Estimated from the two hands when absent.
    #[serde(default)]
    pub mirror_plane: Option<Plane>,
    /// Where the mirrored finger is cut off; the kept side is opposite the
    /// normal. Taken from the ground truth for phantom input when absent.
    #[serde(default)]
    pub crop_plane: Option<Plane>,
    #[serde(default)]
    pub icp: IcpParams,
    /// `design.extension_plane` falls back to the ground truth for phantom
    /// input, like the crop plane.
    #[serde(default)]
    pub design: DesignParams,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Seeds the phantom noise, ICP subsampling and wall sampling.
    #[serde(default)]
    pub seed: u64,
}

fn default_skin_iso() -> f64 {
    IsoParams::DEFAULT_SKIN_HU
}

fn default_bone_iso() -> f64 {
    IsoParams::DEFAULT_BONE_HU
}

fn default_min_component() -> f64 {
    IsoParams::DEFAULT_MIN_COMPONENT_MM3
}

impl PipelineConfig {
    /// Config reading `input` with every other key at its default.
    pub fn new(input: InputConfig) -> Self {
        PipelineConfig {
            input,
            skin_iso_hu: default_skin_iso(),
            bone_iso_hu: default_bone_iso(),
            min_component_volume_mm3: default_min_component(),
            mirror_plane: None,
            crop_plane: None,
            icp: IcpParams::default(),
            design: DesignParams::default(),
            output_dir: None,
            seed: 0,
        }
    }

    /// Parses and validates a config file. Relative input and output paths
    /// are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.input.dicom_dir, &mut cfg.input.raw_header, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.icp.seed != 0 || cfg.design.seed != 0 || cfg.input.phantom.as_ref().is_some_and(|s| s.seed != 0) {
            return Err(CliError::Config("seeds are set with the top-level `seed` key only".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let n = [
            self.input.dicom_dir.is_some(),
            self.input.raw_header.is_some(),
            self.input.phantom.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if n != 1 {
            return bad(format!(
                "exactly one of input.dicom_dir, input.raw_header and input.phantom must be set, found {n}"
            ));
        }
        if !self.skin_iso_hu.is_finite() || !self.bone_iso_hu.is_finite() {
            return bad("iso values must be finite".into());
        }
        if !(self.min_component_volume_mm3 >= 0.0) || !self.min_component_volume_mm3.is_finite() {
            return bad("min_component_volume_mm3 must be finite and non-negative".into());
        }
        self.icp.validate().map_err(|e| CliError::Config(format!("icp: {e}")))?;
        self.design.validate().map_err(|e| CliError::Config(format!("design: {e}")))?;
        if let Some(spec) = &self.input.phantom {
            spec.validate_with_iso(self.skin_iso_hu, self.bone_iso_hu)
                .map_err(|e| CliError::Config(format!("input.phantom: {e}")))?;
        } else {
            if self.crop_plane.is_none() {
                return bad("crop_plane is required unless the input is a phantom".into());
            }
            if self.design.extension_plane.is_none() {
                return bad("design.extension_plane is required unless the input is a phantom".into());
            }
        }
        Ok(())
    }

    pub fn source(&self) -> InputSource<'_> {
        match (&self.input.dicom_dir, &self.input.raw_header, &self.input.phantom) {
            (Some(d), _, _) => InputSource::Dicom(d),
            (_, Some(r), _) => InputSource::Raw(r),
            (_, _, Some(p)) => InputSource::Phantom(p),
            _ => unreachable!("validated config has an input"),
        }
    }

    /// Applies `seed` to every seeded step.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn skin_iso(&self) -> IsoParams {
        IsoParams {
            iso_hu: self.skin_iso_hu,
            min_component_volume_mm3: self.min_component_volume_mm3,
        }
    }

    pub fn bone_iso(&self) -> IsoParams {
        IsoParams {
            iso_hu: self.bone_iso_hu,
            min_component_volume_mm3: self.min_component_volume_mm3,
        }
    }

    pub fn icp_params(&self) -> IcpParams {
        IcpParams { seed: self.seed, ..self.icp }
    }

    pub fn design_params(&self) -> DesignParams {
        DesignParams {
            seed: self.seed,
            ..self.design.clone()
        }
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            seed: self.seed,
            ..self.input.phantom.clone().unwrap_or_default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, text).unwrap();
        PipelineConfig::load(&path)
    }

    #[test]
    fn phantom_input_needs_no_planes() {
        let c = parse(r#"{"input": {"phantom": {}}, "seed": 3}"#).unwrap();
        assert_eq!(c.phantom_spec().seed, 3);
        assert_eq!(c.design_params().sleeve_thickness_mm, 1.5);
        assert_eq!(c.skin_iso().iso_hu, -300.0);
    }

    #[test]
    fn raw_input_needs_crop_and_extension() {
        let e = parse(r#"{"input": {"raw_header": "v.hdr"}}"#).unwrap_err();
        assert!(matches!(e, CliError::Config(m) if m.contains("crop_plane")));
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"input": {"raw_header": "v.hdr"}, "output_dir": "out",
                "crop_plane": {"point_mm": [0, 0, 0], "normal": [0, -1, 0]},
                "design": {"extension_plane": {"point_mm": [0, 5, 0], "normal": [0, -1, 0]}}}"#,
        )
        .unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.input.raw_header.unwrap(), dir.path().join("v.hdr"));
        assert_eq!(c.output_dir.unwrap(), dir.path().join("out"));
    }

    #[test]
    fn unknown_keys_and_nested_seeds_are_rejected() {
        assert!(parse(r#"{"input": {"phantom": {}}, "sleeve_thickness": 2}"#).is_err());
        assert!(parse(r#"{"input": {"phantom": {}}, "icp": {"seed": 4}}"#).is_err());
    }
}
