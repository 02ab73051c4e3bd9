//! Run configuration: a versioned TOML schema with unit-suffixed keys.
//!
//! A run starts from the built-in defaults of its scenario. A configuration
//! file and then `--set key.path=value` overrides are merged on top, and the
//! merged table is validated against the schema.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use ghost_core::bench::{
    Arm1Config, Arm2Mode, BeamSplitter, BucketRegion, DetectorConfig, ExperimentConfig, ObjectArm, ObjectMask,
};
use ghost_core::field_grid::GridSpec;
use ghost_core::speckle_source::{SourceMode, SourceSpec};

use crate::scenario::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration problem tied to a named field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration field `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub n_frames: u64,
    pub grid: GridSection,
    pub source: SourceSection,
    pub object: ObjectSection,
    pub beam_splitter: BeamSplitterSection,
    pub arm1: Arm1Section,
    pub arm2: Arm2Section,
    pub detector: DetectorSection,
    pub correlation: CorrelationSection,
    pub oracle: OracleSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub pitch_um: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub lambda_um: f64,
    pub d0_um: f64,
    pub z0_um: f64,
    pub pinhole_d_um: f64,
    pub z_pinhole_to_near_um: f64,
    pub mean_intensity: f64,
    /// `physical` or `spectral`.
    pub mode: String,
    pub spectral_width_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSection {
    /// `none`, `single-slit`, `needle-in-slit`, `double-slit` or `pgm`.
    pub kind: String,
    pub needle_um: f64,
    pub slit_um: f64,
    pub separation_um: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// `arm1` or `arm2`.
    pub arm: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSplitterSection {
    pub transmittance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm1Section {
    pub focal_um: f64,
    pub padding: usize,
    /// Centered crop of the focal plane; 0 keeps the whole plane.
    pub crop_px: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm2Section {
    /// `image` (imaging onto the detector) or `fourier` (same lens as arm 1).
    pub mode: String,
    pub magnification: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub binning: usize,
    /// Mean photocounts per unit intensity; 0 disables shot noise.
    pub photons_per_unit: f64,
    /// `full` or `auto`.
    pub bucket: String,
    pub bucket_threshold: f64,
    pub calibration_frames: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSection {
    /// Largest offset, in detector pixels, of difference and autocorrelation
    /// estimates.
    pub max_offset_px: i64,
    /// Side of the centered square of reference pixels; 0 uses the largest
    /// region valid for every offset.
    pub roi_px: usize,
    /// Central rows averaged into the ghost-image profile; 0 uses all.
    pub section_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Width factor applied to the correlation function used by the
    /// reference evaluation; 1 matches the simulated source.
    pub gamma_width_scale: f64,
    /// Fraction of coordinates that must agree within three standard errors.
    pub pass_fraction: f64,
}

impl RunConfig {
    /// Built-in configuration of a scenario.
    pub fn defaults(scenario: Scenario) -> Self {
        let src = SourceSpec::default();
        let mut cfg = RunConfig {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.name().to_string(),
            seed: 1,
            n_frames: 500,
            grid: GridSection {
                nx: 256,
                ny: 256,
                pitch_um: 6.0,
            },
            source: SourceSection {
                lambda_um: src.lambda,
                d0_um: src.d0,
                z0_um: src.z0,
                pinhole_d_um: src.pinhole_d,
                z_pinhole_to_near_um: src.z_pinhole_to_near,
                mean_intensity: src.mean_intensity,
                mode: "physical".into(),
                spectral_width_scale: src.spectral_width_scale,
            },
            object: ObjectSection {
                kind: "none".into(),
                needle_um: 160.0,
                slit_um: 690.0,
                separation_um: 0.0,
                path: None,
                arm: "arm1".into(),
            },
            beam_splitter: BeamSplitterSection { transmittance: 0.5 },
            arm1: Arm1Section {
                focal_um: 80_000.0,
                padding: 1,
                crop_px: 0,
            },
            arm2: Arm2Section {
                mode: "image".into(),
                magnification: 1.2,
            },
            detector: DetectorSection {
                binning: 1,
                photons_per_unit: 0.0,
                bucket: "full".into(),
                bucket_threshold: 0.01,
                calibration_frames: 32,
            },
            correlation: CorrelationSection {
                max_offset_px: 16,
                roi_px: 0,
                section_rows: 0,
            },
            oracle: OracleSection {
                gamma_width_scale: 1.0,
                pass_fraction: 0.95,
            },
        };
        match scenario {
            Scenario::GhostImage => {
                cfg.n_frames = 5000;
                cfg.object.kind = "needle-in-slit".into();
            }
            Scenario::GhostDiffraction => {
                cfg.grid = GridSection {
                    nx: 800,
                    ny: 800,
                    pitch_um: 7.5,
                };
                cfg.object.kind = "needle-in-slit".into();
                cfg.arm2.mode = "fourier".into();
                cfg.correlation.max_offset_px = 60;
                cfg.correlation.roi_px = 360;
            }
            Scenario::SiegertNear => {
                cfg.n_frames = 5000;
                cfg.correlation.roi_px = 224;
            }
            Scenario::SiegertFar => {
                cfg.grid = GridSection {
                    nx: 800,
                    ny: 800,
                    pitch_um: 7.5,
                };
                cfg.arm1.padding = 2;
                cfg.arm1.crop_px = 800;
                cfg.correlation.roi_px = 400;
            }
            Scenario::Conditional => {
                cfg.n_frames = 5000;
                cfg.grid = GridSection {
                    nx: 32,
                    ny: 32,
                    pitch_um: 18.0,
                };
                cfg.source.mode = "spectral".into();
                cfg.source.d0_um = 5_000.0;
                cfg.arm2.mode = "fourier".into();
            }
            Scenario::CoherentReference => {
                cfg.n_frames = 0;
                cfg.object.kind = "needle-in-slit".into();
            }
            Scenario::OracleCheck => {
                cfg.n_frames = 10_000;
                cfg.grid = GridSection {
                    nx: 32,
                    ny: 32,
                    pitch_um: 18.0,
                };
                cfg.source.mode = "spectral".into();
                cfg.source.d0_um = 5_000.0;
                cfg.object.kind = "double-slit".into();
                cfg.object.slit_um = 100.0;
                cfg.object.separation_um = 260.0;
            }
        }
        cfg
    }

    /// Defaults for `scenario`, then the file table, then `--set` overrides.
    pub fn resolve(scenario: Option<Scenario>, file: Option<&str>, overrides: &[String]) -> Result<Self, ConfigError> {
        let file_table: Option<Table> = file
            .map(|text| text.parse::<Table>().map_err(|e| cfg_err("<file>", e.to_string())))
            .transpose()?;
        let from_file = file_table
            .as_ref()
            .and_then(|t| t.get("scenario"))
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| cfg_err("scenario", "must be a string"))
                    .and_then(Scenario::from_name)
            })
            .transpose()?;
        let from_set = overrides
            .iter()
            .filter_map(|o| o.strip_prefix("scenario="))
            .map(|v| Scenario::from_name(v.trim().trim_matches('"')))
            .next_back()
            .transpose()?;
        let scenario = from_set
            .or(scenario)
            .or(from_file)
            .ok_or_else(|| cfg_err("scenario", "no scenario given in the file or on the command line"))?;

        let mut merged = Value::try_from(Self::defaults(scenario))
            .map_err(|e| cfg_err("<defaults>", e.to_string()))?;
        if let Some(t) = file_table {
            merge(&mut merged, Value::Table(t), "")?;
        }
        for o in overrides {
            let (key, value) = parse_override(o)?;
            set_path(&mut merged, &key, value)?;
        }
        if let Value::Table(t) = &mut merged {
            t.insert("scenario".into(), Value::String(scenario.name().into()));
        }
        let cfg: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| schema_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::from_name(&self.scenario).expect("validated scenario name")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        Scenario::from_name(&self.scenario)?;
        let one_of = |field: &str, v: &str, allowed: &[&str]| {
            if allowed.contains(&v) {
                Ok(())
            } else {
                Err(cfg_err(field, format!("`{v}` is not one of {allowed:?}")))
            }
        };
        one_of("source.mode", &self.source.mode, &["physical", "spectral"])?;
        one_of(
            "object.kind",
            &self.object.kind,
            &["none", "single-slit", "needle-in-slit", "double-slit", "pgm"],
        )?;
        one_of("object.arm", &self.object.arm, &["arm1", "arm2"])?;
        one_of("arm2.mode", &self.arm2.mode, &["image", "fourier"])?;
        one_of("detector.bucket", &self.detector.bucket, &["full", "auto"])?;
        if self.object.kind == "pgm" && self.object.path.is_none() {
            return Err(cfg_err("object.path", "required when object.kind = \"pgm\""));
        }
        let positive = [
            ("grid.pitch_um", self.grid.pitch_um),
            ("source.lambda_um", self.source.lambda_um),
            ("source.d0_um", self.source.d0_um),
            ("source.z0_um", self.source.z0_um),
            ("source.pinhole_d_um", self.source.pinhole_d_um),
            ("source.mean_intensity", self.source.mean_intensity),
            ("source.spectral_width_scale", self.source.spectral_width_scale),
            ("arm1.focal_um", self.arm1.focal_um),
            ("arm2.magnification", self.arm2.magnification),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(cfg_err(field, format!("must be > 0, got {v}")));
            }
        }
        if self.source.z_pinhole_to_near_um < 0.0 {
            return Err(cfg_err("source.z_pinhole_to_near_um", "must be >= 0"));
        }
        if self.correlation.max_offset_px < 0 {
            return Err(cfg_err("correlation.max_offset_px", "must be >= 0"));
        }
        if !(self.oracle.gamma_width_scale.is_finite() && self.oracle.gamma_width_scale > 0.0) {
            return Err(cfg_err("oracle.gamma_width_scale", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.oracle.pass_fraction) {
            return Err(cfg_err("oracle.pass_fraction", "must lie in [0, 1]"));
        }
        if self.detector.photons_per_unit < 0.0 {
            return Err(cfg_err("detector.photons_per_unit", "must be >= 0"));
        }
        Ok(())
    }

    pub fn grid(&self) -> ghost_core::Result<GridSpec> {
        GridSpec::new(self.grid.nx, self.grid.ny, self.grid.pitch_um)
    }

    pub fn source_spec(&self) -> SourceSpec {
        SourceSpec {
            lambda: self.source.lambda_um,
            d0: self.source.d0_um,
            z0: self.source.z0_um,
            pinhole_d: self.source.pinhole_d_um,
            z_pinhole_to_near: self.source.z_pinhole_to_near_um,
            mean_intensity: self.source.mean_intensity,
            mode: if self.source.mode == "spectral" {
                SourceMode::Spectral
            } else {
                SourceMode::Physical
            },
            spectral_width_scale: self.source.spectral_width_scale,
        }
    }

    pub fn object_mask(&self, grid: GridSpec) -> ghost_core::Result<ObjectMask> {
        let o = &self.object;
        match o.kind.as_str() {
            "single-slit" => ObjectMask::single_slit(grid, o.slit_um),
            "needle-in-slit" => ObjectMask::needle_in_slit(grid, o.needle_um, o.slit_um),
            "double-slit" => ObjectMask::double_slit(grid, o.slit_um, o.separation_um),
            "pgm" => ObjectMask::from_pgm(grid, o.path.as_deref().expect("validated path")),
            _ => Ok(ObjectMask::uniform(grid)),
        }
    }

    pub fn experiment(&self) -> ghost_core::Result<ExperimentConfig> {
        let grid = self.grid()?;
        Ok(ExperimentConfig {
            grid,
            source: self.source_spec(),
            bs: BeamSplitter::with_transmittance(self.beam_splitter.transmittance)?,
            object: self.object_mask(grid)?,
            object_arm: if self.object.arm == "arm2" {
                ObjectArm::Arm2
            } else {
                ObjectArm::Arm1
            },
            arm1: Arm1Config {
                focal: self.arm1.focal_um,
                padding: self.arm1.padding,
                crop: (self.arm1.crop_px > 0).then_some(self.arm1.crop_px),
            },
            arm2: if self.arm2.mode == "fourier" {
                Arm2Mode::GhostDiffraction
            } else {
                Arm2Mode::GhostImage {
                    m: self.arm2.magnification,
                }
            },
            detector: DetectorConfig {
                binning: self.detector.binning,
                photons_per_unit: (self.detector.photons_per_unit > 0.0).then_some(self.detector.photons_per_unit),
                bucket: if self.detector.bucket == "auto" {
                    BucketRegion::Auto {
                        threshold: self.detector.bucket_threshold,
                        calibration_frames: self.detector.calibration_frames,
                    }
                } else {
                    BucketRegion::Full
                },
            },
        })
    }

    /// Flattened `dotted.key = value` lines, sorted, for the manifest.
    pub fn flatten(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let v = Value::try_from(self).expect("config serializes");
        flatten_into(&v, "", &mut out);
        out.sort();
        out
    }
}

fn flatten_into(v: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    match v {
        Value::Table(t) => {
            for (k, x) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(x, &key, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn schema_error(e: &toml::de::Error) -> ConfigError {
    let msg = e.message().to_string();
    // serde reports unknown or missing keys by name; surface that name.
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<schema>".into());
    cfg_err(field, msg)
}

fn merge(base: &mut Value, over: Value, path: &str) -> Result<(), ConfigError> {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(existing @ Value::Table(_)) => merge(existing, v, &p)?,
                    Some(_) if v.is_table() => return Err(cfg_err(p, "expected a value, found a table")),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
            Ok(())
        }
        (_, _) => Err(cfg_err(path, "expected a table")),
    }
}

fn parse_override(o: &str) -> Result<(String, Value), ConfigError> {
    let (key, raw) = o
        .split_once('=')
        .ok_or_else(|| cfg_err(o, "override must look like key.path=value"))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    // Parse the right-hand side as a TOML value; bare words become strings.
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| cfg_err(key, "path runs through a non-table value"))?;
        if i + 1 == parts.len() {
            // Integers given for float fields are widened by the schema.
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .get_mut(*part)
            .ok_or_else(|| cfg_err(key, format!("unknown section `{part}`")))?;
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        for s in Scenario::ALL {
            let cfg = RunConfig::defaults(*s);
            let text = toml::to_string(&cfg).unwrap();
            let back = RunConfig::resolve(None, Some(&text), &[]).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn file_and_overrides_merge() {
        let file = "scenario = \"ghost-image\"\nn_frames = 10\n[grid]\npitch_um = 5.0\n";
        let cfg = RunConfig::resolve(None, Some(file), &["grid.nx=128".into(), "object.kind=single-slit".into()])
            .unwrap();
        assert_eq!(cfg.n_frames, 10);
        assert_eq!(cfg.grid.pitch_um, 5.0);
        assert_eq!(cfg.grid.nx, 128);
        assert_eq!(cfg.grid.ny, 256);
        assert_eq!(cfg.object.kind, "single-slit");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = RunConfig::resolve(Some(Scenario::GhostImage), Some("[grid]\npitch = 3.0\n"), &[]).unwrap_err();
        assert_eq!(e.field, "pitch");
        let e = RunConfig::resolve(Some(Scenario::GhostImage), None, &["source.mode=laser".into()]).unwrap_err();
        assert_eq!(e.field, "source.mode");
        let e = RunConfig::resolve(None, Some("n_frames = 3\n"), &[]).unwrap_err();
        assert_eq!(e.field, "scenario");
        let e = RunConfig::resolve(Some(Scenario::SiegertNear), Some("schema_version = 7\n"), &[]).unwrap_err();
        assert_eq!(e.field, "schema_version");
        let e = RunConfig::resolve(Some(Scenario::SiegertNear), None, &["bogus.key=1".into()]).unwrap_err();
        assert_eq!(e.field, "bogus.key");
    }

    #[test]
    fn flatten_is_sorted_and_complete() {
        let flat = RunConfig::defaults(Scenario::GhostImage).flatten();
        assert!(flat.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(flat.iter().any(|(k, v)| k == "source.lambda_um" && v == "0.6328"));
    }
}
