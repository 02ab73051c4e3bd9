//! Writing artifacts, graymaps and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::scenario::{Artifact, ScenarioOutput};

/// Environment variable that replaces the default output root.
pub const OUTPUT_DIR_ENV: &str = "GHOSTSIM_OUTPUT_DIR";

/// `explicit` if given, else `$GHOSTSIM_OUTPUT_DIR/<name>`, else
/// `ghostsim-out/<name>`.
pub fn output_dir(explicit: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("ghostsim-out"));
    root.join(name)
}

/// Linear min-max quantization to 8 bits. A constant image maps to 0.
pub fn to_gray8(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let bytes = values
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    (bytes, lo, hi)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Record of one completed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub scenario: String,
    pub seed: u64,
    pub n_frames: u64,
    pub output_dir: PathBuf,
    pub config: Vec<(String, String)>,
    /// `(file name, sha256)` in write order.
    pub checksums: Vec<(String, String)>,
    /// `(file name, min, max)` of each graymap's scaling.
    pub image_bounds: Vec<(String, f64, f64)>,
    pub summary: Vec<(String, String)>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| s.push_str(&format!("{k} = {v}\n"));
        kv("program", &concat!("ghostsim ", env!("CARGO_PKG_VERSION")));
        kv("scenario", &self.scenario);
        kv("seed", &self.seed);
        kv("n_frames", &self.n_frames);
        kv("output_dir", &self.output_dir.display());
        for (k, v) in &self.config {
            kv(&format!("config.{k}"), v);
        }
        for (k, v) in &self.summary {
            kv(&format!("result.{k}"), v);
        }
        for (name, lo, hi) in &self.image_bounds {
            kv(&format!("image.{name}.min"), lo);
            kv(&format!("image.{name}.max"), hi);
        }
        for (name, sum) in &self.checksums {
            kv(&format!("sha256.{name}"), sum);
        }
        s
    }

    /// Checksum of a written file by name.
    pub fn checksum(&self, name: &str) -> Option<&str> {
        self.checksums.iter().find(|(n, _)| n == name).map(|(_, s)| s.as_str())
    }
}

/// Writes every artifact into `dir` (created if needed) plus `manifest.txt`.
pub fn write_outputs(dir: &Path, cfg: &RunConfig, out: &ScenarioOutput) -> std::io::Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut checksums = Vec::new();
    let mut image_bounds = Vec::new();
    for a in &out.artifacts {
        match a {
            Artifact::Csv { name, bytes } => {
                fs::write(dir.join(name), bytes)?;
                checksums.push((name.clone(), sha256_hex(bytes)));
            }
            Artifact::Image { name, nx, ny, values } => {
                let (gray, lo, hi) = to_gray8(values);
                let path = dir.join(name);
                let mut bytes = Vec::new();
                PnmEncoder::new(&mut bytes)
                    .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                    .write_image(&gray, *nx as u32, *ny as u32, ExtendedColorType::L8)
                    .map_err(std::io::Error::other)?;
                fs::write(&path, &bytes)?;
                checksums.push((name.clone(), sha256_hex(&bytes)));
                image_bounds.push((name.clone(), lo, hi));
            }
        }
    }
    let manifest = RunManifest {
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        n_frames: cfg.n_frames,
        output_dir: dir.to_path_buf(),
        config: cfg.flatten(),
        checksums,
        image_bounds,
        summary: out.summary.clone(),
    };
    let mut f = fs::File::create(dir.join("manifest.txt"))?;
    f.write_all(manifest.render().as_bytes())?;
    Ok(manifest)
}
