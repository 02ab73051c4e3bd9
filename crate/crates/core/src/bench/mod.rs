//! The two-arm experiment: speckle source, beam splitter, object, arm optics
//! and detectors, producing one pair of intensity frames per shot.
//!
//! Arm 1 (object arm) always ends in a Fourier lens, so its detector sees the
//! far field of whatever the object transmits. Arm 2 (reference arm) either
//! images the splitter plane onto its detector (ghost image) or uses the same
//! Fourier lens (ghost diffraction). Arm 1 never depends on the arm-2 mode.

mod mask;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

pub use mask::{apply_object, MaskKind, ObjectMask};

use crate::error::{Error, Result};
use crate::field_grid::{intensity, ComplexField, GridSpec, IntensityFrame};
use crate::optics::{OpticalElement, OpticalSystem};
use crate::seed::{frame_seed, stream_rng, Stream};
use crate::speckle_source::{SourceSpec, SpeckleGenerator};

/// Lossless splitter with amplitude coefficients `t` (to arm 1) and `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamSplitter {
    t: Complex64,
    r: Complex64,
}

impl Default for BeamSplitter {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        BeamSplitter {
            t: Complex64::new(h, 0.0),
            r: Complex64::new(h, 0.0),
        }
    }
}

impl BeamSplitter {
    pub fn new(t: Complex64, r: Complex64) -> Result<Self> {
        let total = t.norm_sqr() + r.norm_sqr();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "beam_splitter",
                format!("|t|^2 + |r|^2 must be 1, got {total}"),
            ));
        }
        Ok(BeamSplitter { t, r })
    }

    /// Real coefficients from the intensity transmission `|t|^2`.
    pub fn with_transmittance(transmittance: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&transmittance) {
            return Err(Error::config(
                "bs_transmittance",
                format!("must lie in [0, 1], got {transmittance}"),
            ));
        }
        Self::new(
            Complex64::new(transmittance.sqrt(), 0.0),
            Complex64::new((1.0 - transmittance).sqrt(), 0.0),
        )
    }

    pub fn t(&self) -> Complex64 {
        self.t
    }

    pub fn r(&self) -> Complex64 {
        self.r
    }

    /// `|t r|^2`, the prefactor of every two-arm correlation.
    pub fn correlation_factor(&self) -> f64 {
        (self.t * self.r).norm_sqr()
    }

    /// `(t a, r a)`; the unused input port carries no classical field.
    pub fn split(&self, field: &ComplexField) -> (ComplexField, ComplexField) {
        (field.clone().scaled(self.t), field.clone().scaled(self.r))
    }
}

/// Which arm holds the object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ObjectArm {
    #[default]
    Arm1,
    Arm2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arm1Config {
    /// Focal length of the arm-1 lens; the detector sits in its focal plane.
    pub focal: f64,
    /// Zero-padding factor of the focal-plane transform.
    pub padding: usize,
    /// Optional centered crop (pixels per side) of the focal plane.
    pub crop: Option<usize>,
}

impl Default for Arm1Config {
    fn default() -> Self {
        Arm1Config {
            focal: 80_000.0,
            padding: 1,
            crop: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arm2Mode {
    /// Ideal inverting imager of the splitter plane, magnification `m`.
    GhostImage { m: f64 },
    /// Same Fourier lens, padding and crop as arm 1.
    GhostDiffraction,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BucketRegion {
    /// Pixels whose noise-free mean exceeds `threshold` times the peak mean,
    /// found from `calibration_frames` shots.
    Auto { threshold: f64, calibration_frames: u64 },
    Full,
    Explicit(Vec<usize>),
}

impl Default for BucketRegion {
    fn default() -> Self {
        BucketRegion::Auto {
            threshold: 0.01,
            calibration_frames: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Square pixel binning applied to both detectors.
    pub binning: usize,
    /// Mean photocounts per unit intensity per pixel; `None` disables
    /// shot noise.
    pub photons_per_unit: Option<f64>,
    pub bucket: BucketRegion,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            binning: 1,
            photons_per_unit: None,
            bucket: BucketRegion::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Grid of the splitter / object plane.
    pub grid: GridSpec,
    pub source: SourceSpec,
    pub bs: BeamSplitter,
    pub object: ObjectMask,
    pub object_arm: ObjectArm,
    pub arm1: Arm1Config,
    pub arm2: Arm2Mode,
    pub detector: DetectorConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub frame1: IntensityFrame,
    pub frame2: IntensityFrame,
    pub seed: u64,
}

/// A validated, precomputed experiment.
#[derive(Clone, Debug)]
pub struct Bench {
    config: ExperimentConfig,
    generator: SpeckleGenerator,
    arm1: OpticalSystem,
    arm2: OpticalSystem,
    detector1: GridSpec,
    detector2: GridSpec,
    bucket: Vec<usize>,
}

impl Bench {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let grid = config.grid;
        config.object.grid().ensure_same(&grid, "object mask")?;
        let generator = SpeckleGenerator::new(&config.source, &grid)?;
        let lambda = config.source.lambda;

        let object = OpticalElement::Transmission(config.object.shared());
        let far = |sys: OpticalSystem| -> Result<OpticalSystem> {
            let sys = sys.push(OpticalElement::FourierLens {
                f: config.arm1.focal,
                padding: config.arm1.padding,
            })?;
            match config.arm1.crop {
                Some(n) => sys.push(OpticalElement::Window { nx: n, ny: n }),
                None => Ok(sys),
            }
        };
        let mut arm1 = OpticalSystem::identity(grid);
        if config.object_arm == ObjectArm::Arm1 {
            arm1 = arm1.push(object.clone())?;
        }
        let arm1 = far(arm1)?;
        let mut arm2 = OpticalSystem::identity(grid);
        if config.object_arm == ObjectArm::Arm2 {
            arm2 = arm2.push(object)?;
        }
        let arm2 = match config.arm2 {
            Arm2Mode::GhostImage { m } => arm2.push(OpticalElement::MagnifyingImager { m })?,
            Arm2Mode::GhostDiffraction => far(arm2)?,
        };

        let b = config.detector.binning;
        if b == 0 {
            return Err(Error::config("binning", "must be >= 1"));
        }
        if let Some(ppu) = config.detector.photons_per_unit {
            if !(ppu.is_finite() && ppu > 0.0) {
                return Err(Error::config("photons_per_unit", format!("must be > 0, got {ppu}")));
            }
        }
        let binned = |g: GridSpec, arm: &str| -> Result<GridSpec> {
            if !g.nx().is_multiple_of(b) || !g.ny().is_multiple_of(b) || g.nx() / b < 2 || g.ny() / b < 2 {
                return Err(Error::config(
                    "binning",
                    format!("{arm} detector of {}x{} pixels is not divisible into {b}x{b} bins", g.nx(), g.ny()),
                ));
            }
            GridSpec::new(g.nx() / b, g.ny() / b, g.pitch() * b as f64)
        };
        let detector1 = binned(arm1.output_grid(lambda)?, "arm-1")?;
        let detector2 = binned(arm2.output_grid(lambda)?, "arm-2")?;

        let mut bench = Bench {
            config,
            generator,
            arm1,
            arm2,
            detector1,
            detector2,
            bucket: Vec::new(),
        };
        bench.bucket = bench.resolve_bucket()?;
        Ok(bench)
    }

    fn resolve_bucket(&self) -> Result<Vec<usize>> {
        let n = self.detector1.len();
        match &self.config.detector.bucket {
            BucketRegion::Full => Ok((0..n).collect()),
            BucketRegion::Explicit(pixels) => {
                if pixels.is_empty() {
                    return Err(Error::EmptyRegion("explicit bucket region".into()));
                }
                if let Some(p) = pixels.iter().find(|&&p| p >= n) {
                    return Err(Error::config("bucket", format!("pixel {p} outside the {n}-pixel detector")));
                }
                Ok(pixels.clone())
            }
            BucketRegion::Auto {
                threshold,
                calibration_frames,
            } => {
                if !(*threshold > 0.0 && *threshold < 1.0) || *calibration_frames == 0 {
                    return Err(Error::config(
                        "bucket",
                        "auto region needs 0 < threshold < 1 and at least one calibration frame",
                    ));
                }
                let mut mean = vec![0.0; n];
                // Calibration uses its own seed stream so it never coincides
                // with measurement shots.
                for k in 0..*calibration_frames {
                    let (f1, _) = self.clean_frames(frame_seed(u64::MAX, k))?;
                    mean.iter_mut().zip(f1.values()).for_each(|(m, v)| *m += v);
                }
                let peak = mean.iter().cloned().fold(0.0, f64::max);
                let region: Vec<usize> = (0..n).filter(|&i| mean[i] > threshold * peak).collect();
                if region.is_empty() {
                    return Err(Error::EmptyRegion("arm 1 receives no light".into()));
                }
                Ok(region)
            }
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn generator(&self) -> &SpeckleGenerator {
        &self.generator
    }

    pub fn arm1_system(&self) -> &OpticalSystem {
        &self.arm1
    }

    pub fn arm2_system(&self) -> &OpticalSystem {
        &self.arm2
    }

    pub fn detector1(&self) -> &GridSpec {
        &self.detector1
    }

    pub fn detector2(&self) -> &GridSpec {
        &self.detector2
    }

    pub fn bucket_region(&self) -> &[usize] {
        &self.bucket
    }

    /// Propagates a given splitter-plane field through both arms.
    pub fn propagate(&self, field: &ComplexField) -> Result<(IntensityFrame, IntensityFrame)> {
        let lambda = self.config.source.lambda;
        let (b1, b2) = self.config.bs.split(field);
        let f1 = self.bin(intensity(&self.arm1.apply(&b1, lambda)?));
        let f2 = self.bin(intensity(&self.arm2.apply(&b2, lambda)?));
        Ok((f1, f2))
    }

    fn clean_frames(&self, seed: u64) -> Result<(IntensityFrame, IntensityFrame)> {
        self.propagate(&self.generator.sample(seed))
    }

    /// One acquisition; a pure function of `seed`.
    pub fn run_shot(&self, seed: u64) -> Result<ShotRecord> {
        let (mut frame1, mut frame2) = self.clean_frames(seed)?;
        if let Some(ppu) = self.config.detector.photons_per_unit {
            frame1 = poisson(&frame1, ppu, &mut stream_rng(seed, Stream::NoiseArm1));
            frame2 = poisson(&frame2, ppu, &mut stream_rng(seed, Stream::NoiseArm2));
        }
        Ok(ShotRecord { frame1, frame2, seed })
    }

    /// Frames for a plane wave of the source's mean intensity instead of
    /// speckle, with the object in `object_arm`.
    pub fn coherent_probe(&self, object_arm: ObjectArm) -> Result<(IntensityFrame, IntensityFrame)> {
        let mut config = self.config.clone();
        config.object_arm = object_arm;
        config.detector.bucket = BucketRegion::Full;
        config.detector.photons_per_unit = None;
        let probe = Bench::new(config)?;
        let amp = self.config.source.mean_intensity.sqrt();
        probe.propagate(&ComplexField::constant(self.config.grid, Complex64::new(amp, 0.0)))
    }

    /// Bucket value of an arm-1 frame over the configured region.
    pub fn bucket_value(&self, frame: &IntensityFrame) -> Result<f64> {
        bucket(frame, &self.bucket)
    }

    fn bin(&self, frame: IntensityFrame) -> IntensityFrame {
        let b = self.config.detector.binning;
        if b == 1 {
            return frame;
        }
        let g = *frame.grid();
        let out = GridSpec::new(g.nx() / b, g.ny() / b, g.pitch() * b as f64).expect("validated binning");
        let mut values = vec![0.0; out.len()];
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                values[out.index(i / b, j / b)] += frame.get(i, j);
            }
        }
        IntensityFrame::from_parts(out, values)
    }
}

fn poisson(frame: &IntensityFrame, ppu: f64, rng: &mut impl Rng) -> IntensityFrame {
    let values = frame
        .values()
        .iter()
        .map(|&v| {
            let mean = v * ppu;
            if mean <= 0.0 {
                0.0
            } else {
                Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(mean) / ppu
            }
        })
        .collect();
    IntensityFrame::from_parts(*frame.grid(), values)
}

/// Sum of `frame` over `region` (pixel indices).
pub fn bucket(frame: &IntensityFrame, region: &[usize]) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::EmptyRegion("bucket region".into()));
    }
    let n = frame.values().len();
    let mut sum = 0.0;
    for &p in region {
        if p >= n {
            return Err(Error::config("bucket", format!("pixel {p} outside the {n}-pixel frame")));
        }
        sum += frame.values()[p];
    }
    Ok(sum)
}
