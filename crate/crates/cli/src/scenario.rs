//! Named experiments and what each one writes.

use ghost_core::analysis::{gaussian_smooth, ncc, section_average, Axis};
use ghost_core::bench::{Bench, ObjectArm, ShotRecord};
use ghost_core::correlator::{
    conditional_probability, ghost_diffraction, ghost_image, offsets_along_x, offsets_on_axes,
    siegert_autocorrelation, Arm, CorrelationAccumulator, CorrelationResult, Merge, Roi, SiegertProfile,
};
use ghost_core::ensemble::run_ensemble;
use ghost_core::field_grid::GridSpec;
use ghost_core::oracle::analytic_diffraction;
use ghost_core::{Error, Result};

use crate::config::{ConfigError, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    GhostImage,
    GhostDiffraction,
    SiegertNear,
    SiegertFar,
    Conditional,
    CoherentReference,
    /// Configuration family of the `oracle-check` command.
    OracleCheck,
}

impl Scenario {
    pub const ALL: &'static [Scenario] = &[
        Scenario::GhostImage,
        Scenario::GhostDiffraction,
        Scenario::SiegertNear,
        Scenario::SiegertFar,
        Scenario::Conditional,
        Scenario::CoherentReference,
        Scenario::OracleCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::GhostImage => "ghost-image",
            Scenario::GhostDiffraction => "ghost-diffraction",
            Scenario::SiegertNear => "siegert-near",
            Scenario::SiegertFar => "siegert-far",
            Scenario::Conditional => "conditional",
            Scenario::CoherentReference => "coherent-reference",
            Scenario::OracleCheck => "oracle-check",
        }
    }

    pub fn from_name(name: &str) -> std::result::Result<Self, ConfigError> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|s| s.name() == name)
            .ok_or_else(|| ConfigError {
                field: "scenario".into(),
                reason: format!(
                    "unknown scenario `{name}`; expected one of {:?}",
                    Scenario::ALL.iter().map(|s| s.name()).collect::<Vec<_>>()
                ),
            })
    }

    /// Which experimental result the scenario reproduces.
    pub fn description(&self) -> &'static str {
        match self {
            Scenario::GhostImage => {
                "ghost image of a needle in a slit from bucket correlations (5000 frames), with section-averaged profile"
            }
            Scenario::GhostDiffraction => {
                "ghost diffraction pattern of the needle in the slit from difference-coordinate correlations (500 frames)"
            }
            Scenario::SiegertNear => "normalized intensity autocorrelation of the reference arm imaging the near field",
            Scenario::SiegertFar => "normalized intensity autocorrelation in the focal plane of the object-arm lens",
            Scenario::Conditional => "conditional detection probability split into its broad and narrow terms",
            Scenario::CoherentReference => {
                "coherent plane-wave image and diffraction pattern of the same object, for comparison"
            }
            Scenario::OracleCheck => "Monte Carlo correlation versus the dense two-arm kernel on a small grid",
        }
    }

    /// Scenarios run by `simulate`.
    pub fn is_simulation(&self) -> bool {
        *self != Scenario::OracleCheck
    }
}

/// One file produced by a scenario, before it is written.
#[derive(Clone, Debug, PartialEq)]
pub enum Artifact {
    Csv { name: String, bytes: Vec<u8> },
    /// Row-major image exported as an 8-bit graymap with min-max scaling.
    Image { name: String, nx: usize, ny: usize, values: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioOutput {
    pub artifacts: Vec<Artifact>,
    /// Scalar results recorded in the manifest.
    pub summary: Vec<(String, String)>,
}

impl ScenarioOutput {
    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) {
        let mut bytes = Vec::new();
        write(&mut bytes).expect("writing to memory");
        self.artifacts.push(Artifact::Csv {
            name: name.into(),
            bytes,
        });
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.into(), value.to_string()));
    }
}

fn frames_required(cfg: &RunConfig, min: u64) -> Result<()> {
    if cfg.n_frames < min {
        return Err(Error::InsufficientFrames {
            required: min,
            available: cfg.n_frames,
        });
    }
    Ok(())
}

/// Accumulates `cfg.n_frames` shots into accumulators built by `make`.
pub fn accumulate<A, M>(bench: &Bench, cfg: &RunConfig, make: M, feed: fn(&mut A, &ShotRecord) -> Result<()>) -> Result<A>
where
    A: Merge + Send,
    M: Fn() -> Result<A> + Sync,
{
    run_ensemble(cfg.n_frames, cfg.seed, make, |acc, seed| {
        let shot = bench.run_shot(seed)?;
        feed(acc, &shot)
    })
}

fn feed_one(acc: &mut CorrelationAccumulator, shot: &ShotRecord) -> Result<()> {
    acc.accumulate(shot)
}

fn feed_two(acc: &mut (CorrelationAccumulator, CorrelationAccumulator), shot: &ShotRecord) -> Result<()> {
    acc.0.accumulate(shot)?;
    acc.1.accumulate(shot)
}

/// Centered square region of `roi_px` pixels, or the largest region valid
/// for every offset up to `k` when `roi_px` is 0.
fn roi_for(grid: &GridSpec, roi_px: usize, k: i64) -> Roi {
    if roi_px == 0 {
        let k = k as usize;
        Roi {
            i0: k.min(grid.nx() / 2),
            i1: grid.nx().saturating_sub(k).max(grid.nx() / 2 + 1),
            j0: k.min(grid.ny() / 2),
            j1: grid.ny().saturating_sub(k).max(grid.ny() / 2 + 1),
        }
    } else {
        Roi::centered(grid, roi_px, roi_px)
    }
}

fn section_rows(cfg: &RunConfig, grid: &GridSpec) -> usize {
    match cfg.correlation.section_rows {
        0 => grid.ny(),
        r => r,
    }
}

fn write_profile(w: &mut Vec<u8>, grid: &GridSpec, value: &[f64], baseline: &[f64], stderr: &[f64]) -> std::io::Result<()> {
    use std::io::Write;
    writeln!(w, "x_um,value,baseline,stderr")?;
    for i in 0..value.len() {
        writeln!(w, "{},{:e},{:e},{:e}", grid.x(i), value[i], baseline[i], stderr[i])?;
    }
    Ok(())
}

fn image_artifact(name: &str, grid: &GridSpec, values: Vec<f64>) -> Artifact {
    Artifact::Image {
        name: name.into(),
        nx: grid.nx(),
        ny: grid.ny(),
        values,
    }
}

/// Runs one simulation scenario.
pub fn run(cfg: &RunConfig) -> Result<ScenarioOutput> {
    let scenario = cfg.scenario();
    let bench = Bench::new(cfg.experiment()?)?;
    let mut out = ScenarioOutput::default();
    if let Some(regime) = bench.generator().regime() {
        out.note("source_regime", format!("{regime:?}").to_lowercase());
    }
    let k = cfg.correlation.max_offset_px;
    match scenario {
        Scenario::GhostImage => {
            frames_required(cfg, 2)?;
            let det = *bench.detector2();
            let region = bench.bucket_region().to_vec();
            let acc = accumulate(&bench, cfg, || CorrelationAccumulator::bucket(det, region.clone()), feed_one)?;
            let res = ghost_image(&acc)?;
            out.note("bucket_pixels", region.len());
            ghost_image_outputs(&mut out, cfg, &det, &res)?;
        }
        Scenario::GhostDiffraction => {
            frames_required(cfg, 2)?;
            let det = *bench.detector1();
            det.ensure_same(bench.detector2(), "arm-2 detector")?;
            let roi = roi_for(&det, cfg.correlation.roi_px, k);
            let offsets = offsets_along_x(k);
            let acc = accumulate(
                &bench,
                cfg,
                || CorrelationAccumulator::difference(det, roi, offsets.clone()),
                feed_one,
            )?;
            let res = ghost_diffraction(&acc)?;
            out.csv("ghost_diffraction.csv", |w| res.write_csv(w));
            let x: Vec<f64> = offsets.iter().map(|&(dx, _)| dx as f64 * det.pitch()).collect();
            if let Ok(reference) =
                analytic_diffraction(bench.config().object.kind(), cfg.source.lambda_um, cfg.arm1.focal_um, &x)
            {
                out.note("ncc_analytic", smoothed_ncc(&res.values, &reference));
                out.csv("ghost_diffraction_analytic.csv", |w| {
                    use std::io::Write;
                    writeln!(w, "dx_um,value")?;
                    for (xv, r) in x.iter().zip(&reference) {
                        writeln!(w, "{xv},{r:e}")?;
                    }
                    Ok(())
                });
            }
        }
        Scenario::SiegertNear | Scenario::SiegertFar => {
            frames_required(cfg, 2)?;
            let (arm, det, name) = if scenario == Scenario::SiegertNear {
                (Arm::Two, *bench.detector2(), "siegert_near.csv")
            } else {
                (Arm::One, *bench.detector1(), "siegert_far.csv")
            };
            let roi = roi_for(&det, cfg.correlation.roi_px, k);
            let offsets = offsets_on_axes(k);
            let acc = accumulate(
                &bench,
                cfg,
                || CorrelationAccumulator::auto(arm, det, roi, offsets.clone()),
                feed_one,
            )?;
            let prof = siegert_autocorrelation(&acc)?;
            siegert_summary(&mut out, &prof);
            out.csv(name, |w| prof.write_csv(w));
        }
        Scenario::Conditional => {
            frames_required(cfg, 2)?;
            let (d1, d2) = (*bench.detector1(), *bench.detector2());
            let acc = accumulate(&bench, cfg, || CorrelationAccumulator::full(d1, d2), feed_one)?;
            let x1 = d1.index(d1.cx(), d1.cy());
            let c = conditional_probability(&acc, x1)?;
            out.note("x1_um", format!("{},{}", d1.x(d1.cx()), d1.y(d1.cy())));
            out.csv("conditional.csv", |w| {
                use std::io::Write;
                writeln!(w, "x_um,y_um,broad,narrow,stderr")?;
                for k in 0..d2.len() {
                    let (i, j) = d2.coords_of(k);
                    writeln!(
                        w,
                        "{},{},{:e},{:e},{:e}",
                        d2.x(i),
                        d2.y(j),
                        c.broad[k],
                        c.narrow[k],
                        c.stderr[k]
                    )?;
                }
                Ok(())
            });
            out.artifacts.push(image_artifact("conditional_narrow.pgm", &d2, c.narrow.clone()));
        }
        Scenario::CoherentReference => {
            let (_, image) = bench.coherent_probe(ObjectArm::Arm2)?;
            let (diffraction, _) = bench.coherent_probe(ObjectArm::Arm1)?;
            let g2 = *image.grid();
            let rows = section_rows(cfg, &g2);
            let prof = section_average(image.values(), g2.nx(), g2.ny(), Axis::X, rows)?;
            let zeros = vec![0.0; prof.len()];
            out.csv("coherent_image_profile.csv", |w| write_profile(w, &g2, &prof, &zeros, &zeros));
            out.artifacts.push(image_artifact("coherent_image.pgm", &g2, image.values().to_vec()));
            let g1 = *diffraction.grid();
            let dprof = section_average(diffraction.values(), g1.nx(), g1.ny(), Axis::X, 1)?;
            let zeros = vec![0.0; dprof.len()];
            out.csv("coherent_diffraction_profile.csv", |w| write_profile(w, &g1, &dprof, &zeros, &zeros));
        }
        Scenario::OracleCheck => {
            return Err(Error::config("scenario", "run `oracle-check` for this configuration"));
        }
    }
    Ok(out)
}

fn ghost_image_outputs(out: &mut ScenarioOutput, cfg: &RunConfig, det: &GridSpec, res: &CorrelationResult) -> Result<()> {
    out.csv("ghost_image.csv", |w| res.write_csv(w));
    out.artifacts.push(image_artifact("ghost_image.pgm", det, res.values.clone()));
    let rows = section_rows(cfg, det);
    let avg = |v: &[f64]| section_average(v, det.nx(), det.ny(), Axis::X, rows);
    let value = avg(&res.values)?;
    let baseline = avg(&res.baseline)?;
    // Rows are treated as independent, so this understates the error when
    // rows are closer than a speckle.
    let var: Vec<f64> = res.stderr.iter().map(|e| e * e).collect();
    let stderr: Vec<f64> = avg(&var)?.iter().map(|v| (v / rows as f64).sqrt()).collect();
    out.csv("ghost_image_profile.csv", |w| write_profile(w, det, &value, &baseline, &stderr));
    out.note("section_rows", rows);
    Ok(())
}

fn siegert_summary(out: &mut ScenarioOutput, prof: &SiegertProfile) {
    let n = prof.normalized.len();
    let centre = n / 2;
    out.note("g2_zero", prof.normalized[centre]);
    let edge = [prof.normalized[0], prof.normalized[n - 1]];
    out.note("g2_edge", 0.5 * (edge[0] + edge[1]));
}

/// Near-field (arm 2) and far-field (arm 1) autocorrelation profiles from one
/// pass over the frames. Arm 2 must image the near field.
pub fn coherence_profiles(
    cfg: &RunConfig,
    near_roi_px: usize,
    far_roi_px: usize,
) -> Result<(SiegertProfile, SiegertProfile)> {
    frames_required(cfg, 2)?;
    let bench = Bench::new(cfg.experiment()?)?;
    let k = cfg.correlation.max_offset_px;
    let (d1, d2) = (*bench.detector1(), *bench.detector2());
    let near_roi = roi_for(&d2, near_roi_px, k);
    let far_roi = roi_for(&d1, far_roi_px, k);
    let acc = accumulate(
        &bench,
        cfg,
        || {
            Ok((
                CorrelationAccumulator::auto(Arm::Two, d2, near_roi, offsets_on_axes(k))?,
                CorrelationAccumulator::auto(Arm::One, d1, far_roi, offsets_on_axes(k))?,
            ))
        },
        feed_two,
    )?;
    Ok((siegert_autocorrelation(&acc.0)?, siegert_autocorrelation(&acc.1)?))
}

/// Width, in samples, of the Gaussian applied to a reconstructed trace
/// before it is compared with a reference.
pub const TRACE_SMOOTHING_PX: f64 = 1.0;

/// Normalized cross-correlation of a smoothed trace with a reference.
pub fn smoothed_ncc(trace: &[f64], reference: &[f64]) -> f64 {
    ncc(&gaussian_smooth(trace, TRACE_SMOOTHING_PX), reference)
}
