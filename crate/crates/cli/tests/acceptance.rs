//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ghost_core::analysis::{
    best_scale, coherence_report, first_minimum_after, fit_gaussian_peak, gaussian_smooth, nrms, read_profile_csv,
    GaussianParams, Profile,
};
use ghost_core::bench::BeamSplitter;
use ghost_core::correlator::{
    finalize_g, ghost_diffraction, offsets_along_x, CorrelationAccumulator, Merge, Roi,
};
use ghost_core::field_grid::{dft_unitary, ComplexField, Direction, GridSpec, IntensityFrame};
use ghost_core::optics::fresnel_propagate;
use ghost_core::Complex64;
use ghostsim::commands::{analyze, oracle_check, simulate, AnalyzeArgs, OracleArgs, SimulateArgs};
use ghostsim::config::RunConfig;
use ghostsim::scenario::{coherence_profiles, smoothed_ncc, Scenario, TRACE_SMOOTHING_PX};

type Outcome = Result<String, String>;

struct Suite {
    root: tempfile::TempDir,
    failures: usize,
}

impl Suite {
    fn dir(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn record(&mut self, id: &str, title: &str, start: Instant, outcome: Outcome) {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {id} {title}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {id} {title}: {detail} [{secs:.1} s]");
            }
        }
    }
}

fn run(suite: &Suite, scenario: &str, dir: &str, overrides: &[&str]) -> Result<PathBuf, String> {
    let out = suite.dir(dir);
    simulate(&SimulateArgs {
        config: None,
        scenario: Some(scenario.into()),
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
        output_dir: Some(out.clone()),
    })
    .map_err(|e| format!("{scenario}: {e}"))?;
    Ok(out)
}

fn profile(path: &Path) -> Result<Profile, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    read_profile_csv(BufReader::new(f)).map_err(|e| format!("{}: {e}", path.display()))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Value at zero separation and the mean over the outer quarter of offsets.
fn peak_and_baseline(p: &Profile) -> (f64, f64) {
    let n = p.x.len();
    let centre = p.x.iter().position(|&x| x == 0.0).unwrap_or(n / 2);
    let reach = p.x.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let outer: Vec<f64> = p.x.iter().zip(&p.value).filter(|(x, _)| x.abs() >= 0.75 * reach).map(|(_, v)| *v).collect();
    (p.value[centre], outer.iter().sum::<f64>() / outer.len() as f64)
}

fn siegert_contrast(suite: &Suite) -> Outcome {
    let start = Instant::now();
    let dir = run(suite, "siegert-near", "siegert-near", &[])?;
    let secs = start.elapsed().as_secs_f64();
    let (g0, base) = peak_and_baseline(&profile(&dir.join("siegert_near.csv"))?);
    check(
        (g0 - 2.0).abs() <= 0.1 && (base - 1.0).abs() <= 0.05 && secs < 120.0,
        format!("g2(0) = {g0:.4} (2 +/- 0.1), baseline = {base:.4} (1 +/- 0.05), 256x256 x 5000 frames in {secs:.1} s"),
    )
}

/// Positions of the first minima on either side of zero offset.
fn first_zeros(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let centre = x.iter().position(|&v| v == 0.0)?;
    let right = first_minimum_after(x, y, centre + 1)?;
    let xr: Vec<f64> = x.iter().rev().map(|v| -v).collect();
    let yr: Vec<f64> = y.iter().rev().cloned().collect();
    let left = -first_minimum_after(&xr, &yr, x.len() - centre)?;
    Some((left, right))
}

fn ghost_diffraction_check(suite: &Suite) -> Outcome {
    let dir = run(suite, "ghost-diffraction", "ghost-diffraction", &[])?;
    let trace = profile(&dir.join("ghost_diffraction.csv"))?;
    let reference = profile(&dir.join("ghost_diffraction_analytic.csv"))?;
    let ncc = smoothed_ncc(&trace.value, &reference.value);

    let control = run(suite, "ghost-diffraction", "single-slit", &["object.kind=\"single-slit\""])?;
    let trace = profile(&control.join("ghost_diffraction.csv"))?;
    let smooth = gaussian_smooth(&trace.value, TRACE_SMOOTHING_PX);
    let pitch = trace.x[1] - trace.x[0];
    let expected = 0.6328 * 80_000.0 / 690.0;
    let (left, right) = first_zeros(&trace.x, &smooth).ok_or("single-slit control has no first minimum")?;
    let zeros_ok = (right - expected).abs() <= pitch && (left + expected).abs() <= pitch;
    check(
        ncc >= 0.95 && zeros_ok,
        format!(
            "NCC = {ncc:.4} (>= 0.95); single-slit zeros at {left:.1}, {right:.1} um (+/-{expected:.1} +/- {pitch} um)"
        ),
    )
}

fn convolve_same(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let h = kernel.len() / 2;
    (0..signal.len())
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(k, w)| (i + h).checked_sub(k).and_then(|j| signal.get(j)).map(|s| s * w))
                .sum()
        })
        .collect()
}

/// `(plateau - dip) / plateau` with the dip at the centre of the profile and
/// the plateau sampled inside the slit, beside the needle.
fn dip_contrast(x: &[f64], y: &[f64], needle_half: f64, slit_half: f64) -> f64 {
    let mean = |pred: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = x.iter().zip(y).filter(|(x, _)| pred(**x)).map(|(_, y)| *y).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let dip = mean(&|x: f64| x.abs() <= 0.25 * needle_half);
    let plateau = mean(&|x: f64| x.abs() >= 1.5 * needle_half && x.abs() <= 0.85 * slit_half);
    (plateau - dip) / plateau
}

fn ghost_image_check(suite: &Suite) -> Outcome {
    let ghost = profile(&run(suite, "ghost-image", "ghost-image", &[])?.join("ghost_image_profile.csv"))?;
    let coherent =
        profile(&run(suite, "coherent-reference", "coherent", &[])?.join("coherent_image_profile.csv"))?;
    let near = profile(&suite.dir("siegert-near").join("siegert_near.csv"))?;
    if (ghost.x[1] - ghost.x[0] - (near.x[1] - near.x[0])).abs() > 1e-9 {
        return Err("point-spread function and image sampled at different pitches".into());
    }
    let psf: Vec<f64> = near.value.iter().map(|v| v - 1.0).collect();
    let reference = convolve_same(&coherent.value, &psf);
    // Compare over the support of the reference plus a few pixels; outside
    // it the trace is pure bucket noise.
    let peak = reference.iter().cloned().fold(0.0, f64::max);
    let inside: Vec<usize> = (0..reference.len()).filter(|&i| reference[i] > 0.01 * peak).collect();
    let lo = inside[0].saturating_sub(4);
    let hi = (inside[inside.len() - 1] + 5).min(reference.len());
    let (trace, refw) = (&ghost.value[lo..hi], &reference[lo..hi]);
    let k = best_scale(refw, trace);
    let scaled: Vec<f64> = refw.iter().map(|r| k * r).collect();
    let err = nrms(trace, &scaled);

    let m = 1.2;
    let (needle_half, slit_half) = (80.0 / m, 345.0 / m);
    let coherent_dip = dip_contrast(&coherent.x, &coherent.value, needle_half, slit_half);
    let ghost_dip = dip_contrast(&ghost.x, &ghost.value, needle_half, slit_half);
    let ratio = ghost_dip / coherent_dip;
    check(
        err <= 0.10 && ratio >= 0.5,
        format!(
            "NRMS = {:.2}% over {:.0}..{:.0} um (<= 10%); dip contrast {ghost_dip:.3} vs coherent {coherent_dip:.3} ({:.0}%, >= 50%)",
            100.0 * err,
            ghost.x[lo],
            ghost.x[hi - 1],
            100.0 * ratio
        ),
    )
}

fn resolution_product(suite: &Suite) -> Outcome {
    let far = run(suite, "siegert-far", "siegert-far", &["n_frames=300"])?;
    let fitted = analyze(&AnalyzeArgs {
        near: Some(suite.dir("siegert-near").join("siegert_near.csv")),
        far: Some(far.join("siegert_far.csv")),
        output_dir: Some(suite.dir("analysis")),
        ..AnalyzeArgs::default()
    })
    .map_err(|e| e.to_string())?;
    let injected = analyze(&AnalyzeArgs {
        sigma_n_um: Some(14.3),
        sigma_f_um: Some(7.8),
        output_dir: Some(suite.dir("analysis-injected")),
        ..AnalyzeArgs::default()
    })
    .map_err(|e| e.to_string())?;
    check(
        fitted.product < 0.15 && (injected.product - 0.066).abs() < 5e-4,
        format!(
            "fitted product = {:.4} +/- {:.4} (< 0.15; sigma_n = {:.2} um, sigma_f = {:.2} um); injected widths give {:.4} (0.066)",
            fitted.product, fitted.product_err, fitted.sigma_n, fitted.sigma_f, injected.product
        ),
    )
}

fn oracle_equivalence(suite: &Suite) -> Outcome {
    let start = Instant::now();
    let matched = oracle_check(&OracleArgs {
        output_dir: Some(suite.dir("oracle")),
        ..OracleArgs::default()
    })
    .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mismatched = oracle_check(&OracleArgs {
        overrides: vec!["oracle.gamma_width_scale=2.0".into()],
        output_dir: Some(suite.dir("oracle-mismatched")),
        ..OracleArgs::default()
    })
    .map_err(|e| e.to_string())?;
    check(
        matched.passed && !mismatched.passed && secs < 300.0,
        format!(
            "{:.2}% of {} coordinates within 3 SE at {} frames (>= 95%) in {secs:.1} s; 2x correlation width gives {:.2}% (must fail)",
            100.0 * matched.fraction,
            matched.coordinates,
            matched.n_frames,
            100.0 * mismatched.fraction
        ),
    )
}

fn test_field(grid: GridSpec) -> ComplexField {
    ComplexField::from_fn(grid, |x, y| {
        let a = (0.37 * x + 0.11 * y).sin() + (0.05 * x * y / 40.0).cos();
        let p = 0.013 * x * x - 0.029 * y + (0.21 * y).sin();
        Complex64::from_polar(a.abs() + 0.1, p)
    })
}

fn test_frame(grid: GridSpec, seed: f64) -> IntensityFrame {
    let values = (0..grid.len())
        .map(|k| {
            let t = k as f64 + seed * 1000.0;
            1.0 + (t * 0.731).sin().abs() + (t * t * 1e-3).cos().powi(2)
        })
        .collect();
    IntensityFrame::new(grid, values).expect("frame")
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale))
}

fn properties(suite: &Suite) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut note = |pass: bool, s: String| {
        ok &= pass;
        notes.push(s);
    };

    let grid = GridSpec::square(128, 5.0).map_err(|e| e.to_string())?;
    let field = test_field(grid);
    let e0 = field.total_energy();
    let ft = dft_unitary(&field, Direction::Forward).total_energy();
    let prop = fresnel_propagate(&field, 2_000.0, 0.6328).map_err(|e| e.to_string())?.total_energy();
    let parseval = ((ft - e0) / e0).abs().max(((prop - e0) / e0).abs());
    note(parseval <= 1e-10, format!("energy {parseval:.1e}"));

    let bs = BeamSplitter::with_transmittance(0.3).map_err(|e| e.to_string())?;
    let (t, r) = bs.split(&field);
    let split = t
        .values()
        .iter()
        .zip(r.values())
        .zip(field.values())
        .map(|((a, b), c)| (a.norm_sqr() + b.norm_sqr() - c.norm_sqr()).abs() / c.norm_sqr())
        .fold(0.0f64, f64::max);
    note(split <= 1e-14, format!("splitter {split:.1e}"));

    let small = GridSpec::square(12, 5.0).map_err(|e| e.to_string())?;
    let roi = Roi::centered(&small, 6, 6);
    let frames: Vec<(IntensityFrame, IntensityFrame)> =
        (0..30).map(|k| (test_frame(small, k as f64), test_frame(small, 0.5 + k as f64))).collect();
    let mut assoc = 0.0f64;
    for make in [
        &(|| CorrelationAccumulator::full(small, small)) as &dyn Fn() -> ghost_core::Result<CorrelationAccumulator>,
        &|| CorrelationAccumulator::difference(small, roi, offsets_along_x(3)),
    ] {
        let part = |r: std::ops::Range<usize>| -> ghost_core::Result<CorrelationAccumulator> {
            let mut a = make()?;
            for (f1, f2) in &frames[r] {
                a.accumulate_frames(f1, f2)?;
            }
            Ok(a)
        };
        let run = || -> ghost_core::Result<(Vec<f64>, Vec<f64>)> {
            let (a, b, c) = (part(0..7)?, part(7..19)?, part(19..30)?);
            let mut left = a.clone();
            left.merge(b.clone())?;
            left.merge(c.clone())?;
            let mut bc = b;
            bc.merge(c)?;
            let mut right = a;
            right.merge(bc)?;
            let value = |acc: &CorrelationAccumulator| match acc.mode() {
                ghost_core::correlator::AccumulatorMode::Difference => ghost_diffraction(acc),
                _ => finalize_g(acc),
            };
            Ok((value(&left)?.values, value(&right)?.values))
        };
        let (l, r) = run().map_err(|e| e.to_string())?;
        assoc = assoc.max(max_rel(&l, &r));
    }
    note(assoc <= 1e-9, format!("merge {assoc:.1e}"));

    let truth = GaussianParams {
        amplitude: 1.3,
        center: 2.5,
        sigma: 11.0,
        baseline: 0.9,
    };
    let x: Vec<f64> = (-60..=60).map(|k| k as f64).collect();
    let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
    let fit = fit_gaussian_peak(&x, &y, None).map_err(|e| e.to_string())?;
    let fit_err = [
        (fit.amplitude, truth.amplitude),
        (fit.center, truth.center),
        (fit.sigma, truth.sigma),
        (fit.baseline, truth.baseline),
    ]
    .iter()
    .map(|(a, b)| ((a - b) / b).abs())
    .fold(0.0f64, f64::max);
    note(fit.converged && fit_err <= 1e-8, format!("fit {fit_err:.1e}"));

    let mut sums = Vec::new();
    for (threads, tag) in [(1, "a"), (1, "b"), (2, "c")] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let mut per_run = Vec::new();
        for scenario in ["conditional", "siegert-near", "ghost-image"] {
            let overrides = ["n_frames=200"];
            let dir = format!("determinism-{scenario}-{tag}");
            let out = pool.install(|| run(suite, scenario, &dir, &overrides))?;
            per_run.push(std::fs::read_to_string(out.join("manifest.txt")).map_err(|e| e.to_string())?
                .lines()
                .filter(|l| l.starts_with("sha256."))
                .map(str::to_string)
                .collect::<Vec<_>>());
        }
        sums.push(per_run);
    }
    let same = sums[0] == sums[1] && sums[0] == sums[2];
    let files: usize = sums[0].iter().map(Vec::len).sum();
    note(same, format!("{files} checksums identical across reruns and 1/2 threads: {same}"));

    check(ok, notes.join(", "))
}

struct Widths {
    near: f64,
    far: f64,
}

fn widths(d_um: f64, d0_um: f64) -> Result<Widths, String> {
    let mut cfg = RunConfig::defaults(Scenario::SiegertFar);
    cfg.n_frames = 300;
    cfg.source.pinhole_d_um = d_um;
    cfg.source.d0_um = d0_um;
    cfg.correlation.max_offset_px = 20;
    let (near, far) = coherence_profiles(&cfg, 160, 400).map_err(|e| e.to_string())?;
    let fit = |x: &[f64], y: &[f64]| fit_gaussian_peak(x, y, None).map_err(|e| e.to_string());
    let n = fit(&near.separation, &near.normalized)?;
    let f = fit(&far.separation, &far.normalized)?;
    let r = coherence_report(&n, &f, cfg.arm2.magnification, cfg.source.lambda_um, cfg.arm1.focal_um)
        .map_err(|e| e.to_string())?;
    Ok(Widths {
        near: r.delta_x_n,
        far: r.delta_x_f,
    })
}

fn scaling_laws() -> Outcome {
    let base = widths(3_000.0, 10_000.0)?;
    let small_pinhole = widths(1_500.0, 10_000.0)?;
    let small_source = widths(3_000.0, 5_000.0)?;
    let near_d = base.near / small_pinhole.near;
    let far_d = base.far / small_pinhole.far;
    let near_d0 = base.near / small_source.near;
    check(
        (near_d - 1.0).abs() <= 0.15 && (far_d - 0.5).abs() <= 0.1 && (near_d0 - 0.5).abs() <= 0.1,
        format!(
            "doubling D: near x{near_d:.3} (1 +/- 15%), far x{far_d:.3} (0.5 +/- 20%); doubling D0: near x{near_d0:.3} (0.5 +/- 20%); base near {:.1} um, far {:.1} um",
            base.near, base.far
        ),
    )
}

fn main() {
    let mut suite = Suite {
        root: tempfile::tempdir().expect("temporary directory"),
        failures: 0,
    };
    let start = Instant::now();
    let outcome = siegert_contrast(&suite);
    suite.record("1", "siegert contrast", start, outcome);
    let start = Instant::now();
    let outcome = ghost_diffraction_check(&suite);
    suite.record("2", "ghost diffraction", start, outcome);
    let start = Instant::now();
    let outcome = ghost_image_check(&suite);
    suite.record("3", "ghost image", start, outcome);
    let start = Instant::now();
    let outcome = resolution_product(&suite);
    suite.record("4", "resolution product", start, outcome);
    let start = Instant::now();
    let outcome = oracle_equivalence(&suite);
    suite.record("5", "oracle equivalence", start, outcome);
    let start = Instant::now();
    let outcome = properties(&suite);
    suite.record("6", "property suite", start, outcome);
    let start = Instant::now();
    let outcome = scaling_laws();
    suite.record("7", "scaling laws", start, outcome);
    println!("acceptance: {} of 7 criteria passed", 7 - suite.failures);
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
