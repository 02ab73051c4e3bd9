//! Subcommand implementations, shared by the binary and the tests.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ghost_core::analysis::{coherence_report, fit_gaussian_peak, read_profile_csv, CoherenceReport, GaussianFitResult};
use ghost_core::bench::Bench;
use ghost_core::correlator::{finalize_g, CorrelationAccumulator};
use ghost_core::optics::impulse_response;
use ghost_core::oracle::{g_quadrature, OracleProblem};
use ghost_core::speckle_source::{SourceMode, SpeckleGenerator};

use crate::config::{ConfigError, RunConfig};
use crate::output::{output_dir, sha256_hex, write_outputs, RunManifest};
use crate::scenario::{self, Scenario};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    Core(ghost_core::Error),
    Io(std::io::Error),
    /// A check ran to completion and did not pass.
    Failed(String),
}

impl CliError {
    /// 0 success, 1 usage or configuration, 2 numerical, 3 failed check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(_) => 1,
            CliError::Failed(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Failed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<ghost_core::Error> for CliError {
    fn from(e: ghost_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn read_config_file(path: Option<&Path>) -> Result<Option<String>, CliError> {
    path.map(|p| {
        fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read configuration {}: {e}", p.display())))
    })
    .transpose()
}

fn parse_scenario(name: Option<&str>) -> Result<Option<Scenario>, CliError> {
    Ok(name.map(Scenario::from_name).transpose()?)
}

#[derive(Clone, Debug, Default)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub scenario: Option<String>,
    pub overrides: Vec<String>,
    pub output_dir: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> Result<RunManifest, CliError> {
    let text = read_config_file(args.config.as_deref())?;
    let cfg = RunConfig::resolve(parse_scenario(args.scenario.as_deref())?, text.as_deref(), &args.overrides)?;
    let scenario = cfg.scenario();
    if !scenario.is_simulation() {
        return Err(CliError::Usage(format!("`{}` runs through the oracle-check command", scenario.name())));
    }
    let dir = output_dir(args.output_dir.as_deref(), scenario.name());
    log::info!("{}: {} frames, seed {}", scenario.name(), cfg.n_frames, cfg.seed);
    let start = Instant::now();
    let out = scenario::run(&cfg)?;
    log::info!("{}: finished in {:.1} s", scenario.name(), start.elapsed().as_secs_f64());
    Ok(write_outputs(&dir, &cfg, &out)?)
}

#[derive(Clone, Debug)]
pub struct AnalyzeArgs {
    pub near: Option<PathBuf>,
    pub far: Option<PathBuf>,
    /// Use these widths instead of fitting.
    pub sigma_n_um: Option<f64>,
    pub sigma_f_um: Option<f64>,
    pub m: f64,
    pub lambda_um: f64,
    pub focal_um: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for AnalyzeArgs {
    fn default() -> Self {
        AnalyzeArgs {
            near: None,
            far: None,
            sigma_n_um: None,
            sigma_f_um: None,
            m: 1.2,
            lambda_um: 0.6328,
            focal_um: 80_000.0,
            output_dir: None,
        }
    }
}

fn given_width(sigma: f64) -> GaussianFitResult {
    GaussianFitResult {
        amplitude: 1.0,
        center: 0.0,
        sigma,
        baseline: 1.0,
        residual_norm: 0.0,
        converged: true,
        iterations: 0,
        amplitude_err: 0.0,
        center_err: 0.0,
        sigma_err: 0.0,
        baseline_err: 0.0,
    }
}

fn fit_file(path: &Path, dir: &Path, name: &str) -> Result<GaussianFitResult, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let prof = read_profile_csv(std::io::BufReader::new(file))?;
    let fit = fit_gaussian_peak(&prof.x, &prof.value, None)?;
    let p = fit.params();
    let mut w = fs::File::create(dir.join(name))?;
    writeln!(w, "x_um,value,fit")?;
    for (x, v) in prof.x.iter().zip(&prof.value) {
        writeln!(w, "{x},{v:e},{:e}", p.eval(*x))?;
    }
    if !fit.converged {
        return Err(ghost_core::Error::NotConverged {
            iterations: fit.iterations,
        }
        .into());
    }
    Ok(fit)
}

/// Fits both autocorrelation profiles (or takes the given widths) and writes
/// `coherence_report.txt` with the fitted curves.
pub fn analyze(args: &AnalyzeArgs) -> Result<CoherenceReport, CliError> {
    let dir = output_dir(args.output_dir.as_deref(), "analysis");
    fs::create_dir_all(&dir)?;
    let near = match (args.sigma_n_um, &args.near) {
        (Some(s), _) => given_width(s),
        (None, Some(p)) => fit_file(p, &dir, "fit_near.csv")?,
        (None, None) => return Err(CliError::Usage("need --near or --sigma-n-um".into())),
    };
    let far = match (args.sigma_f_um, &args.far) {
        (Some(s), _) => given_width(s),
        (None, Some(p)) => fit_file(p, &dir, "fit_far.csv")?,
        (None, None) => return Err(CliError::Usage("need --far or --sigma-f-um".into())),
    };
    let report = coherence_report(&near, &far, args.m, args.lambda_um, args.focal_um)?;
    let mut f = fs::File::create(dir.join("coherence_report.txt"))?;
    report.write_kv(&mut f)?;
    Ok(report)
}

#[derive(Clone, Debug, Default)]
pub struct OracleArgs {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub coordinates: usize,
    pub within_3se: usize,
    pub fraction: f64,
    pub required: f64,
    pub max_abs_z: f64,
    pub passed: bool,
    pub n_frames: u64,
}

impl OracleReport {
    pub fn render(&self) -> String {
        format!(
            "n_frames = {}\ncoordinates = {}\nwithin_3se = {}\nfraction = {:.5}\nrequired = {}\nmax_abs_z = {:.3}\nverdict = {}\n",
            self.n_frames,
            self.coordinates,
            self.within_3se,
            self.fraction,
            self.required,
            self.max_abs_z,
            if self.passed { "pass" } else { "fail" }
        )
    }
}

/// Monte Carlo full-mode `G` against the dense kernel evaluation.
///
/// Returns the report whether or not the comparison passes; the caller
/// decides the exit status.
pub fn oracle_check(args: &OracleArgs) -> Result<OracleReport, CliError> {
    let text = read_config_file(args.config.as_deref())?;
    let cfg = RunConfig::resolve(Some(Scenario::OracleCheck), text.as_deref(), &args.overrides)?;
    if cfg.scenario() != Scenario::OracleCheck {
        return Err(CliError::Usage(format!("configuration is for `{}`", cfg.scenario)));
    }
    if cfg.n_frames == 0 {
        return Err(CliError::Usage("oracle check needs at least 2 frames, got 0".into()));
    }
    let exp = cfg.experiment()?;
    if exp.source.mode != SourceMode::Spectral {
        return Err(ConfigError {
            field: "source.mode".into(),
            reason: "the oracle compares against a prescribed correlation; use \"spectral\"".into(),
        }
        .into());
    }
    if exp.detector.binning != 1 {
        return Err(ConfigError {
            field: "detector.binning".into(),
            reason: "must be 1 for the oracle check".into(),
        }
        .into());
    }
    let bench = Bench::new(exp)?;
    let (d1, d2) = (*bench.detector1(), *bench.detector2());
    // Fails early with a size error on grids beyond the dense limit.
    CorrelationAccumulator::full(d1, d2)?;
    let start = Instant::now();
    let acc = scenario::accumulate(&bench, &cfg, || CorrelationAccumulator::full(d1, d2), |a, s| a.accumulate(s))?;
    let mc = finalize_g(&acc)?;
    log::info!("oracle-check: Monte Carlo in {:.1} s", start.elapsed().as_secs_f64());

    let mut source = bench.config().source;
    source.spectral_width_scale *= cfg.oracle.gamma_width_scale;
    let gamma = SpeckleGenerator::new(&source, &bench.config().grid)?.prescribed_gamma()?;
    let lambda = source.lambda;
    let problem = OracleProblem::new(
        &gamma,
        impulse_response(bench.arm1_system(), lambda)?,
        impulse_response(bench.arm2_system(), lambda)?,
        bench.config().bs.correlation_factor(),
    )?;
    let reference = g_quadrature(&problem);

    let n2 = d2.len();
    let scale = reference.max();
    let mut within = 0;
    let mut max_z: f64 = 0.0;
    let mut csv = String::from("x1_index,x2_index,monte_carlo,reference,stderr,z\n");
    for a in 0..d1.len() {
        for b in 0..n2 {
            let k = a * n2 + b;
            let diff = mc.values[k] - reference[(a, b)];
            let se = mc.stderr[k];
            let z = if se > 0.0 {
                diff / se
            } else if diff.abs() <= 1e-12 * scale {
                0.0
            } else {
                f64::INFINITY
            };
            if z.abs() <= 3.0 {
                within += 1;
            }
            max_z = max_z.max(z.abs());
            csv.push_str(&format!("{a},{b},{:e},{:e},{:e},{:.4}\n", mc.values[k], reference[(a, b)], se, z));
        }
    }
    let coordinates = d1.len() * n2;
    let fraction = within as f64 / coordinates as f64;
    let report = OracleReport {
        coordinates,
        within_3se: within,
        fraction,
        required: cfg.oracle.pass_fraction,
        max_abs_z: max_z,
        passed: fraction >= cfg.oracle.pass_fraction,
        n_frames: cfg.n_frames,
    };
    let dir = output_dir(args.output_dir.as_deref(), "oracle-check");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("oracle_zscores.csv"), &csv)?;
    let mut text = report.render();
    text.push_str(&format!("sha256.oracle_zscores.csv = {}\n", sha256_hex(csv.as_bytes())));
    for (k, v) in cfg.flatten() {
        text.push_str(&format!("config.{k} = {v}\n"));
    }
    fs::write(dir.join("oracle_report.txt"), text)?;
    Ok(report)
}

/// One line per scenario: name and what it reproduces.
pub fn list_scenarios() -> String {
    Scenario::ALL
        .iter()
        .filter(|s| s.is_simulation())
        .map(|s| format!("{:<20} {}\n", s.name(), s.description()))
        .collect()
}
