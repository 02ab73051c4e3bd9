use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ghostsim::commands::{self, AnalyzeArgs, CliError, OracleArgs, SimulateArgs};

#[derive(Parser)]
#[command(name = "ghostsim", version, about = "Correlation imaging with thermal light, simulated")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV, graymap and manifest outputs.
    Simulate {
        /// TOML configuration file.
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<String>,
        /// Override a configuration key, e.g. `--set grid.pitch_um=5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Shorthand for `--set n_frames=N`.
        #[arg(long)]
        frames: Option<u64>,
        /// Shorthand for `--set seed=S`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Fit autocorrelation profiles and report coherence lengths.
    Analyze {
        /// Near-field autocorrelation CSV.
        #[arg(long)]
        near: Option<PathBuf>,
        /// Far-field autocorrelation CSV.
        #[arg(long)]
        far: Option<PathBuf>,
        /// Use this near-field width instead of fitting.
        #[arg(long)]
        sigma_n_um: Option<f64>,
        /// Use this far-field width instead of fitting.
        #[arg(long)]
        sigma_f_um: Option<f64>,
        #[arg(long, default_value_t = 1.2)]
        magnification: f64,
        #[arg(long, default_value_t = 0.6328)]
        lambda_um: f64,
        #[arg(long, default_value_t = 80_000.0)]
        focal_um: f64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Compare Monte Carlo correlations with the dense kernel evaluation.
    OracleCheck {
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// List the available scenarios.
    ListScenarios,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate {
            config,
            scenario,
            mut overrides,
            frames,
            seed,
            output_dir,
        } => {
            overrides.extend(frames.map(|n| format!("n_frames={n}")));
            overrides.extend(seed.map(|s| format!("seed={s}")));
            let m = commands::simulate(&SimulateArgs {
                config,
                scenario,
                overrides,
                output_dir,
            })?;
            for (k, v) in &m.summary {
                println!("{k} = {v}");
            }
            println!("wrote {}", m.output_dir.display());
        }
        Command::Analyze {
            near,
            far,
            sigma_n_um,
            sigma_f_um,
            magnification,
            lambda_um,
            focal_um,
            output_dir,
        } => {
            let r = commands::analyze(&AnalyzeArgs {
                near,
                far,
                sigma_n_um,
                sigma_f_um,
                m: magnification,
                lambda_um,
                focal_um,
                output_dir,
            })?;
            let mut text = Vec::new();
            r.write_kv(&mut text)?;
            print!("{}", String::from_utf8_lossy(&text));
        }
        Command::OracleCheck {
            config,
            overrides,
            output_dir,
        } => {
            let r = commands::oracle_check(&OracleArgs {
                config,
                overrides,
                output_dir,
            })?;
            print!("{}", r.render());
            if !r.passed {
                return Err(CliError::Failed(format!(
                    "{:.2}% of coordinates within 3 standard errors, {:.2}% required",
                    100.0 * r.fraction,
                    100.0 * r.required
                )));
            }
        }
        Command::ListScenarios => print!("{}", commands::list_scenarios()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
