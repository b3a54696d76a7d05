//! `cvqkd`: preparation errors, finite-size key rates, covariance bounds and
//! protocol simulation from a TOML run configuration.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cvqkd_core::commands::{self, SimulateOptions};
use cvqkd_core::config::{OutputFormat, RunConfig};
use cvqkd_core::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(
    name = "cvqkd",
    version,
    about = "Finite-size security bounds for discrete-modulation CV-QKD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output file; stdout when absent or `-`
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,

    /// Overrides `sim.seed`
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,

    /// Which dataset to emit
    #[arg(long, global = true, value_enum)]
    figure: Option<Figure>,

    /// Override a config value, e.g. `--set constellation.b=4` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Constellation grid and its preparation errors
    Grid {
        /// Also write the summary JSON here (CSV mode prints it to stderr otherwise)
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Finite-size key rate over the configured block sizes
    Keyrate {
        /// Keep the higher-order leftover-hash terms
        #[arg(long)]
        exact_lhl: bool,
    },
    /// Covariance deviation bounds over a sweep of bits per quadrature
    Covbounds,
    /// Monte Carlo protocol simulation with bound cross-checks
    Simulate {
        /// Report the Miller-Madow corrected entropy as well
        #[arg(long)]
        miller_madow: bool,
        /// Drop saturated rounds instead of clipping them
        #[arg(long)]
        discard_saturated: bool,
        /// Also write the ADC histogram CSV here
        #[arg(long, value_name = "PATH")]
        histogram: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Figure {
    Grid,
    F,
    Keyrate,
}

enum Failure {
    Config(String),
    Numeric(String),
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParam { .. } => Failure::Config(e.to_string()),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Numeric(format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Numeric(format!("json: {e}"))
    }
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    match path {
        Some(p) if p != Path::new("-") => Ok(Box::new(BufWriter::new(File::create(p)?))),
        _ => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn write_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(Failure::Config("invalid `--threads`: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Numeric(e.to_string()))?;
    }

    // flags win over the file and over --set
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("sim.seed={seed}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;

    let format = match cli.format {
        Some(Format::Csv) => Some(OutputFormat::Csv),
        Some(Format::Json) => Some(OutputFormat::Json),
        None => cfg.output_format(),
    };
    let out_path = cli
        .out
        .clone()
        .or_else(|| cfg.output_path().map(PathBuf::from));

    match cli.command {
        Command::Grid { summary } => {
            if matches!(cli.figure, Some(f) if f != Figure::Grid) {
                return Err(Failure::Config(
                    "invalid `--figure`: grid only emits `grid`".into(),
                ));
            }
            let res = commands::cmd_grid(&cfg)?;
            let mut out = open_out(out_path.as_deref())?;
            match format.unwrap_or(OutputFormat::Csv) {
                OutputFormat::Csv => {
                    res.grid.write_csv(&mut out)?;
                    match summary {
                        Some(p) => write_json(&mut *open_out(Some(&p))?, &res.summary)?,
                        None => eprintln!("{}", serde_json::to_string(&res.summary)?),
                    }
                }
                OutputFormat::Json => write_json(&mut out, &res.to_json())?,
            }
            out.flush()?;
        }
        Command::Keyrate { exact_lhl } => {
            let mut out = open_out(out_path.as_deref())?;
            let json = format == Some(OutputFormat::Json);
            match cli.figure.unwrap_or(Figure::Keyrate) {
                Figure::Keyrate => {
                    let res = commands::cmd_keyrate(&cfg, exact_lhl)?;
                    for note in &res.notes {
                        log::info!("{note}");
                    }
                    if json {
                        write_json(&mut out, &res)?;
                    } else {
                        res.write_csv(&mut out)?;
                    }
                }
                Figure::F => {
                    let rows = commands::cmd_fcurve(&cfg)?;
                    if json {
                        write_json(&mut out, &rows)?;
                    } else {
                        commands::write_fcurve_csv(&rows, &mut out)?;
                    }
                }
                Figure::Grid => {
                    return Err(Failure::Config(
                        "invalid `--figure`: keyrate emits `keyrate` or `f`".into(),
                    ));
                }
            }
            out.flush()?;
        }
        Command::Covbounds => {
            if cli.figure.is_some() {
                return Err(Failure::Config(
                    "invalid `--figure`: not used by covbounds".into(),
                ));
            }
            let res = commands::cmd_covbounds(&cfg)?;
            let mut out = open_out(out_path.as_deref())?;
            match format.unwrap_or(OutputFormat::Csv) {
                OutputFormat::Csv => res.write_csv(&mut out)?,
                OutputFormat::Json => write_json(&mut out, &res)?,
            }
            out.flush()?;
            match res.threshold_b {
                Some(b) => log::info!("smallest b with eps_p < 1/72: {b}"),
                None => log::info!("no b <= 20 gives eps_p < 1/72"),
            }
        }
        Command::Simulate {
            miller_madow,
            discard_saturated,
            histogram,
        } => {
            if cli.figure.is_some() {
                return Err(Failure::Config(
                    "invalid `--figure`: not used by simulate".into(),
                ));
            }
            let res = commands::cmd_simulate(
                &cfg,
                SimulateOptions {
                    miller_madow,
                    discard_saturated,
                },
            )?;
            let d_b = cfg.measurement_spec()?.bins_per_axis();
            let mut out = open_out(out_path.as_deref())?;
            match format.unwrap_or(OutputFormat::Json) {
                OutputFormat::Json => write_json(&mut out, &res)?,
                OutputFormat::Csv => res.result.write_histogram_csv(d_b, &mut out)?,
            }
            out.flush()?;
            if let Some(p) = histogram {
                let mut h = open_out(Some(&p))?;
                res.result.write_histogram_csv(d_b, &mut h)?;
                h.flush()?;
            }
            for c in &res.checks {
                log::info!(
                    "check {}: {:?} (gap {}, bound {})",
                    c.moment,
                    c.status,
                    c.gap,
                    c.bound
                );
            }
            if !res.passed {
                return Err(Failure::CheckFailed);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(Failure::CheckFailed) => {
            eprintln!("error: a resolvable covariance bound check failed");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
    }
}
