use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use icqr::inference::CiKind;
use icqr::io::commands::{self, to_json, write_curve, write_study_table, write_survival};
use icqr::io::{
    parse_bandwidth, parse_study_config, parse_tau_grid, read_dataset, CsvData, CurveOptions,
    EstimatorName, FitOptions, SurvivalOptions,
};
use icqr::Result;

/// Quantile regression for interval-censored survival data.
#[derive(Parser)]
#[command(name = "icqr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Ks,
    Zfd,
}

#[derive(Clone, Copy, ValueEnum)]
enum CiArg {
    Percentile,
    Wald,
}

#[derive(Subcommand)]
enum Command {
    /// Fit at one quantile level and write JSON.
    Fit {
        input: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(long, value_enum, default_value = "ks")]
        estimator: EstimatorArg,
        /// `auto`, one bandwidth, or one per covariate separated by commas.
        #[arg(long, default_value = "auto")]
        bandwidth: String,
        /// Bootstrap replicates (0 = no standard errors).
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "percentile")]
        ci: CiArg,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Input times are raw; take logs on reading.
        #[arg(long)]
        log: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coefficient paths over a grid of levels, or the survival curve.
    Curve {
        input: PathBuf,
        /// `a:b:step`, a comma list, or a single level.
        #[arg(long, default_value = "0.1:0.5:0.05")]
        taus: String,
        #[arg(long, value_enum, default_value = "ks")]
        estimator: EstimatorArg,
        #[arg(long, default_value = "auto")]
        bandwidth: String,
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Emit the unconditional survival curve instead.
        #[arg(long)]
        survival: bool,
        #[arg(long)]
        log: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation study described by a configuration file.
    Simulate {
        config: PathBuf,
        /// Overrides `output` in the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl From<EstimatorArg> for EstimatorName {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Ks => EstimatorName::Ks,
            EstimatorArg::Zfd => EstimatorName::Zfd,
        }
    }
}

fn load(path: &Path, log: bool) -> Result<CsvData> {
    read_dataset(File::open(path)?, log)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { input, tau, estimator, bandwidth, bootstrap, seed, ci, level, log, out } => {
            let data = load(&input, log)?;
            let opts = FitOptions {
                tau,
                estimator: estimator.into(),
                bandwidth: parse_bandwidth(&bandwidth)?,
                bootstrap,
                seed,
                ci_kind: match ci {
                    CiArg::Percentile => CiKind::Percentile,
                    CiArg::Wald => CiKind::Wald,
                },
                ci_level: level,
            };
            let result = commands::run_fit(&data, &opts)?;
            let mut w = output(out.as_deref())?;
            w.write_all(to_json(&result)?.as_bytes())?;
            w.flush()?;
        }
        Command::Curve { input, taus, estimator, bandwidth, bootstrap, seed, level, survival, log, out } => {
            let data = load(&input, log)?;
            if survival {
                let opts = SurvivalOptions { bootstrap, seed, ci_level: level, raw_times: log };
                let rows = commands::run_survival(&data, &opts)?;
                write_survival(output(out.as_deref())?, &rows)?;
            } else {
                let opts = CurveOptions {
                    taus: parse_tau_grid(&taus)?,
                    estimator: estimator.into(),
                    bandwidth: parse_bandwidth(&bandwidth)?,
                    bootstrap,
                    seed,
                    ci_level: level,
                };
                let rows = commands::run_curve(&data, &opts)?;
                write_curve(output(out.as_deref())?, &rows)?;
            }
        }
        Command::Simulate { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = parse_study_config(&text)?;
            let report = commands::run_simulate(&cfg)?;
            let target = out.or_else(|| {
                cfg.output.as_ref().map(|p| match config.parent() {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                })
            });
            write_study_table(output(target.as_deref())?, &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
