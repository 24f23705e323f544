use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nsatp::adf::{adf_test, read_series_csv, RegressionKind};
use nsatp::harness::gradcheck::run_suite;
use nsatp::harness::train::evaluate;
use nsatp::harness::{ablate, text_table, train, ExperimentConfig, Predictor, RunReport, Trained};
use nsatp::sample::{Dataset, Split};
use nsatp::sim::build_dataset;
use nsatp::Error;

#[derive(Parser)]
#[command(
    name = "nsatp",
    version,
    about = "Non-stationary arrival time prediction toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a route and write a JSONL dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Stops on the route.
        #[arg(long)]
        stops: Option<usize>,
        /// Service days to simulate.
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        trips_per_day: Option<usize>,
        /// Past window length.
        #[arg(long)]
        n_p: Option<usize>,
        /// Prediction horizon.
        #[arg(long)]
        n_f: Option<usize>,
    },
    /// Train the configured model and report test metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset to train on; overrides `dataset` in the configuration.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split of a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Test windows concatenated for the ADF ratio.
        #[arg(long, default_value_t = 200)]
        adf_samples: usize,
    },
    /// Augmented Dickey-Fuller test of a one-column CSV series.
    Adf {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Regression::Ct)]
        regression: Regression,
        #[arg(long)]
        max_lag: Option<usize>,
    },
    /// Finite-difference check of every operation and of tiny models.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the ablation grid of an NSATP model.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Regression {
    /// Constant only.
    C,
    /// Constant and linear trend.
    Ct,
}

/// A command failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::Diverged(_) => 3,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 4,
        message: format!("{}: {e}", path.display()),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> CmdResult {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_fail(path, e))
}

/// The dataset named on the command line or in the config, else a fresh simulation.
fn dataset(cfg: &ExperimentConfig, arg: Option<PathBuf>) -> Result<Dataset, Failure> {
    match arg.or_else(|| cfg.dataset.clone()) {
        Some(p) => Dataset::load(&p).map_err(|e| match e {
            Error::Io(io) => io_fail(&p, io),
            other => other.into(),
        }),
        None => {
            let mut sim = cfg.sim.clone();
            (sim.n_p, sim.n_f) = cfg.window();
            Ok(build_dataset(&sim)?)
        }
    }
}

fn write_reports(out: &Path, name: &str, reports: &[RunReport]) -> CmdResult {
    let json = if let [r] = reports {
        r.to_json()
    } else {
        serde_json::to_string_pretty(reports).expect("reports serialise")
    };
    write(&out.join(format!("{name}.json")), &json)?;
    let table = text_table(reports);
    write(&out.join(format!("{name}.txt")), &table)?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate {
            common,
            stops,
            days,
            trips_per_day,
            n_p,
            n_f,
        } => {
            let cfg = load_config(&common)?;
            let mut sim = cfg.sim;
            if let Some(s) = common.seed {
                sim.process.seed = s;
            }
            sim.n_stops = stops.unwrap_or(sim.n_stops);
            sim.days = days.unwrap_or(sim.days);
            sim.trips_per_day = trips_per_day.unwrap_or(sim.trips_per_day);
            sim.n_p = n_p.unwrap_or(sim.n_p);
            sim.n_f = n_f.unwrap_or(sim.n_f);
            let ds = build_dataset(&sim)?;
            let path = common.out.join("dataset.jsonl");
            fs::create_dir_all(&common.out).map_err(|e| io_fail(&common.out, e))?;
            ds.save(&path)?;
            println!(
                "{}: {} train / {} val / {} test windows, {} trips skipped",
                path.display(),
                ds.split(Split::Train).count(),
                ds.split(Split::Val).count(),
                ds.split(Split::Test).count(),
                ds.header.skipped_trips
            );
        }
        Command::Train {
            common,
            dataset: ds_arg,
        } => {
            let cfg = load_config(&common)?;
            let ds = dataset(&cfg, ds_arg)?;
            let out = train(&cfg, &ds)?;
            if let Predictor::Learned(t) = &out.predictor {
                fs::create_dir_all(&common.out).map_err(|e| io_fail(&common.out, e))?;
                t.save(&common.out.join("checkpoint.json"))?;
            }
            write_reports(&common.out, "report", &[out.report])?;
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            adf_samples,
        } => {
            let t = Trained::load(&checkpoint)?;
            let ds = Dataset::load(&dataset)?;
            let test = ds.split_vec(Split::Test);
            let eval = evaluate(&Predictor::Learned(Box::new(t)), &test, adf_samples)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&eval).expect("evaluation serialises")
            );
        }
        Command::Adf {
            input,
            regression,
            max_lag,
        } => {
            let file = fs::File::open(&input).map_err(|e| io_fail(&input, e))?;
            let y = read_series_csv(file)?;
            let kind = match regression {
                Regression::C => RegressionKind::Constant,
                Regression::Ct => RegressionKind::ConstantAndTrend,
            };
            let r = adf_test(&y, max_lag, kind)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&r).expect("result serialises")
            );
        }
        Command::Gradcheck { seed } => {
            let cases = run_suite(seed)?;
            let mut failed = 0;
            for c in &cases {
                let status = if c.passes() { "ok" } else { "FAIL" };
                println!(
                    "{:<24} {status:<4} max_rel {:.2e} (tol {:.0e}, {} entries)",
                    c.name, c.report.max_rel_err, c.tol, c.report.checked
                );
                failed += usize::from(!c.passes());
            }
            if failed > 0 {
                return Err(Failure {
                    code: 1,
                    message: format!("{failed} of {} gradient checks failed", cases.len()),
                });
            }
        }
        Command::Ablate {
            common,
            dataset: ds_arg,
        } => {
            let cfg = load_config(&common)?;
            let ds = dataset(&cfg, ds_arg)?;
            let reports = ablate(&cfg, &ds)?;
            write_reports(&common.out, "ablation", &reports)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
