//! `ccf`: fit, forecast, cross-validate, benchmark and simulate core
//! components forecasting models from CSV panels.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccf_core::baseline::run_bench;
use ccf_core::ccf::{fit_ar_augment, fit_model, forecast, CcfModel};
use ccf_core::selection::run_cv;
use ccf_core::simulate::run_experiment;
use ccf_core::{CcfError, Result, TimeSeriesPanel};
use clap::{Parser, Subcommand};

use config::{CommonFlags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "ccf", version, about = "Core components forecasting")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model with the configured stage schedule
    Fit {
        #[command(flatten)]
        flags: CommonFlags,
        /// Components to fit when the config has no schedule
        #[arg(long)]
        components: Option<usize>,
        /// Explanatory lags of every stage
        #[arg(long)]
        c: Option<usize>,
        /// Component lags of every stage
        #[arg(long)]
        k: Option<usize>,
        /// Penalty of every stage
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Forecast from a saved model
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Must match the model's horizon when given
        #[arg(long)]
        horizon: Option<usize>,
        /// Forecast origin as a zero-based row (default: last row)
        #[arg(long)]
        origin: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate lags, penalty and component count
    Cv {
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Compare the component model with sdPCA on the second validation segment
    Bench {
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Run the Monte Carlo experiment
    Simulate {
        #[command(flatten)]
        flags: CommonFlags,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated noise levels
        #[arg(long, value_delimiter = ',')]
        sigma: Option<Vec<f64>>,
        /// Share one set of VAR coefficients and loadings across replications
        #[arg(long)]
        fixed_loadings: bool,
    },
}

fn exit_code(err: &CcfError) -> u8 {
    match err.root() {
        CcfError::Schema(_) | CcfError::Dimension(_) => 3,
        CcfError::Numeric(_) | CcfError::SingularDesign(_) | CcfError::Domain(_) => 4,
        _ => 2,
    }
}

/// Writes every file only after all of them have been produced, each via a
/// temporary file and rename.
fn write_outputs(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, dir.join(name))?;
    }
    Ok(())
}

fn cmd_fit(
    flags: &CommonFlags,
    components: Option<usize>,
    c: Option<usize>,
    k: Option<usize>,
    lambda: Option<f64>,
) -> Result<()> {
    let mut cfg = RunConfig::resolve(flags)?;
    if cfg.schedule.is_empty() || components.is_some() {
        let stage = ccf_core::ccf::StageSpec {
            c: c.unwrap_or(0),
            k: k.unwrap_or(0),
            lambda: lambda.unwrap_or(0.0),
        };
        cfg.schedule = vec![stage; components.unwrap_or(1)];
    }
    let (y, z) = cfg.panels()?;
    cfg.cv.validate()?;
    let mut model = fit_model(&y, &z, &cfg.schedule, cfg.cv.h, cfg.cv.loss, &cfg.cv.solver)?;
    if cfg.ar_orders.iter().any(|o| *o > 0) {
        model = fit_ar_augment(&model, &y, &z, &cfg.ar_orders)?;
    }
    write_outputs(&cfg.out_dir(), &[("model.json", model.to_json()? + "\n")])?;
    println!(
        "fitted {} component(s) on {} periods; model written to {}",
        model.components.len(),
        y.n_periods(),
        cfg.out_dir().join("model.json").display()
    );
    Ok(())
}

fn cmd_forecast(
    model_path: &Path,
    data: &Path,
    horizon: Option<usize>,
    origin: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = CcfModel::load(model_path)?;
    if let Some(h) = horizon {
        if h != model.h {
            return Err(CcfError::Schema(format!("model forecasts {} steps ahead, not {h}", model.h)));
        }
    }
    let panel = TimeSeriesPanel::read_csv(data)?;
    let select = |names: &[String]| {
        panel.select(names).map_err(|e| match e {
            CcfError::MissingColumn(c) => CcfError::Schema(format!("model column `{c}` not in data")),
            other => other,
        })
    };
    let y = select(&model.y_names)?;
    let z = select(&model.z_names)?;
    let t = origin.unwrap_or(panel.n_periods() - 1);
    let fc = forecast(&model, &y, &z, t)?;
    let mut csv = String::from("series,standardized,original\n");
    for (i, name) in model.y_names.iter().enumerate() {
        csv.push_str(&format!("{name},{},{}\n", fc.standardized[i], fc.original[i]));
    }
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    write_outputs(&dir, &[("forecast.csv", csv.clone())])?;
    print!("{csv}");
    Ok(())
}

fn cmd_cv(flags: &CommonFlags) -> Result<()> {
    let cfg = RunConfig::resolve(flags)?;
    let (y, z) = cfg.panels()?;
    let outcome = run_cv(&y, &z, &cfg.cv)?;
    let summary = outcome.report.summary();
    write_outputs(
        &cfg.out_dir(),
        &[
            ("cv_report.json", outcome.report.to_json()? + "\n"),
            ("model.json", outcome.model.to_json()? + "\n"),
            ("cv_summary.txt", summary.clone()),
        ],
    )?;
    print!("{summary}");
    Ok(())
}

fn cmd_bench(flags: &CommonFlags) -> Result<()> {
    let cfg = RunConfig::resolve(flags)?;
    let (y, z) = cfg.panels()?;
    let bench = run_bench(&y, &z, &cfg.cv, &cfg.sdpca)?;
    let csv = bench.to_csv();
    write_outputs(
        &cfg.out_dir(),
        &[
            ("bench.csv", csv.clone()),
            ("cv_report.json", bench.report.to_json()? + "\n"),
        ],
    )?;
    print!("{csv}");
    Ok(())
}

fn cmd_simulate(flags: &CommonFlags, reps: Option<usize>, sigma: Option<Vec<f64>>, fixed: bool) -> Result<()> {
    let cfg = RunConfig::resolve(flags)?;
    let mut sim = cfg.simulate.clone();
    if let Some(r) = reps {
        sim.reps = r;
    }
    if let Some(s) = sigma {
        sim.sigma_e = s;
    }
    if fixed {
        sim.redraw_loadings = false;
    }
    let result = run_experiment(&sim)?;
    let table = result.table_csv();
    write_outputs(
        &cfg.out_dir(),
        &[
            ("sim_table.csv", table.clone()),
            ("sim_records.json", serde_json::to_string_pretty(&result)? + "\n"),
        ],
    )?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CcfError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit {
            flags,
            components,
            c,
            k,
            lambda,
        } => cmd_fit(&flags, components, c, k, lambda),
        Command::Forecast {
            model,
            data,
            horizon,
            origin,
            out,
        } => cmd_forecast(&model, &data, horizon, origin, out),
        Command::Cv { flags } => cmd_cv(&flags),
        Command::Bench { flags } => cmd_bench(&flags),
        Command::Simulate {
            flags,
            reps,
            sigma,
            fixed_loadings,
        } => cmd_simulate(&flags, reps, sigma, fixed_loadings),
    }
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
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
