use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use haframe::harness::{
    cmd_curves, cmd_eval, cmd_solve, cmd_sweep, cmd_train, curves_csv, exit_code, HarnessError, RunConfig,
};

#[derive(Debug, Parser)]
#[command(name = "haframe", version, about = "Hierarchy-aware fixed classifier frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a frame for a hierarchy and write frame.csv plus frame.json.
    Solve {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every seed of a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Evaluate a checkpoint on a dataset CSV, with and without CRM reranking.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        hierarchy: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over gamma and alpha by mean validation HierDist@1.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        runs_per_cell: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit mapping curves (d, S) as CSV.
    Curves {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        gammas: Vec<f64>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn write_file(path: &PathBuf, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends output quietly.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
        }
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Solve {
            hierarchy,
            gamma,
            seed,
            out,
        } => {
            let s = cmd_solve(&hierarchy, gamma, seed, &out)?;
            emit(&format!(
                "s_min = {:.2}\nframe bounds (A, B) = ({:e}, {:e})\nreconstruction error = {:e}\n",
                s.s_min, s.bounds.lower, s.bounds.upper, s.reconstruction_error
            ));
        }
        Command::Train {
            config,
            seed,
            out,
            gamma,
            alpha,
        } => {
            let mut cfg = load_config(&config, seed, out)?;
            cfg.gamma = gamma.unwrap_or(cfg.gamma);
            cfg.alpha = alpha.unwrap_or(cfg.alpha);
            cfg.validate()?;
            let result = cmd_train(&cfg)?;
            emit(&(to_json(&result.summary) + "\n"));
        }
        Command::Eval {
            checkpoint,
            dataset,
            hierarchy,
            out,
        } => {
            let result = cmd_eval(&checkpoint, &dataset, &hierarchy)?;
            let text = to_json(&result);
            if let Some(path) = out {
                write_file(&path, &(text.clone() + "\n"))?;
            }
            emit(&(text + "\n"));
        }
        Command::Sweep {
            config,
            gammas,
            alphas,
            runs_per_cell,
            seed,
            out,
        } => {
            let cfg = load_config(&config, seed, out)?;
            let table = cmd_sweep(&cfg, &gammas, &alphas, runs_per_cell)?;
            let best = table.best_cell();
            emit(&format!(
                "{}selected gamma = {}, alpha = {}\n",
                table.to_csv(),
                best.gamma,
                best.alpha
            ));
        }
        Command::Curves { hierarchy, gammas, out } => {
            let csv = curves_csv(&cmd_curves(&hierarchy, &gammas)?);
            match out {
                Some(path) => write_file(&path, &csv)?,
                None => emit(&csv),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit_code::USAGE as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
