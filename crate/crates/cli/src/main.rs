use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use replica_cli::config::{validate_config, ConfigError, ExperimentConfig, Task, Units};
use replica_cli::dump::dump_instance;
use replica_cli::output::write_csv;
use replica_cli::pf_tools::{binary_rate, derivative_check};
use replica_cli::runner::{point_seed, run_sweep, verify_rows};
use replica_cli::{pool, thread_count, CliError};
use replica_core::perron::RateOptions;
use replica_core::simulator::sample_instance;

#[derive(Parser)]
#[command(name = "replica", version, about = "Replica predictions for linear models with Markov priors, and their simulation checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replica sweep over the configured loads, plus any simulation tasks listed in the config.
    Sweep(RunArgs),
    /// Run a single simulation task over the configured loads.
    Simulate {
        #[arg(value_enum)]
        kind: SimKind,
        #[command(flatten)]
        run: RunArgs,
        /// Write the first instance of the first load as JSON.
        #[arg(long)]
        dump_instance: Option<PathBuf>,
    },
    /// Perron–Frobenius tools for binary Markov sources.
    Pf {
        #[command(subcommand)]
        command: PfCommand,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Exact,
    Mh,
    Amp,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitArg {
    Nats,
    Bits,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to REPLICA_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment document (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    units: Option<UnitArg>,
    /// Re-check the fixed-point residual of every replica row.
    #[arg(long)]
    verify: bool,
}

#[derive(Subcommand)]
enum PfCommand {
    /// Analytic log-PF gradient against central differences on random binary bases.
    DerivCheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Rate function of the Q-process of a binary chain.
    Rate {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        delta: f64,
        /// Memory of the Q-states.
        #[arg(long, default_value_t = 1)]
        nu: usize,
        /// SNR law as JSON `[[value, probability], ...]`.
        #[arg(long, default_value = "[[1.0, 1.0]]")]
        snr: String,
        /// Target matrix as JSON rows.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 1e3)]
        cap: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Validation(vec![ConfigError { path: path.into(), message: message.into() }])
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Reads and validates the document; `task` replaces the document's task list.
fn load(run: &RunArgs, task: Option<Task>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&run.config).map_err(|e| invalid("config", format!("{}: {e}", run.config.display())))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid("$", format!("not valid JSON: {e}")))?;
    if let (Some(t), Some(map)) = (task, doc.as_object_mut()) {
        map.insert("tasks".into(), serde_json::json!([t.name()]));
    }
    let mut cfg = validate_config(&doc).map_err(CliError::Validation)?;
    if let Some(s) = run.common.seed {
        cfg.seed = s;
    }
    if let Some(u) = run.units {
        cfg.units = match u {
            UnitArg::Nats => Units::Nats,
            UnitArg::Bits => Units::Bits,
        };
    }
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig, run: &RunArgs) -> Result<(), CliError> {
    let workers = pool(thread_count(run.common.threads)?)?;
    let rows = run_sweep(cfg, &workers);
    let out = run.common.out.as_deref().or(cfg.output.as_deref());
    write_csv(&rows, cfg.units, open_out(out)?)?;
    if run.verify {
        let bad = verify_rows(cfg, &rows);
        if !bad.is_empty() {
            let list: Vec<String> = bad.iter().map(|(b, r)| format!("β={b}: residual {r:e}")).collect();
            return Err(CliError::Numeric(format!("fixed-point verification failed at {}", list.join(", "))));
        }
    }
    let failed: Vec<String> = rows.iter().filter_map(|r| r.error.as_ref().map(|e| format!("β={}: {e}", r.beta))).collect();
    if !failed.is_empty() {
        return Err(CliError::Numeric(failed.join("\n")));
    }
    Ok(())
}

fn parse_matrix(text: &str, path: &str) -> Result<DMatrix<f64>, CliError> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| invalid(path, format!("expected JSON rows of numbers: {e}")))?;
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(invalid(path, "expected a nonempty square matrix"));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = load(&args, None)?;
            execute(&cfg, &args)
        }
        Command::Simulate { kind, run, dump_instance: dump } => {
            let task = match kind {
                SimKind::Exact => Task::ExactSim,
                SimKind::Mh => Task::Mh,
                SimKind::Amp => Task::Amp,
            };
            let cfg = load(&run, Some(task))?;
            if let Some(path) = dump {
                let inst = sample_instance(&cfg.model, cfg.n, cfg.betas[0], point_seed(cfg.seed, 0), 0)?;
                let text = serde_json::to_string_pretty(&dump_instance(&inst)).map_err(|e| CliError::Numeric(e.to_string()))?;
                std::fs::write(path, text)?;
            }
            execute(&cfg, &run)
        }
        Command::Pf { command } => match command {
            PfCommand::DerivCheck { cases, step, tolerance, common } => {
                let results = derivative_check(cases, common.seed.unwrap_or(0), step)?;
                let mut w = csv::Writer::from_writer(open_out(common.out.as_deref())?);
                w.write_record(["case", "nu", "q_states", "max_rel_error"])?;
                for (i, c) in results.iter().enumerate() {
                    w.write_record([i.to_string(), c.nu.to_string(), c.states.to_string(), c.max_rel_error.to_string()])?;
                }
                w.flush()?;
                let worst = results.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
                if !(worst < tolerance) {
                    return Err(CliError::Numeric(format!("largest relative error {worst:e} exceeds {tolerance:e}")));
                }
                Ok(())
            }
            PfCommand::Rate { alpha, delta, nu, snr, target, cap, common } => {
                let pts: Vec<(f64, f64)> = serde_json::from_str(&snr).map_err(|e| invalid("snr", e.to_string()))?;
                let target = parse_matrix(&target, "target")?;
                let options = RateOptions { cap, ..RateOptions::default() };
                let r = binary_rate(alpha, delta, nu, &pts, &target, &options)?;
                let mut w = csv::Writer::from_writer(open_out(common.out.as_deref())?);
                w.write_record(["value", "converged", "iterations", "gradient_norm"])?;
                w.write_record([r.value.to_string(), r.converged.to_string(), r.iterations.to_string(), r.gradient_norm.to_string()])?;
                w.flush()?;
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("replica: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
