use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memwave::config::RunConfig;
use memwave::diagnostics::fit_decay_window;
use memwave::integrator::Termination;
use memwave::pipeline::{self, prepare, validate, write_outputs};
use memwave::Error;

#[derive(Parser)]
#[command(name = "memwave", version, about = "Wave equations with fading memory and delayed feedback")]
struct Cli {
    /// Worker threads for ensembles and sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check kernel hypotheses, admissibility and smallness.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate and write config.toml, trace.csv and report.toml.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Run even when validation reports hard failures (kernel rejection still stops).
        #[arg(long)]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One run per value of a parameter (k0, sigma, tau, amplitude, K, dt).
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Refit the decay rate of an existing trace.csv.
    Fit {
        trace: PathBuf,
        /// Start of the fit window as a fraction of the time span.
        #[arg(long, default_value_t = 0.5)]
        window: f64,
    },
    /// Estimate the semigroup constants (M, omega) alone.
    Constants {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_validate(config: &Path, seed: Option<u64>) -> Result<u8, Error> {
    let prep = prepare(&load(config, seed)?)?;
    let v = validate(&prep)?;
    print!("{}", pipeline::to_toml(&v)?);
    for w in &v.warnings {
        log::warn!("{w}");
    }
    if v.passed() {
        Ok(0)
    } else {
        for f in &v.hard_failures {
            eprintln!("error: {f}");
        }
        Ok(EXIT_VALIDATION)
    }
}

fn cmd_run(config: &Path, out: &Path, force: bool, seed: Option<u64>) -> Result<u8, Error> {
    let prep = prepare(&load(config, seed)?)?;
    let v = validate(&prep)?;
    for w in &v.warnings {
        log::warn!("{w}");
    }
    if !v.passed() && !force {
        for f in &v.hard_failures {
            eprintln!("error: {f}");
        }
        return Ok(EXIT_VALIDATION);
    }
    let outcome = pipeline::execute(&prep, v)?;
    write_outputs(out, &prep, &outcome)?;
    let r = &outcome.report;
    println!("status = {:?}", r.status);
    if let Some(f) = &r.fit {
        println!("beta = {}", f.beta);
    }
    Ok(match outcome.trajectory.termination {
        Termination::Diverged { .. } => EXIT_DIVERGENCE,
        _ => 0,
    })
}

fn cmd_sweep(config: &Path, param: &str, values: &[f64], out: &Path, force: bool, seed: Option<u64>) -> Result<u8, Error> {
    let cfg = load(config, seed)?;
    let rows = pipeline::sweep(&cfg, param, values, force, Some(out))?;
    let summary = pipeline::summary_csv(&rows);
    let path = out.join("summary.csv");
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    std::fs::write(&path, &summary).map_err(|e| io_error(&path, e))?;
    print!("{summary}");
    Ok(0)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn cmd_fit(trace: &Path, window: f64) -> Result<u8, Error> {
    let data = pipeline::read_trace_csv(trace)?;
    let fit = fit_decay_window(&data, window)?;
    print!("{}", pipeline::to_toml(&fit)?);
    Ok(0)
}

fn cmd_constants(config: &Path, seed: Option<u64>) -> Result<u8, Error> {
    let prep = prepare(&load(config, seed)?)?;
    let c = prep.constants()?;
    print!("{}", pipeline::to_toml(&c)?);
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let result = match &cli.command {
        Command::Validate { config, seed } => cmd_validate(config, *seed),
        Command::Run {
            config,
            out,
            force,
            seed,
        } => cmd_run(config, out, *force, *seed),
        Command::Sweep {
            config,
            param,
            values,
            out,
            force,
            seed,
        } => cmd_sweep(config, param, values, out, *force, *seed),
        Command::Fit { trace, window } => cmd_fit(trace, *window),
        Command::Constants { config, seed } => cmd_constants(config, *seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
