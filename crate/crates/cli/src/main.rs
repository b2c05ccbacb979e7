//! `goldisim` command-line front end.
//!
//! Exit codes: 0 success, 1 replay mismatch, 2 configuration, 3 I/O,
//! 4 data shape, 5 metric undefined, 6 numerical. Failures print one JSON
//! line `{"error":{"kind":..,"code":..,"message":..}}` on stderr.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use goldisim::curriculum::Strategy;
use goldisim::Error;

#[derive(Parser)]
#[command(name = "goldisim", version, about = "Lesion simulator and curriculum runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic normal radiographs.
    Phantom {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Insert simulated lesions into normals.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Draw the simulator parameters uniformly per image.
        #[arg(long)]
        uniform: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy detector on annotated images.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// FROC evaluation of a checkpoint or a predictions file.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a domain-randomization strategy end to end.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// gdr, udr, bayrn or easy2hard; overrides curriculum.strategy.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One target-seeking BO search for a detector.
    BoTrace {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a single lesion and its composite.
    LesionPreview {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-execute a manifest and check the outputs are identical.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Parameter(_) => ("config", 2),
        Error::Io { .. } => ("io", 3),
        Error::Dimension(_) | Error::DataShape(_) | Error::Format { .. } => ("data-shape", 4),
        Error::MetricUndefined(_) => ("metric-undefined", 5),
        Error::Numerical(_) | Error::Diagnostic(_) => ("numerical", 6),
    }
}

fn report(kind: &str, code: u8, message: String) -> ExitCode {
    let line = serde_json::json!({"error": {"kind": kind, "code": code, "message": message}});
    eprintln!("{line}");
    ExitCode::from(code)
}

fn init_threads() -> Result<(), Error> {
    let n = match std::env::var("GOLDISIM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parameter(format!("GOLDISIM_THREADS={v:?} is not a count")))?,
        Err(_) => 0,
    };
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<ExitCode, Error> {
    use commands::*;
    use manifest::Invocation;

    init_threads()?;
    let load = |p: &Option<PathBuf>| config::load(p.as_deref(), overrides);
    let no_overrides = || {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(
                "this command takes no --section.key overrides".into(),
            ))
        }
    };
    let (inv, out) = match cli.cmd {
        Cmd::Phantom { n, size, seed, out } => {
            no_overrides()?;
            (Invocation::Phantom { n, size, seed }, out)
        }
        Cmd::Simulate {
            config,
            uniform,
            out,
        } => (
            Invocation::Simulate {
                config: load(&config)?,
                uniform,
            },
            out,
        ),
        Cmd::Train {
            config,
            train,
            val,
            init,
            out,
        } => (
            Invocation::Train {
                config: load(&config)?,
                train,
                val,
                init,
            },
            out,
        ),
        Cmd::Eval {
            data,
            checkpoint,
            predictions,
            out,
        } => {
            no_overrides()?;
            (
                Invocation::Eval {
                    data,
                    checkpoint,
                    predictions,
                },
                out,
            )
        }
        Cmd::Run {
            config,
            strategy,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = strategy {
                cfg.curriculum.strategy = s.parse::<Strategy>()?;
                cfg.curriculum.validate()?;
            }
            (Invocation::Run { config: cfg }, out)
        }
        Cmd::BoTrace {
            config,
            checkpoint,
            out,
        } => (
            Invocation::BoTrace {
                config: load(&config)?,
                checkpoint,
            },
            out,
        ),
        Cmd::LesionPreview { config, seed, out } => (
            Invocation::LesionPreview {
                config: load(&config)?,
                seed,
            },
            out,
        ),
        Cmd::Replay { manifest, out } => {
            no_overrides()?;
            let mismatched = cmd_replay(&manifest, &out)?;
            if !mismatched.is_empty() {
                return Ok(report(
                    "replay-mismatch",
                    1,
                    format!("outputs differ: {}", mismatched.join(", ")),
                ));
            }
            println!("replay: outputs identical");
            return Ok(ExitCode::SUCCESS);
        }
    };
    execute(&inv, &out)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let (args, overrides) = config::split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match run(cli, &overrides) {
        Ok(code) => code,
        Err(e) => {
            let (kind, code) = classify(&e);
            report(kind, code, e.to_string())
        }
    }
}
