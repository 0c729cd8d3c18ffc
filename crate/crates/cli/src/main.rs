use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srs_core::report::{self, format_sig6, ExperimentSpec};
use srs_core::Error;

/// Run reward-stabilization experiments and render their results.
#[derive(Debug, Parser)]
#[command(name = "srslab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train every variant at every seed and write the result bundle.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; defaults to the spec's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs; defaults to the number of CPUs.
        #[arg(long)]
        parallel: Option<usize>,
        /// Added to every seed in the spec.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Parse a spec and print it with every default filled in.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Redraw the chart of a finished run from its stored timelines.
    Replot {
        /// Result directory of a previous run.
        #[arg(long, required_unless_present = "spec")]
        out: Option<PathBuf>,
        /// Spec whose `output_dir` holds the results.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

// Closed pipes (e.g. `| head`) are not errors for a report printer.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation { .. } | Error::Parse { .. } | Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_RUN_FAILURE,
    }
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, (u8, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| (EXIT_USAGE, format!("cannot read {}: {e}", path.display())))?;
    report::parse_spec(&text).map_err(|e| (exit_code(&e), format!("{}: {e}", path.display())))
}

fn fail(e: Error) -> (u8, String) {
    (exit_code(&e), e.to_string())
}

fn execute(cli: Cli) -> Result<(), (u8, String)> {
    match cli.command {
        Command::Validate { spec } => {
            let spec = load_spec(&spec)?;
            out!("{}", spec.to_json());
            Ok(())
        }
        Command::Run {
            spec,
            out,
            parallel,
            seed_offset,
        } => {
            let spec = load_spec(&spec)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&spec.output_dir));
            let parallel = parallel
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            if parallel == 0 {
                return Err((EXIT_USAGE, "--parallel must be at least 1".into()));
            }
            let outcome = report::run_experiment(&spec, &out, parallel, seed_offset).map_err(fail)?;
            for row in outcome.table.rows() {
                let num = |v: Option<f64>| v.map(format_sig6).unwrap_or_else(|| "-".into());
                out!(
                    "{:<20} {:<30} {:>12} ± {:<12} attained {}/{}",
                    row.variant,
                    row.metric,
                    num(row.mean),
                    num(row.ci_half_width),
                    row.attained,
                    row.n
                );
            }
            out!("results written to {}", outcome.output_dir.display());
            let failures = outcome.failures();
            if failures > 0 {
                return Err((EXIT_RUN_FAILURE, format!("{failures} run(s) failed")));
            }
            Ok(())
        }
        Command::Replot { out, spec } => {
            let dir = match (out, spec) {
                (Some(dir), _) => dir,
                (None, Some(spec)) => PathBuf::from(load_spec(&spec)?.output_dir),
                (None, None) => return Err((EXIT_USAGE, "replot needs --out or --spec".into())),
            };
            let path = report::replot(&dir).map_err(fail)?;
            out!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("srslab: {msg}");
            ExitCode::from(code)
        }
    }
}
