//! `itslb`: infers worst-case lower runtime bounds of integer programs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use itslb::cli::{run, CliConfig};
use itslb::report::Format;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

/// Infers an asymptotic and a concrete lower bound on the worst-case
/// runtime of an integer transition system.
#[derive(Parser, Debug)]
#[command(name = "itslb", version)]
struct Args {
    /// Input program.
    input: PathBuf,
    /// Whole-run timeout in seconds.
    #[arg(long, default_value_t = 60.0, value_parser = positive)]
    timeout: f64,
    /// Per-query solver timeout in seconds.
    #[arg(long, default_value_t = 2.0, value_parser = positive)]
    smt_timeout: f64,
    /// External SMT-LIB2 solver (overridden by ITSLB_SMT_SOLVER).
    #[arg(long)]
    smt_solver: Option<PathBuf>,
    /// Maximal number of rules kept during simplification.
    #[arg(long, default_value_t = 1000)]
    max_rules: usize,
    /// Maximal derivation length of the limit-problem search.
    #[arg(long, default_value_t = 12)]
    depth_cap: usize,
    /// Write the proof to this file.
    #[arg(long)]
    proof: Option<PathBuf>,
    /// Cross-check the concrete bound with the reference interpreter.
    #[arg(long)]
    validate: bool,
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number of seconds, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let a = Args::parse();
    let cfg = CliConfig {
        input: a.input,
        timeout: Duration::from_secs_f64(a.timeout),
        smt_timeout: Duration::from_secs_f64(a.smt_timeout),
        smt_solver: a.smt_solver,
        max_rules: a.max_rules,
        depth_cap: a.depth_cap,
        proof: a.proof,
        validate: a.validate,
        format: match a.format {
            OutputFormat::Text => Format::Text,
            OutputFormat::Json => Format::Json,
        },
    };
    let out = run(&cfg);
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    ExitCode::from(out.status as u8)
}
