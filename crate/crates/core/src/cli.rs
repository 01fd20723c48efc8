//! The command-line driver: parse a program, simplify it, infer the bound,
//! and render the report; optionally cross-check the concrete bound with
//! the reference interpreter.
//!
//! Exit statuses: `0` success, `1` I/O failure, `2` parse error, `3`
//! timeout (partial output printed if any).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use num_traits::ToPrimitive;
use serde::Serialize;

use crate::arith::{Rat, Var};
use crate::asymptotics::{best_bound, BoundResult, SearchConfig};
use crate::interp::{max_cost, GroundTerm, RunBudget};
use crate::pipeline::{simplify, PipelineConfig, Simplified};
use crate::program::Program;
use crate::report::{self, Format, Report};
use crate::smt::{enumerate_points, Model, Smt};

pub use crate::parse::{parse_program as parse, ParseError};

/// Environment variable that overrides the external solver path.
pub const SOLVER_ENV: &str = "ITSLB_SMT_SOLVER";

/// Exit status on success.
pub const EXIT_OK: i32 = 0;
/// Exit status when the input cannot be read.
pub const EXIT_IO: i32 = 1;
/// Exit status on a parse error.
pub const EXIT_PARSE: i32 = 2;
/// Exit status on a timeout.
pub const EXIT_TIMEOUT: i32 = 3;

/// Settings of one invocation.
#[derive(Clone, Debug)]
pub struct CliConfig {
    /// The input file.
    pub input: PathBuf,
    /// Whole-run timeout.
    pub timeout: Duration,
    /// Per-query solver timeout.
    pub smt_timeout: Duration,
    /// External SMT-LIB2 solver.
    pub smt_solver: Option<PathBuf>,
    /// Rule cap of the simplification.
    pub max_rules: usize,
    /// Depth cap of the limit-problem search.
    pub depth_cap: usize,
    /// Where to write the proof, if anywhere.
    pub proof: Option<PathBuf>,
    /// Cross-check the concrete bound with the interpreter.
    pub validate: bool,
    /// Output format.
    pub format: Format,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            input: PathBuf::new(),
            timeout: Duration::from_secs(60),
            smt_timeout: Duration::from_secs(2),
            smt_solver: None,
            max_rules: 1000,
            depth_cap: 12,
            proof: None,
            validate: false,
            format: Format::Text,
        }
    }
}

impl CliConfig {
    /// The solver path after applying the environment override.
    pub fn solver(&self) -> Option<PathBuf> {
        std::env::var_os(SOLVER_ENV)
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
            .or_else(|| self.smt_solver.clone())
    }
}

/// Everything computed for one program.
#[derive(Clone, Debug)]
pub struct Analysis {
    /// The simplification result.
    pub simplified: Simplified,
    /// The inferred bound.
    pub bound: BoundResult,
    /// The report.
    pub report: Report,
}

/// Runs simplification and asymptotic analysis.
pub fn analyze(p: &Program, cfg: &CliConfig) -> Analysis {
    let solver = cfg.solver();
    let pcfg = PipelineConfig {
        rule_cap: cfg.max_rules,
        smt_timeout: cfg.smt_timeout,
        smt_solver: solver.clone(),
        ..PipelineConfig::default()
    };
    let simplified = simplify(p, &pcfg);
    let smt = Smt {
        external: solver,
        ..Smt::with_timeout(cfg.smt_timeout)
    };
    let scfg = SearchConfig {
        depth_cap: cfg.depth_cap,
        ..SearchConfig::default()
    };
    let bound = best_bound(&smt, &simplified.program, &scfg);
    let report = report::build(p, &simplified, &bound);
    Analysis {
        simplified,
        bound,
        report,
    }
}

/// Outcome of one oracle comparison.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum Verdict {
    /// The interpreter found a run at least as expensive as the bound.
    Confirmed,
    /// The budget was exhausted before reaching the bound.
    Inconclusive,
    /// The search was exhaustive and stayed below the bound.
    Refuted,
}

/// One sampled input of the validation.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Sample {
    /// The valuation (program and temporary variables).
    pub point: String,
    /// The concrete bound at the valuation.
    pub bound: String,
    /// The largest run cost the interpreter found.
    pub observed: String,
    /// The comparison.
    pub verdict: Verdict,
}

/// Up to `count` small integer valuations of the witnessing rule's
/// variables satisfying its guard (enumeration order: small magnitudes first).
pub fn sample_points(bound: &BoundResult, vars: &[Var], count: usize, max_abs: i64) -> Vec<Model> {
    let mut all: Vec<Var> = vars.to_vec();
    for v in bound.guard.vars().into_iter().chain(bound.cost.vars()) {
        if !all.contains(&v) {
            all.push(v);
        }
    }
    let mut out = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(2);
    enumerate_points(all.len(), max_abs, 200_000, deadline, |pt| {
        let m: Model = all.iter().cloned().zip(pt.iter().map(|v| Rat::from_integer((*v).into()))).collect();
        if bound.guard.holds(&m).unwrap_or(false) {
            out.push(m);
        }
        out.len() >= count
    });
    out
}

/// Checks the concrete bound against the interpreter at up to `count`
/// guard-satisfying inputs: the maximal run cost from the start symbol must
/// reach the bound.
pub fn validate(input: &Program, bound: &BoundResult, count: usize, budget: &RunBudget) -> Vec<Sample> {
    if bound.rule.is_none() {
        return Vec::new();
    }
    // Start with small inputs; widen the box when the guard excludes all of them.
    let mut max_abs = budget.tv_range.1.abs().min(budget.tv_range.0.abs()).clamp(1, 6);
    let mut points = sample_points(bound, &input.vars, count, max_abs);
    while points.is_empty() && max_abs < 16 {
        max_abs *= 2;
        points = sample_points(bound, &input.vars, count, max_abs);
    }
    let mut out = Vec::new();
    for m in points {
        // Exact where possible; irrational values (e.g. 2^(1/2)) are compared in floating point.
        let (expected, expected_f) = match bound.cost.eval(&m) {
            Ok(q) => (crate::arith::fmt_rat(&q), q.to_f64().unwrap_or(f64::INFINITY)),
            Err(_) => {
                let mf: BTreeMap<Var, f64> = m.iter().map(|(k, v)| (k.clone(), v.to_f64().unwrap_or(0.0))).collect();
                match bound.cost.eval_f64(&mf) {
                    Ok(f) => (format!("{f:.6}"), f),
                    Err(_) => continue,
                }
            }
        };
        let args: Vec<Rat> = input.vars.iter().map(|v| m[v].clone()).collect();
        let start = vec![GroundTerm {
            fun: input.start.clone(),
            args,
        }];
        let got = max_cost(input, &start, budget);
        let reached = match bound.cost.eval(&m) {
            Ok(q) => got.value >= q,
            Err(_) => got.value.to_f64().is_some_and(|g| g >= expected_f),
        };
        let verdict = if reached {
            Verdict::Confirmed
        } else if got.truncated {
            Verdict::Inconclusive
        } else {
            Verdict::Refuted
        };
        out.push(Sample {
            point: crate::smt::fmt_model(&m),
            bound: expected,
            observed: crate::arith::fmt_rat(&got.value),
            verdict,
        });
    }
    out
}

/// Result of [`run`]: the exit status and everything printed.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Exit status.
    pub status: i32,
    /// Standard output.
    pub stdout: String,
    /// Standard error.
    pub stderr: String,
}

/// Runs the whole tool on `cfg.input`.
pub fn run(cfg: &CliConfig) -> RunOutcome {
    let src = match std::fs::read_to_string(&cfg.input) {
        Ok(s) => s,
        Err(e) => {
            return RunOutcome {
                status: EXIT_IO,
                stdout: String::new(),
                stderr: format!("cannot read {}: {e}\n", cfg.input.display()),
            }
        }
    };
    run_source(&src, cfg)
}

/// Runs the whole tool on program text.
pub fn run_source(src: &str, cfg: &CliConfig) -> RunOutcome {
    let p = match parse(src) {
        Ok(p) => p,
        Err(e) => {
            return RunOutcome {
                status: EXIT_PARSE,
                stdout: String::new(),
                stderr: format!("{e}\n"),
            }
        }
    };
    let (tx, rx) = mpsc::channel();
    let worker_cfg = cfg.clone();
    let worker_p = p.clone();
    std::thread::spawn(move || {
        let _ = tx.send(analyze(&worker_p, &worker_cfg));
    });
    let analysis = match rx.recv_timeout(cfg.timeout) {
        Ok(a) => a,
        Err(_) => {
            return RunOutcome {
                status: EXIT_TIMEOUT,
                stdout: "Asymptotic lower bound: Omega(1)\n".into(),
                stderr: format!("timeout after {:?}\n", cfg.timeout),
            }
        }
    };
    let mut stdout = report::render(&analysis.report, cfg.format);
    if cfg.format == Format::Json {
        stdout.push('\n');
    }
    let mut stderr = String::new();
    if let Some(path) = &cfg.proof {
        let text = match cfg.format {
            Format::Text => report::render_proof(&analysis.report),
            Format::Json => report::render(&analysis.report, Format::Json),
        };
        if let Err(e) = std::fs::write(path, text) {
            stderr.push_str(&format!("cannot write proof to {}: {e}\n", path.display()));
        }
    }
    if cfg.validate {
        let samples = validate(&p, &analysis.bound, 3, &RunBudget::default());
        // Keep JSON output parseable: validation lines then go to stderr.
        let sink = if cfg.format == Format::Json { &mut stderr } else { &mut stdout };
        for s in &samples {
            sink.push_str(&format!(
                "Validation at {}: bound {} observed {} ({:?})\n",
                s.point, s.bound, s.observed, s.verdict
            ));
        }
    }
    RunOutcome {
        status: EXIT_OK,
        stdout,
        stderr,
    }
}
