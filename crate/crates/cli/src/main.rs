//! `posnet` command-line interface.
//!
//! Exit codes: 0 on success (certificate or design found), 2 when the
//! problem is well-formed but infeasible, 1 on any error. Errors are
//! reported as one JSON object per line on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use posnet::certify::{min_unreliability, search_certificate_with, CertResult, SearchOptions, Searcher};
use posnet::design::{solve_design, DesignError, DesignFamily, DesignMode};
use posnet::model::{Mode, NetworkModel};
use posnet::montecarlo::{brute_force_prob_as, estimate_instability_probs, McError, RateConvention};
use posnet::sis::{self, NonPrevention, SisParams};

#[derive(Debug, Parser)]
#[command(name = "posnet", version, about = "Probabilistic stability certificates for positive networks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Meaning of --lambda: Lyapunov-function decay rate or state decay rate.
    #[arg(long, global = true, value_enum, default_value_t = Convention::Lyapunov)]
    rate_convention: Convention,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Convention {
    Lyapunov,
    State,
}

impl Convention {
    fn mc(self) -> RateConvention {
        match self {
            Convention::Lyapunov => RateConvention::Lyapunov,
            Convention::State => RateConvention::State,
        }
    }

    /// Decay rate of `xᵀPx` equivalent to the user's `λ`.
    fn lyapunov_rate(self, lambda: f64) -> f64 {
        match self {
            Convention::Lyapunov => lambda,
            Convention::State => 2.0 * lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    A1,
    A2,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify a model at a decay rate, or find its minimum unreliability.
    Analyze(AnalyzeArgs),
    /// Solve the distribution design program of a family.
    Design(DesignArgs),
    /// Monte-Carlo (and optionally exact) failure probability of a model.
    Validate(ValidateArgs),
    /// Networked SIS case study on an Erdős–Rényi graph.
    DemoSis(DemoArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("level").required(true).args(["eps", "min_eps"])))]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_eps: bool,
    /// Certificate variant; defaults to the model's independence mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DesignArgs {
    #[arg(long)]
    family: PathBuf,
    /// Pin the unreliability level instead of optimising it.
    #[arg(long)]
    fixed_eps: Option<f64>,
    /// DesignResult JSON (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of r* (stdout when --out is given and this is absent).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    samples: u64,
    #[arg(long)]
    seed: u64,
    /// Also enumerate the joint support when it is small enough.
    #[arg(long)]
    exact: bool,
    /// Emit the CSV header and row instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("figure").required(true).args(["fig1", "fig2"])))]
struct DemoArgs {
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    #[arg(long, default_value_t = 0.05)]
    edge_prob: f64,
    #[arg(long)]
    seed: u64,
    /// ε* table; optional `r=…` and `lambda=…` comma-separated grids.
    #[arg(long, num_args = 0..=2, value_name = "GRID")]
    fig1: Option<Vec<String>>,
    /// Per-node protection design.
    #[arg(long, requires = "cost_bound")]
    fig2: bool,
    /// Bound on Σ 1/r_i for --fig2.
    #[arg(long)]
    cost_bound: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

const DEFAULT_R_GRID: [f64; 4] = [0.1, 0.2, 0.3, 0.4];
const DEFAULT_LAMBDA_GRID: [f64; 10] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45];

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    fn line(&self) -> String {
        json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                let e = posnet::Error::from(e);
                Self::new(e.kind(), e.to_string())
            }
        }
    )*};
}

from_core!(
    posnet::model::ModelError,
    posnet::certify::CertifyError,
    DesignError,
    McError,
    posnet::sis::SisError
);

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

/// Outcome of a successful run.
enum Verdict {
    Done,
    Infeasible,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first).line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(Verdict::Done) => ExitCode::SUCCESS,
        Ok(Verdict::Infeasible) => ExitCode::from(2),
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Verdict, CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::new("usage", "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::new("usage", e.to_string()))?;
    }
    let conv = cli.rate_convention;
    match cli.command {
        Command::Analyze(a) => analyze(a, conv),
        Command::Design(a) => design(a),
        Command::Validate(a) => validate(a, conv),
        Command::DemoSis(a) => demo_sis(a, conv),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_line(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string(v).expect("serialisable output");
    s.push('\n');
    s
}

fn analyze(args: AnalyzeArgs, conv: Convention) -> Result<Verdict, CliError> {
    let model = NetworkModel::load(&args.model)?;
    let mode = match args.mode {
        Some(ModeArg::A1) => Mode::A1,
        Some(ModeArg::A2) => Mode::A2,
        None => model.mode(),
    };
    let lambda = conv.lyapunov_rate(args.lambda);
    let options = SearchOptions::default();
    let (result, extra): (CertResult, Option<Value>) = match args.eps {
        Some(eps) => (search_certificate_with(&model, mode, lambda, eps, &options)?, None),
        None => {
            let u = min_unreliability(&model, mode, lambda, &options)?;
            let cert = match &u.witness {
                Some(w) => Searcher::new(&model, mode, lambda)?.check(w)?,
                None => CertResult {
                    feasible: false,
                    witness: None,
                    slack: None,
                    binding: vec![posnet::certify::MEAN_DECAY.into()],
                    diagnostics: u.diagnostics.clone(),
                },
            };
            (cert, Some(json!(u.eps_star)))
        }
    };
    let feasible = result.feasible;
    let mut value = serde_json::to_value(&result).expect("serialisable result");
    if let Some(eps_star) = extra {
        value["eps_star"] = eps_star;
    }
    emit(args.out.as_deref(), &to_line(&value))?;
    Ok(if feasible { Verdict::Done } else { Verdict::Infeasible })
}

fn design(args: DesignArgs) -> Result<Verdict, CliError> {
    let family = DesignFamily::load(&args.family)?;
    let mode = match args.fixed_eps {
        Some(eps) => DesignMode::FixedEps(eps),
        None => DesignMode::FreeEps,
    };
    let result = match solve_design(&family, mode) {
        Ok(r) => r,
        Err(DesignError::Infeasible) => {
            eprintln!("{}", CliError::from(DesignError::Infeasible).line());
            return Ok(Verdict::Infeasible);
        }
        Err(e) => return Err(e.into()),
    };
    let json_text = to_line(&result);
    let csv = result.r_star_csv();
    match (&args.out, &args.csv) {
        (Some(out), Some(csv_path)) => {
            emit(Some(out), &json_text)?;
            emit(Some(csv_path), &csv)?;
        }
        (Some(out), None) => {
            emit(Some(out), &json_text)?;
            emit(None, &csv)?;
        }
        (None, csv_path) => {
            emit(None, &json_text)?;
            if let Some(p) = csv_path {
                emit(Some(p), &csv)?;
            }
        }
    }
    Ok(Verdict::Done)
}

fn validate(args: ValidateArgs, conv: Convention) -> Result<Verdict, CliError> {
    let model = NetworkModel::load(&args.model)?;
    let mut reports = estimate_instability_probs(&model, &[args.lambda], args.samples, args.seed, conv.mc())?;
    let report = reports.remove(0);
    let exact = if args.exact {
        match brute_force_prob_as(&model, args.lambda, conv.mc()) {
            Ok(p) => Some(p),
            Err(McError::SupportTooLarge { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    if args.csv {
        let mut text = format!("{}\n{}\n", posnet::montecarlo::McReport::CSV_HEADER, report.csv_row());
        if let Some(p) = exact {
            text.push_str(&format!("exact,{p:e}\n"));
        }
        emit(None, &text)?;
    } else {
        let mut value = serde_json::to_value(&report).expect("serialisable report");
        if args.exact {
            value["exact"] = json!(exact);
        }
        emit(None, &to_line(&value))?;
    }
    Ok(Verdict::Done)
}

fn parse_grid(arg: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::new("usage", format!("malformed grid value in '{arg}'"));
    let (_, values) = arg.split_once('=').ok_or_else(bad)?;
    let grid: Vec<f64> = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    if grid.is_empty() || grid.iter().any(|x| !x.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

fn fig1_grids(args: &[String]) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut r = DEFAULT_R_GRID.to_vec();
    let mut lambda = DEFAULT_LAMBDA_GRID.to_vec();
    for arg in args {
        if arg.starts_with("r=") {
            r = parse_grid(arg)?;
        } else if arg.starts_with("lambda=") {
            lambda = parse_grid(arg)?;
        } else {
            return Err(CliError::new("usage", format!("expected r=… or lambda=…, got '{arg}'")));
        }
    }
    Ok((r, lambda))
}

fn demo_sis(args: DemoArgs, conv: Convention) -> Result<Verdict, CliError> {
    if !(0.0..=1.0).contains(&args.edge_prob) || args.nodes == 0 {
        return Err(CliError::new("usage", "need --nodes ≥ 1 and --edge-prob in [0, 1]"));
    }
    let adjacency = sis::erdos_renyi(args.nodes, args.edge_prob, args.seed);
    let params = SisParams::calibrated(&adjacency, args.edge_prob, args.seed, NonPrevention::Uniform(0.5))?;
    let text = if let Some(specs) = &args.fig1 {
        let (r_grid, lambda_grid) = fig1_grids(specs)?;
        let rates: Vec<f64> = lambda_grid.iter().map(|&l| conv.lyapunov_rate(l)).collect();
        let mut rows = sis::fig1_sweep(&adjacency, &params, &rates, &r_grid)?;
        for row in &mut rows {
            if conv == Convention::State {
                row.lambda /= 2.0;
            }
        }
        sis::fig1_csv(&rows)
    } else {
        let cost = args.cost_bound.expect("clap requires --cost-bound with --fig2");
        sis::fig2_csv(&sis::fig2_run(&adjacency, &params, cost)?.rows)
    };
    emit(args.out.as_deref(), &text)?;
    Ok(Verdict::Done)
}
