use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aquafill::hindsight::{self, solve_hindsight};
use aquafill::load::compare_majorization;
use aquafill::objective::Objective;
use aquafill::policy::{policy_by_name, run_policy, ExpectationMode};
use aquafill::rational::Rational;
use aquafill::regret::{
    alpha_regret, closed_form_cr, numeric_competitive_ratio, numeric_minimax_regret, CrObjective, SearchConfig,
};
use aquafill::sequence::RequestSequence;
use aquafill::transform::{adaptive_game, nestify, policy_deviation, worstcase_upper_triangular};
use aquafill::waterfill::waterfill_loads;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

const MAX_N_VAR: &str = "AQUAFILL_MAX_N";

/// Online fractional allocation: water-filling, hindsight optima,
/// adversarial transforms and competitive ratios.
#[derive(Parser, Debug)]
#[command(name = "aquafill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a policy over an instance and print the allocation trace.
    Run(RunArgs),
    /// Compute the majorization-minimal hindsight allocation.
    Opt(OptArgs),
    /// Apply one of the adversarial transforms.
    Transform(TransformArgs),
    /// Shorthand for `transform --kind nestify`.
    Nestify(TransformCommon),
    /// Shorthand for `transform --kind deviate`.
    Deviate(TransformCommon),
    /// Shorthand for `transform --kind worstcase`.
    Worstcase(TransformCommon),
    /// Play the adaptive adversary against a policy.
    Game(GameArgs),
    /// α-regret on an instance, or the worst case over sorted profiles.
    Regret(RegretArgs),
    /// Competitive ratios, closed form and/or numeric.
    Cr(CrArgs),
    /// Validate an instance and report its loads.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct Batch {
    /// Instance file.
    input: Option<PathBuf>,
    /// Process every file matching this pattern instead of `input`.
    #[arg(long)]
    glob: Option<String>,
    /// Worker threads for `--glob` (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Write JSON here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    batch: Batch,
    #[arg(long, default_value = "wf")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print final loads and objective values instead of the full trace.
    #[arg(long)]
    summary: bool,
    /// Objectives for `--summary` (repeatable).
    #[arg(long = "objective")]
    objectives: Vec<String>,
}

#[derive(Args, Debug)]
struct OptArgs {
    #[command(flatten)]
    batch: Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Nestify,
    Deviate,
    Worstcase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Mc,
}

#[derive(Args, Debug)]
struct Expectation {
    /// Expectation over policy randomness: exact branch enumeration or Monte Carlo.
    #[arg(long, value_enum, default_value = "exact")]
    mode: Mode,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Expectation {
    fn mode(&self) -> ExpectationMode {
        match self.mode {
            Mode::Exact => ExpectationMode::Exact,
            Mode::Mc => ExpectationMode::MonteCarlo {
                samples: self.samples,
                seed: self.seed,
            },
        }
    }
}

#[derive(Args, Debug)]
struct TransformCommon {
    input: PathBuf,
    /// Policy for `deviate`.
    #[arg(long, default_value = "wf")]
    policy: String,
    /// Nestify non-nested input first.
    #[arg(long)]
    chain: bool,
    /// Include intermediate artifacts.
    #[arg(long)]
    audit: bool,
    #[command(flatten)]
    expectation: Expectation,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TransformArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[command(flatten)]
    common: TransformCommon,
}

#[derive(Args, Debug)]
struct GameArgs {
    input: PathBuf,
    #[arg(long, default_value = "wf")]
    policy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Nestify non-nested input first.
    #[arg(long)]
    chain: bool,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegretArgs {
    /// Instance file; omit and pass `--n` for the search over sorted profiles.
    input: Option<PathBuf>,
    #[arg(long, default_value = "wf")]
    policy: String,
    #[arg(long)]
    objective: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[command(flatten)]
    expectation: Expectation,
    /// Number of offline nodes for the profile search.
    #[arg(long)]
    n: Option<usize>,
    /// Total quantity for the profile search.
    #[arg(long, default_value = "1")]
    q: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CrMode {
    Closed,
    Numeric,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Args, Debug)]
struct CrArgs {
    /// nsw | maximin | makespan | matching | separable-concave | all
    #[arg(long)]
    objective: String,
    /// A single n or an inclusive range such as `2..6`.
    #[arg(long, default_value = "2..6")]
    n: String,
    #[arg(long, value_enum, default_value = "both")]
    mode: CrMode,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    input: PathBuf,
    /// Original instance; verifies that `input` is at least as hard for
    /// water-filling and no harder in hindsight.
    #[arg(long)]
    against: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// An error with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<aquafill::Error> for Failure {
    fn from(e: aquafill::Error) -> Self {
        Failure {
            code: if e.is_guard() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_instance(path: &Path) -> CliResult<RequestSequence> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    RequestSequence::from_json(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn to_json(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    text
}

fn emit(text: &str, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| Failure::usage(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_objectives(names: &[String]) -> CliResult<Vec<Objective>> {
    Ok(names.iter().map(|s| s.parse()).collect::<Result<Vec<_>, _>>()?)
}

/// Runs `job` on one input or on every `--glob` match. Batches produce an
/// array of `{file, result}` in path order.
fn batch(args: &Batch, job: impl Fn(&RequestSequence) -> CliResult<Value> + Sync) -> CliResult<()> {
    let value = match (&args.input, &args.glob) {
        (Some(path), None) => job(&read_instance(path)?)?,
        (None, Some(pattern)) => {
            let mut paths = glob::glob(pattern)
                .map_err(|e| Failure::usage(format!("bad glob {pattern:?}: {e}")))?
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::usage(e.to_string()))?;
            paths.sort();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(args.jobs.unwrap_or(0))
                .build()
                .map_err(|e| Failure::usage(e.to_string()))?;
            let results = pool.install(|| {
                paths
                    .par_iter()
                    .map(|p| Ok(json!({"file": p.display().to_string(), "result": job(&read_instance(p)?)?})))
                    .collect::<CliResult<Vec<Value>>>()
            })?;
            Value::Array(results)
        }
        _ => return Err(Failure::usage("pass exactly one of an input file or --glob")),
    };
    emit(&to_json(&value), args.output.as_deref())
}

fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let objectives = parse_objectives(&args.objectives)?;
    policy_by_name(&args.policy)?;
    batch(&args.batch, |e| {
        let mut policy = policy_by_name(&args.policy)?;
        let trace = run_policy(e, policy.as_mut(), args.seed)?;
        if !args.summary {
            return Ok(serde_json::to_value(&trace).expect("trace serializes"));
        }
        let values: serde_json::Map<String, Value> = objectives
            .iter()
            .map(|o| (o.to_string(), json!(o.evaluate(&trace.final_loads))))
            .collect();
        Ok(json!({
            "policy": policy.name(),
            "seed": args.seed,
            "final_loads": trace.final_loads,
            "objectives": values,
        }))
    })
}

fn cmd_opt(args: &OptArgs) -> CliResult<()> {
    batch(&args.batch, |e| {
        let solution = solve_hindsight(e, hindsight::max_n())?;
        Ok(serde_json::to_value(&solution).expect("solution serializes"))
    })
}

fn nested_input(e: RequestSequence, chain: bool) -> CliResult<(RequestSequence, Option<Value>)> {
    if e.is_nested() {
        return Ok((e, None));
    }
    if !chain {
        return Err(aquafill::Error::NotNested.into());
    }
    let (nested, audit) = nestify(&e)?;
    Ok((nested, Some(serde_json::to_value(&audit).expect("audit serializes"))))
}

fn cmd_transform(kind: Kind, args: &TransformCommon) -> CliResult<()> {
    let e = read_instance(&args.input)?;
    let text = match kind {
        Kind::Nestify => {
            let (out, audit) = nestify(&e)?;
            if args.audit {
                to_json(&json!({"sequence": out, "audit": audit}))
            } else {
                to_json(&out)
            }
        }
        Kind::Deviate => {
            let (nested, nestify_audit) = nested_input(e, args.chain)?;
            let mut policy = policy_by_name(&args.policy)?;
            let dev = policy_deviation(&nested, policy.as_mut(), args.expectation.mode())?;
            if args.audit {
                to_json(&json!({
                    "sequence": dev.sequence,
                    "policy": policy.name(),
                    "schedule": dev.schedule,
                    "expected": dev.expected,
                    "nestify": nestify_audit,
                }))
            } else {
                to_json(&dev.sequence)
            }
        }
        Kind::Worstcase => {
            let (nested, nestify_audit) = nested_input(e, args.chain)?;
            let out = worstcase_upper_triangular(&nested)?;
            if args.audit {
                to_json(&json!({
                    "sequence": out,
                    "source": nested,
                    "wf_loads": waterfill_loads(&out)?,
                    "nestify": nestify_audit,
                }))
            } else {
                to_json(&out)
            }
        }
    };
    emit(&text, args.output.as_deref())
}

fn cmd_game(args: &GameArgs) -> CliResult<()> {
    let (nested, _) = nested_input(read_instance(&args.input)?, args.chain)?;
    let mut policy = policy_by_name(&args.policy)?;
    let transcript = adaptive_game(policy.as_mut(), &nested, args.seed)?;
    emit(&to_json(&transcript), args.output.as_deref())
}

fn cmd_regret(args: &RegretArgs) -> CliResult<()> {
    let objective: Objective = args.objective.parse()?;
    let report = match (&args.input, args.n) {
        (Some(path), None) => {
            let e = read_instance(path)?;
            let mut policy = policy_by_name(&args.policy)?;
            alpha_regret(&e, policy.as_mut(), &objective, args.alpha, args.expectation.mode())?
        }
        (None, Some(n)) => {
            let q: Rational = args.q.parse()?;
            let config = SearchConfig {
                seed: args.expectation.seed,
                ..SearchConfig::default()
            };
            numeric_minimax_regret(n, &objective, args.alpha, &q, &config)?
        }
        _ => return Err(Failure::usage("pass exactly one of an input file or --n")),
    };
    emit(&to_json(&report), args.output.as_deref())
}

fn parse_range(text: &str) -> CliResult<Vec<usize>> {
    let bad = || Failure::usage(format!("bad n range {text:?}; use e.g. 3 or 2..6"));
    let (lo, hi) = match text.split_once("..") {
        Some((lo, hi)) => (lo, hi.trim_start_matches('=')),
        None => (text, text),
    };
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

#[derive(Serialize)]
struct CrRow {
    objective: String,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_exact: Option<Rational>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    numeric: Option<f64>,
}

fn cmd_cr(args: &CrArgs) -> CliResult<()> {
    let objectives = if args.objective == "all" {
        CrObjective::ALL.to_vec()
    } else {
        vec![args.objective.parse::<CrObjective>()?]
    };
    let ns = parse_range(&args.n)?;
    let config = SearchConfig {
        seed: args.seed,
        ..SearchConfig::default()
    };
    let mut rows = Vec::new();
    for cr in &objectives {
        for &n in &ns {
            let mut row = CrRow {
                objective: cr.to_string(),
                n,
                closed: None,
                closed_exact: None,
                bound: None,
                numeric: None,
            };
            if args.mode != CrMode::Numeric {
                let closed = closed_form_cr(*cr, n)?;
                row.closed = Some(closed.value);
                row.closed_exact = closed.exact;
                row.bound = Some(closed.bound);
            }
            if args.mode != CrMode::Closed {
                if let Some(objective) = cr.objective() {
                    row.numeric = Some(numeric_competitive_ratio(n, &objective, &config)?.ratio);
                }
            }
            rows.push(row);
        }
    }
    let text = match args.format {
        Format::Json => to_json(&rows),
        Format::Table => table(&rows),
    };
    emit(&text, args.output.as_deref())
}

fn table(rows: &[CrRow]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    let mut out = String::new();
    writeln!(out, "{:<18} {:>3} {:>10} {:>10} {:>10} {:>6}", "objective", "n", "closed", "exact", "numeric", "bound").unwrap();
    for row in rows {
        let exact = row.closed_exact.as_ref().map_or_else(|| "-".to_string(), |x| x.to_string());
        let bound = row.bound.map_or("-", |b| if b { "yes" } else { "no" });
        writeln!(
            out,
            "{:<18} {:>3} {:>10} {:>10} {:>10} {:>6}",
            row.objective,
            row.n,
            cell(row.closed),
            exact,
            cell(row.numeric),
            bound
        )
        .unwrap();
    }
    out
}

fn cmd_check(args: &CheckArgs) -> CliResult<()> {
    let e = read_instance(&args.input)?;
    let wf = waterfill_loads(&e)?;
    let opt = solve_hindsight(&e, hindsight::max_n())?.loads;
    let mut report = json!({
        "valid": true,
        "n": e.n(),
        "m": e.m(),
        "total": e.total_quantity(),
        "nested": e.is_nested(),
        "wf_loads": wf,
        "opt_loads": opt,
    });
    let mut ok = true;
    if let Some(path) = &args.against {
        let original = read_instance(path)?;
        let wf0 = waterfill_loads(&original)?;
        let opt0 = solve_hindsight(&original, hindsight::max_n())?.loads;
        let wf_rel = compare_majorization(&wf0, &wf)?;
        let opt_rel = compare_majorization(&opt0, &opt)?;
        ok = wf_rel.left_is_minor() && opt_rel.left_is_major();
        report["against"] = json!({
            "file": path.display().to_string(),
            "wf_relation": wf_rel,
            "opt_relation": opt_rel,
            "holds": ok,
        });
    }
    emit(&to_json(&report), args.output.as_deref())?;
    if ok {
        Ok(())
    } else {
        Err(Failure::usage("majorization checks against the original instance failed"))
    }
}

fn configure_guard() -> CliResult<()> {
    if let Ok(raw) = std::env::var(MAX_N_VAR) {
        let limit = raw
            .trim()
            .parse::<usize>()
            .map_err(|_| Failure::usage(format!("{MAX_N_VAR} must be a positive integer, got {raw:?}")))?;
        hindsight::set_max_n(limit);
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    configure_guard()?;
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Opt(a) => cmd_opt(a),
        Command::Transform(a) => cmd_transform(a.kind, &a.common),
        Command::Nestify(a) => cmd_transform(Kind::Nestify, a),
        Command::Deviate(a) => cmd_transform(Kind::Deviate, a),
        Command::Worstcase(a) => cmd_transform(Kind::Worstcase, a),
        Command::Game(a) => cmd_game(a),
        Command::Regret(a) => cmd_regret(a),
        Command::Cr(a) => cmd_cr(a),
        Command::Check(a) => cmd_check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
