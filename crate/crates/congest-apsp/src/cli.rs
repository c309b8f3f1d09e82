//! Command-line front end.
//!
//! Four subcommands: `run` computes one distance matrix and reports
//! metrics, `bench` sweeps sizes and prints round growth, `verify`
//! re-checks a saved matrix against its graph, and `fb` drives a single
//! filtered-broadcast instance for inspection. Every subcommand that
//! takes `--seed` is bit-reproducible. Exit codes: 0 success, 2 negative
//! cycle (the cycle is printed), 1 anything else.

use crate::apsp::{las_vegas_verify, run_apsp, ApspConfig, ApspError, Verdict};
use crate::engine::{default_round_limit, CommunicationMode, Direction, Discipline};
use crate::filtered_broadcast::{
    filtered_broadcast, fixed_window_rounds, BetweenSet, FbConfig, WindowPolicy,
};
use crate::graph::{generate_random_int_graph, load_graph, oracle_apsp, Graph, NodeId, INF};
use crate::report::{
    bench_rows_to_csv, matrix_from_csv, matrix_to_csv, mode_token, round_normalizer, value_token,
    BenchRow, RunReport,
};
use crate::rng::trial_seed;
use crate::tuning::SAMPLING_DEPTH_C;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Overrides the engine's default round limit for every subcommand.
pub const ROUND_LIMIT_ENV: &str = "CONGEST_APSP_ROUND_LIMIT";

#[derive(Parser)]
#[command(
    name = "congest-apsp",
    version,
    about = "Deterministic synchronous message-passing simulator with an exact \
             all-pairs shortest-path protocol on top"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Compute all-pairs distances on one graph; print a JSON summary.
    Run(RunArgs),
    /// Sweep graph sizes and print one CSV row per trial.
    Bench(BenchArgs),
    /// Re-check a saved matrix: recompute centrally, then self-check on the wire.
    Verify(VerifyArgs),
    /// Run one filtered-broadcast instance and print per-node outputs.
    Fb(FbArgs),
}

#[derive(Args)]
pub struct GraphSource {
    /// Graph file (header `n m directed|undirected`, then `tail head weight` lines).
    #[arg(long, value_name = "PATH", conflicts_with = "gen")]
    pub graph: Option<PathBuf>,
    /// Generate a directed random graph: `n=..,p=..,wlo=..,whi=..`
    /// (integer weights; defaults n=32, p=0.2, wlo=0, whi=100).
    #[arg(long, value_name = "SPEC")]
    pub gen: Option<String>,
}

#[derive(Args)]
pub struct ModeArgs {
    /// Deliver messages along arc direction only.
    #[arg(long)]
    pub unidirectional: bool,
    /// Cap bandwidth per comm-arc instead of one broadcast per node.
    #[arg(long)]
    pub unicast: bool,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[command(flatten)]
    pub mode: ModeArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relaxation-depth coefficient.
    #[arg(long, default_value_t = SAMPLING_DEPTH_C)]
    pub c: f64,
    /// Write the distance matrix as CSV (`inf` marks unreachable pairs).
    #[arg(long, value_name = "PATH")]
    pub matrix_out: Option<PathBuf>,
    /// Also write the JSON summary to a file.
    #[arg(long, value_name = "PATH")]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Generator spec for density and weights; `n` is taken from --n-list.
    #[arg(long, value_name = "SPEC")]
    pub gen: Option<String>,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Root seed; each trial runs on `trial_seed(root, index)`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = SAMPLING_DEPTH_C)]
    pub c: f64,
    /// Graph sizes to sweep.
    #[arg(long, value_name = "CSV", default_value = "32,64")]
    pub n_list: String,
    /// Trials per size.
    #[arg(long, default_value_t = 3)]
    pub trials: u32,
    /// Also write the CSV to a file.
    #[arg(long, value_name = "PATH")]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: GraphSource,
    /// Matrix CSV to check, as written by `run --matrix-out`.
    #[arg(long, value_name = "PATH")]
    pub matrix: PathBuf,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Seed used when the graph comes from --gen.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct FbArgs {
    /// Graph file.
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,
    /// Source label the instance serves.
    #[arg(long, default_value_t = 0)]
    pub source: NodeId,
    /// Between-set node ids, strictly ascending.
    #[arg(long, value_name = "CSV")]
    pub between: String,
    /// One offer value per between node (`inf` allowed).
    #[arg(long, value_name = "CSV")]
    pub dhat: String,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Seed for the between-set level draw.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed per-iteration windows instead of quiescence detection.
    #[arg(long)]
    pub fixed_window: bool,
    /// Also write the JSON report to a file.
    #[arg(long, value_name = "PATH")]
    pub metrics_out: Option<PathBuf>,
}

/// Random-graph parameters parsed from `--gen`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub p: f64,
    pub wlo: i64,
    pub whi: i64,
}

impl Default for GenSpec {
    fn default() -> GenSpec {
        GenSpec { n: 32, p: 0.2, wlo: 0, whi: 100 }
    }
}

/// Parse `key=value` pairs, comma-separated, any order, unknown keys
/// rejected. The empty string yields the defaults.
pub fn parse_gen_spec(s: &str) -> Result<GenSpec, String> {
    let mut spec = GenSpec::default();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) =
            part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "n" => spec.n = v.parse().map_err(|_| format!("cannot parse n from {v:?}"))?,
            "p" => spec.p = v.parse().map_err(|_| format!("cannot parse p from {v:?}"))?,
            "wlo" => spec.wlo = v.parse().map_err(|_| format!("cannot parse wlo from {v:?}"))?,
            "whi" => spec.whi = v.parse().map_err(|_| format!("cannot parse whi from {v:?}"))?,
            other => return Err(format!("unknown generator key {other:?}")),
        }
    }
    if spec.n == 0 {
        return Err("generator needs n >= 1".to_string());
    }
    if !(0.0..=1.0).contains(&spec.p) {
        return Err(format!("edge probability must lie in [0, 1], got {}", spec.p));
    }
    if spec.whi < spec.wlo {
        return Err(format!("weight range is empty: whi {} < wlo {}", spec.whi, spec.wlo));
    }
    Ok(spec)
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| format!("cannot parse {t:?} as a size")))
        .collect()
}

pub fn parse_id_list(s: &str) -> Result<Vec<NodeId>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<NodeId>().map_err(|_| format!("cannot parse {t:?} as a node id")))
        .collect()
}

/// Finite values plus `inf`; rejects NaN so downstream comparisons stay
/// total.
pub fn parse_value_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.eq_ignore_ascii_case("inf") {
                return Ok(INF);
            }
            match t.parse::<f64>() {
                Ok(v) if v.is_nan() => Err(format!("NaN is not a value: {t:?}")),
                Ok(v) => Ok(v),
                Err(_) => Err(format!("cannot parse {t:?} as a value")),
            }
        })
        .collect()
}

pub fn effective_round_limit(n: usize) -> Result<u64, String> {
    match std::env::var(ROUND_LIMIT_ENV) {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("{ROUND_LIMIT_ENV} must be a round count, got {v:?}")),
        Err(std::env::VarError::NotPresent) => Ok(default_round_limit(n)),
        Err(e) => Err(format!("{ROUND_LIMIT_ENV}: {e}")),
    }
}

fn comm_mode(m: &ModeArgs) -> CommunicationMode {
    CommunicationMode {
        direction: if m.unidirectional {
            Direction::Unidirectional
        } else {
            Direction::Bidirectional
        },
        discipline: if m.unicast { Discipline::Unicast } else { Discipline::Broadcast },
    }
}

fn build_graph(src: &GraphSource, seed: u64) -> Result<Graph, String> {
    match (&src.graph, &src.gen) {
        (Some(path), None) => {
            let text = read_file(path)?;
            load_graph(&text).map_err(|e| format!("{}: {e}", path.display()))
        }
        (None, Some(spec)) => {
            let gs = parse_gen_spec(spec)?;
            Ok(generate_random_int_graph(gs.n, gs.p, gs.wlo, gs.whi, true, seed))
        }
        (None, None) => Err("provide a graph with --graph PATH or --gen SPEC".to_string()),
        (Some(_), Some(_)) => Err("--graph and --gen are mutually exclusive".to_string()),
    }
}

fn read_file(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, content: &str) -> Result<(), String> {
    std::fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parse argv and run. Returns the process exit code; clap usage errors
/// map to 1 so that 2 stays reserved for negative cycles.
pub fn main_entry<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Fb(a) => cmd_fb(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn cmd_run(a: RunArgs) -> Result<i32, String> {
    let g = build_graph(&a.source, a.seed)?;
    let mode = comm_mode(&a.mode);
    let limit = effective_round_limit(g.n())?;
    let mut cfg = ApspConfig::new(mode, a.seed, g.n());
    cfg.c = a.c;
    cfg.round_limit = limit;
    let out = match run_apsp(&g, &cfg) {
        Ok(out) => out,
        Err(ApspError::NegativeCycle(rep)) => {
            println!("{rep}");
            return Ok(2);
        }
        Err(e) => return Err(e.to_string()),
    };
    let check = las_vegas_verify(&g, &out.dist, mode, limit).map_err(|e| e.to_string())?;
    let verified = matches!(check.verdict, Verdict::Consistent);
    let report = RunReport {
        n: g.n(),
        seed: a.seed,
        mode: mode_token(mode),
        c: a.c,
        rounds_total: out.rounds_total,
        rounds_per_phase: out.rounds_per_phase.clone(),
        max_node_congestion: out.metrics.max_node_sent(),
        verified,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    println!("{json}");
    if let Some(p) = &a.metrics_out {
        write_file(p, &format!("{json}\n"))?;
    }
    if let Some(p) = &a.matrix_out {
        write_file(p, &matrix_to_csv(&out.dist))?;
    }
    Ok(if verified { 0 } else { 1 })
}

fn cmd_bench(a: BenchArgs) -> Result<i32, String> {
    let gs = parse_gen_spec(a.gen.as_deref().unwrap_or(""))?;
    let mode = comm_mode(&a.mode);
    let mut sizes = parse_usize_list(&a.n_list)?;
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err("--n-list named no sizes".to_string());
    }
    if sizes.iter().any(|&n| n == 0) {
        return Err("--n-list sizes must be at least 1".to_string());
    }
    if a.trials == 0 || a.trials > 1 << 16 {
        return Err(format!("--trials must lie in 1..=65536, got {}", a.trials));
    }

    let mut rows: Vec<BenchRow> = Vec::new();
    for (ni, &n) in sizes.iter().enumerate() {
        let limit = effective_round_limit(n)?;
        let mut per_n: Vec<BenchRow> = Vec::new();
        for t in 0..a.trials {
            let seed = trial_seed(a.seed, ((ni as u64) << 16) | t as u64);
            let g = generate_random_int_graph(n, gs.p, gs.wlo, gs.whi, true, seed);
            let mut cfg = ApspConfig::new(mode, seed, n);
            cfg.c = a.c;
            cfg.round_limit = limit;
            let out = run_apsp(&g, &cfg).map_err(|e| format!("n={n} seed={seed}: {e}"))?;
            per_n.push(BenchRow {
                n,
                seed,
                rounds: out.rounds_total,
                max_node_congestion: out.metrics.max_node_sent(),
                normalized_rounds: out.rounds_total as f64 / round_normalizer(n),
            });
        }
        per_n.sort_by_key(|r| r.seed);
        rows.extend(per_n);
    }
    let csv = bench_rows_to_csv(&rows);
    print!("{csv}");
    if let Some(p) = &a.metrics_out {
        write_file(p, &csv)?;
    }
    Ok(0)
}

fn cmd_verify(a: VerifyArgs) -> Result<i32, String> {
    let g = build_graph(&a.source, a.seed)?;
    let n = g.n();
    let claimed = matrix_from_csv(&read_file(&a.matrix)?)
        .map_err(|e| format!("{}: {e}", a.matrix.display()))?;
    if claimed.n() != n {
        return Err(format!("matrix has {} rows but the graph has {} nodes", claimed.n(), n));
    }
    let oracle = match oracle_apsp(&g) {
        Ok(d) => d,
        Err(rep) => {
            println!("{rep}");
            println!("a graph with a negative cycle has no finite distance matrix");
            return Ok(1);
        }
    };
    let mut mismatches: Vec<(NodeId, NodeId)> = Vec::new();
    for s in 0..n as NodeId {
        for t in 0..n as NodeId {
            if claimed.get(s, t) != oracle.get(s, t) {
                mismatches.push((s, t));
            }
        }
    }
    for &(s, t) in mismatches.iter().take(10) {
        println!(
            "mismatch at ({s},{t}): claimed {}, recomputed {}",
            value_token(claimed.get(s, t)),
            value_token(oracle.get(s, t))
        );
    }
    if mismatches.len() > 10 {
        println!("... and {} more", mismatches.len() - 10);
    }
    let limit = effective_round_limit(n)?;
    let check =
        las_vegas_verify(&g, &claimed, comm_mode(&a.mode), limit).map_err(|e| e.to_string())?;
    match &check.verdict {
        Verdict::Consistent => println!("self-check: consistent"),
        Verdict::Violation { nodes } => println!("self-check: violation at nodes {nodes:?}"),
    }
    let ok = mismatches.is_empty() && matches!(check.verdict, Verdict::Consistent);
    println!("verify: {}", if ok { "ok" } else { "failed" });
    Ok(if ok { 0 } else { 1 })
}

/// JSON schema of the `fb` subcommand; field order is stable.
#[derive(Debug, Serialize)]
struct FbReport {
    n: usize,
    seed: u64,
    source: NodeId,
    between: Vec<NodeId>,
    /// Coin-flip level of each between node, aligned with `between`.
    levels: Vec<u32>,
    /// Per-node minimum of offer value plus table distance; null where no
    /// finite offer arrived.
    outputs: Vec<Option<f64>>,
    /// Between node realizing each output, null alongside null outputs.
    chosen: Vec<Option<NodeId>>,
    rounds: u64,
    messages_total: u64,
    max_node_congestion: u64,
}

fn cmd_fb(a: FbArgs) -> Result<i32, String> {
    let g = load_graph(&read_file(&a.graph)?).map_err(|e| format!("{}: {e}", a.graph.display()))?;
    let n = g.n();
    if (a.source as usize) >= n {
        return Err(format!("--source {} is out of range for {n} nodes", a.source));
    }
    let ids = parse_id_list(&a.between)?;
    if ids.is_empty() {
        return Err("--between named no nodes".to_string());
    }
    if !ids.windows(2).all(|w| w[0] < w[1]) {
        return Err("--between ids must be strictly ascending".to_string());
    }
    if ids.iter().any(|&b| (b as usize) >= n) {
        return Err(format!("--between contains an id out of range for {n} nodes"));
    }
    let dhat = parse_value_list(&a.dhat)?;
    if dhat.len() != ids.len() {
        return Err(format!(
            "--dhat has {} values for {} between nodes",
            dhat.len(),
            ids.len()
        ));
    }

    let table = match oracle_apsp(&g) {
        Ok(d) => d,
        Err(rep) => {
            println!("{rep}");
            return Ok(2);
        }
    };
    let dist: Arc<Vec<Vec<f64>>> = Arc::new(
        (0..n as NodeId)
            .map(|v| ids.iter().map(|&b| table.get(b, v)).collect())
            .collect(),
    );
    let between = Arc::new(BetweenSet::sample(ids.clone(), n, a.seed));
    let mode = comm_mode(&a.mode);
    let window = if a.fixed_window {
        WindowPolicy::Fixed { rounds: fixed_window_rounds(n) }
    } else {
        WindowPolicy::Quiescent
    };
    let mut cfg = FbConfig::solo(mode, window, n);
    cfg.source = a.source;
    cfg.round_limit = effective_round_limit(n)?;
    let out = filtered_broadcast(&g, &cfg, between.clone(), &dhat, dist)
        .map_err(|e| e.to_string())?;

    let report = FbReport {
        n,
        seed: a.seed,
        source: a.source,
        levels: (0..ids.len()).map(|i| between.level_of_index(i)).collect(),
        between: ids,
        outputs: out.outputs.iter().map(|&v| (v != INF).then_some(v)).collect(),
        chosen: out.chosen,
        rounds: out.metrics.rounds,
        messages_total: out.metrics.messages_total,
        max_node_congestion: out.metrics.max_node_sent(),
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    println!("{json}");
    if let Some(p) = &a.metrics_out {
        write_file(p, &format!("{json}\n"))?;
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_spec_defaults_and_overrides() {
        assert_eq!(parse_gen_spec("").unwrap(), GenSpec::default());
        let gs = parse_gen_spec("n=64, p=0.5,whi=7,wlo=-3").unwrap();
        assert_eq!(gs, GenSpec { n: 64, p: 0.5, wlo: -3, whi: 7 });
    }

    #[test]
    fn gen_spec_rejects_malformed_input() {
        assert!(parse_gen_spec("n").is_err());
        assert!(parse_gen_spec("n=0").is_err());
        assert!(parse_gen_spec("p=1.5").is_err());
        assert!(parse_gen_spec("wlo=5,whi=1").is_err());
        assert!(parse_gen_spec("zz=3").is_err());
        assert!(parse_gen_spec("n=abc").is_err());
    }

    #[test]
    fn value_list_accepts_inf_and_rejects_nan() {
        assert_eq!(parse_value_list("1, 2.5 ,inf").unwrap(), vec![1.0, 2.5, INF]);
        assert!(parse_value_list("nan").is_err());
        assert!(parse_value_list("one").is_err());
        assert_eq!(parse_value_list("").unwrap(), Vec::<f64>::new());
    }

    #[test]
    fn usage_errors_exit_one_not_two() {
        assert_eq!(main_entry(["congest-apsp", "frobnicate"]), 1);
        assert_eq!(main_entry(["congest-apsp", "run"]), 1);
        assert_eq!(main_entry(["congest-apsp", "--help"]), 0);
    }
}
