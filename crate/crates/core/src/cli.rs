//! Command-line front end: instance generation, exact evaluation,
//! brute-force references, the branch-and-bound solver and a benchmark
//! sweep.
//!
//! Exit codes: 0 on success, 1 on usage or input errors, 2 when a solve
//! hit a limit before closing the gap (the partial result is still
//! printed).

use crate::bnb::{solve_with_log, Limits, Termination};
use crate::model::{build_relaxation, write_lp, CutMode, RelaxationConfig};
use crate::reliability::{evaluate, oracle_optimize, oracle_reliability};
use crate::spgraph::{generate, mask_to_string, parse_mask, Instance};
use crate::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::path::PathBuf;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "sprel", version, about = "Reliability optimization for series-parallel networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a pseudorandom instance and write it as JSON.
    Generate(GenerateArgs),
    /// Evaluate the exact reliability of one selection mask.
    Evaluate(EvaluateArgs),
    /// Brute-force reference results for small instances.
    Oracle(OracleArgs),
    /// Run the branch-and-bound search.
    Solve(SolveArgs),
    /// Sweep seeds and cut configurations, writing a CSV summary.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of edges.
    #[arg(long)]
    m: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cardinality budget fraction in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Selection mask as a bit string, edge 1 first (e.g. 1011).
    #[arg(long)]
    mask: String,
    /// Also print every intermediate trace entry.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct OracleArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Find the best feasible selection by full enumeration instead of
    /// evaluating a mask.
    #[arg(long, conflicts_with = "mask")]
    optimize: bool,
    /// Mask to evaluate by state enumeration (default: all edges selected).
    #[arg(long)]
    mask: Option<String>,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Cut configuration.
    #[arg(long, value_enum, default_value_t = CutsArg::Improved)]
    cuts: CutsArg,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Processed-node limit.
    #[arg(long)]
    node_limit: Option<usize>,
    /// Also write the result lines to this path (written even when a limit
    /// stops the search early).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the root relaxation in LP format to this path before solving.
    #[arg(long)]
    export_lp: Option<PathBuf>,
    /// Write one key=value line per processed node to this path.
    #[arg(long)]
    node_log: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Number of edges of every generated instance.
    #[arg(long)]
    m: usize,
    /// Number of instances; seeds seed, seed+1, ... are swept.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// First seed of the sweep.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cardinality budget fraction in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Per-solve wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Configurations to bench (comma separated).
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = vec![CutsArg::None, CutsArg::Envelope, CutsArg::Improved])]
    cuts: Vec<CutsArg>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CutsArg {
    None,
    Envelope,
    Improved,
}

impl From<CutsArg> for CutMode {
    fn from(a: CutsArg) -> CutMode {
        match a {
            CutsArg::None => CutMode::WithoutCuts,
            CutsArg::Envelope => CutMode::EnvelopeCuts,
            CutsArg::Improved => CutMode::ImprovedEnvelopeCuts,
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parses the process arguments, runs the selected command and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, Error> {
    match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Bench(a) => cmd_bench(a),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<i32, Error> {
    let inst = generate(a.m, a.seed)?.with_alpha(a.alpha)?;
    match a.out {
        Some(path) => inst.write_file(&path)?,
        None => print!("{}", inst.to_json()),
    }
    Ok(0)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<i32, Error> {
    let inst = Instance::read_file(&a.instance)?;
    let mask = parse_mask(&a.mask, inst.m())?;
    let trace = evaluate(&inst, &mask)?;
    println!("mask={}", mask_to_string(&mask));
    println!("reliability={}", fmt(trace.r));
    if a.trace {
        for id in 1..=inst.seq().node_count() {
            let kind = match inst.seq().step_of(id) {
                None => "leaf",
                Some(s) => s.kind.tag(),
            };
            println!(
                "id={id} kind={kind} y={} omega={} omega_bar={}",
                fmt(trace.y[id - 1]),
                fmt(trace.omega[id - 1]),
                fmt(trace.omega_bar[id - 1]),
            );
        }
    }
    Ok(0)
}

fn cmd_oracle(a: OracleArgs) -> Result<i32, Error> {
    let inst = Instance::read_file(&a.instance)?;
    if a.optimize {
        match oracle_optimize(&inst)? {
            Some((mask, r)) => {
                println!("feasible=true");
                println!("mask={}", mask_to_string(&mask));
                println!("reliability={}", fmt(r));
            }
            None => println!("feasible=false"),
        }
    } else {
        let mask = match a.mask {
            Some(s) => parse_mask(&s, inst.m())?,
            None => vec![true; inst.m()],
        };
        let r = oracle_reliability(&inst, &mask)?;
        println!("mask={}", mask_to_string(&mask));
        println!("reliability={}", fmt(r));
    }
    Ok(0)
}

fn cmd_solve(a: SolveArgs) -> Result<i32, Error> {
    let inst = Instance::read_file(&a.instance)?;
    let config = RelaxationConfig {
        cut_mode: a.cuts.into(),
        ..RelaxationConfig::default()
    };
    if let Some(path) = &a.export_lp {
        let (lp, vars) = build_relaxation(&inst);
        let mut f = File::create(path)?;
        write_lp(&lp, &vars, &mut f)?;
    }
    let limits = Limits {
        time: a.time_limit.map(Duration::from_secs_f64),
        nodes: a.node_limit,
    };
    let res = match &a.node_log {
        Some(path) => {
            let mut f = File::create(path)?;
            solve_with_log(&inst, &config, &limits, Some(&mut f))?
        }
        None => solve_with_log(&inst, &config, &limits, None)?,
    };
    let mut report = String::new();
    report.push_str(&format!("status={}\n", res.termination.label()));
    match &res.incumbent_mask {
        Some(mask) => report.push_str(&format!("mask={}\n", mask_to_string(mask))),
        None => report.push_str("mask=none\n"),
    }
    report.push_str(&format!("reliability={}\n", fmt(res.incumbent_reliability)));
    report.push_str(&format!("bound={}\n", fmt(res.best_bound)));
    report.push_str(&format!("gap={}\n", fmt(res.gap)));
    report.push_str(&format!("root_bound={}\n", fmt(res.root_bound)));
    report.push_str(&format!("nodes={}\n", res.nodes));
    report.push_str(&format!("cuts={}\n", res.cuts.total()));
    report.push_str(&format!("time_s={:.3}\n", res.wall_time.as_secs_f64()));
    print!("{report}");
    if let Some(path) = &a.out {
        std::fs::write(path, &report)?;
    }
    Ok(if res.termination == Termination::Optimal {
        0
    } else {
        2
    })
}

fn cmd_bench(a: BenchArgs) -> Result<i32, Error> {
    // canonical configuration order keeps the CSV sorted and deduplicated
    let modes: Vec<CutsArg> = [CutsArg::None, CutsArg::Envelope, CutsArg::Improved]
        .into_iter()
        .filter(|m| a.cuts.contains(m))
        .collect();
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no benchmark configuration selected".into()));
    }
    let limits = Limits {
        time: a.time_limit.map(Duration::from_secs_f64),
        nodes: None,
    };
    let mut lines = vec!["seed,m,alpha,config,status,incumbent,bound,gap,nodes,cuts,time_s".to_string()];
    for seed in a.seed..a.seed + a.seeds {
        let inst = generate(a.m, seed)?.with_alpha(a.alpha)?;
        for &mode in &modes {
            let config = RelaxationConfig {
                cut_mode: mode.into(),
                ..RelaxationConfig::default()
            };
            let res = solve_with_log(&inst, &config, &limits, None)?;
            lines.push(format!(
                "{seed},{},{},{},{},{:.12e},{:.12e},{:.3e},{},{},{:.3}",
                a.m,
                a.alpha,
                CutMode::from(mode).label(),
                res.termination.label(),
                res.incumbent_reliability,
                res.best_bound,
                res.gap,
                res.nodes,
                res.cuts.total(),
                res.wall_time.as_secs_f64(),
            ));
        }
    }
    let text = lines.join("\n") + "\n";
    match a.csv {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(0)
}
