//! `comma`: run scenarios, sweep seeds, and print the sandwich oracle grid.
//!
//! Exit codes: 0 success, 1 configuration error, 2 invariant fault.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use comma_core::agents::min_out_for;
use comma_core::amm::{optimal_sandwich, sandwich_grid, Exit, PoolState, SandwichSearch};
use comma_core::chain::TraceRecord;
use comma_core::metrics::MetricsReport;
use comma_core::model::{AccountId, Amount, Direction, TradeOrder};
use comma_core::scenario::{
    parse_config, run_scenario, sweep, ScenarioConfig, SweepRow, EXIT_CONFIG, EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "comma",
    version,
    about = "Deterministic MEV simulator for the CoMMA ordering protocol"
)]
#[command(after_help = "Exit codes: 0 success, 1 configuration error, 2 invariant fault.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its report.
    #[command(after_help = ScenarioConfig::DEFAULTS_HELP)]
    Run {
        /// Scenario JSON document.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for report.json, report.csv and trace.jsonl. Without
        /// it the report JSON goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the event trace as JSON lines (needs --out).
        #[arg(long, requires = "out")]
        trace: bool,
    },
    /// Run one scenario per seed and emit one CSV row per run, sorted by seed.
    #[command(after_help = ScenarioConfig::DEFAULTS_HELP)]
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (exclusive), `a..=b`, or a comma list such as `1,5,9`.
        #[arg(long)]
        seeds: String,
        /// Directory for report.csv. Without it the CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the full front-run grid for one victim and its argmax.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    XForY,
    YForX,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExitArg {
    BackRun,
    HoldAtMarket,
}

#[derive(clap::Args)]
struct OracleArgs {
    #[arg(long)]
    reserve_x: u128,
    #[arg(long)]
    reserve_y: u128,
    #[arg(long, default_value_t = 0)]
    fee_bps: u16,
    #[arg(long, value_enum, default_value = "x-for-y")]
    direction: DirectionArg,
    #[arg(long)]
    amount_in: u128,
    /// Victim guard. Exclusive with --tolerance-bps.
    #[arg(long, conflicts_with = "tolerance_bps")]
    min_out: Option<u128>,
    /// Victim guard as a tolerance against the unattacked quote.
    #[arg(long)]
    tolerance_bps: Option<u32>,
    /// Per-transaction attacker fee in the victim's input asset.
    #[arg(long, default_value_t = 0)]
    fee: u128,
    #[arg(long, default_value_t = 100)]
    step: u128,
    /// Largest front-run considered [default: the pool's input reserve].
    #[arg(long)]
    max_front: Option<u128>,
    #[arg(long, value_enum, default_value = "back-run")]
    exit: ExitArg,
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    error: anyhow::Error,
}

fn config_error(error: anyhow::Error) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        error,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            trace,
        } => cmd_run(&config, seed, out.as_deref(), trace),
        Command::Sweep { config, seeds, out } => cmd_sweep(&config, &seeds, out.as_deref()),
        Command::Oracle(args) => cmd_oracle(&args).map_err(config_error),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(config_error)?;
    parse_config(&bytes)
        .with_context(|| format!("in {}", path.display()))
        .map_err(config_error)
}

fn write_out(dir: &Path, name: &str, contents: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(dir.join(name), contents))
        .with_context(|| format!("writing {}", dir.join(name).display()))
        .map_err(config_error)
}

fn report_json(report: &MetricsReport) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn trace_jsonl(trace: &[TraceRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for record in trace {
        serde_json::to_writer(&mut out, record).expect("trace serializes");
        out.push(b'\n');
    }
    out
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    trace: bool,
) -> Result<i32, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let run = run_scenario(&cfg).map_err(|e| Failure {
        code: e.exit_code(),
        error: anyhow!(e.to_string()),
    })?;
    let json = report_json(&run.report);
    match out {
        Some(dir) => {
            write_out(dir, "report.json", &json)?;
            let csv = csv_bytes(&MetricsReport::COLUMNS, &[run.report.csv_values()]);
            write_out(dir, "report.csv", &csv)?;
            if trace {
                write_out(dir, "trace.jsonl", &trace_jsonl(&run.trace))?;
            }
        }
        None => io::stdout()
            .write_all(&json)
            .map_err(|e| config_error(e.into()))?,
    }
    Ok(EXIT_OK)
}

/// Parses `a..b`, `a..=b` or `a,b,c`.
fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .with_context(|| format!("bad seed {s:?}"))
    };
    if let Some((a, b)) = text.split_once("..=") {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            bail!("empty seed range {text:?}");
        }
        return Ok((a..=b).collect());
    }
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        if a >= b {
            bail!("empty seed range {text:?}");
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(num).collect()
}

fn sweep_csv(rows: &[SweepRow], cfg: &ScenarioConfig) -> Vec<u8> {
    let mut header: Vec<&str> = MetricsReport::COLUMNS.to_vec();
    header.push("exit_code");
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let mut values = match &row.outcome {
                Ok(report) => report.csv_values(),
                Err(_) => {
                    let mut v = vec![String::new(); MetricsReport::COLUMNS.len()];
                    v[0] = format!("{}-{}", cfg.mode.as_str(), row.seed);
                    v[1] = row.seed.to_string();
                    v[2] = cfg.mode.as_str().to_string();
                    v
                }
            };
            values.push(row.exit_code().to_string());
            values
        })
        .collect();
    csv_bytes(&header, &records)
}

fn cmd_sweep(config: &Path, seeds: &str, out: Option<&Path>) -> Result<i32, Failure> {
    let cfg = load_config(config)?;
    let seeds = parse_seeds(seeds).map_err(config_error)?;
    let rows = sweep(&cfg, &seeds);
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("seed {}: {e}", row.seed);
        }
    }
    let csv = sweep_csv(&rows, &cfg);
    match out {
        Some(dir) => write_out(dir, "report.csv", &csv)?,
        None => io::stdout()
            .write_all(&csv)
            .map_err(|e| config_error(e.into()))?,
    }
    Ok(rows
        .iter()
        .map(SweepRow::exit_code)
        .max()
        .unwrap_or(EXIT_OK))
}

fn cmd_oracle(args: &OracleArgs) -> Result<i32> {
    let pool = PoolState::new(Amount(args.reserve_x), Amount(args.reserve_y), args.fee_bps)?;
    let direction = match args.direction {
        DirectionArg::XForY => Direction::XForY,
        DirectionArg::YForX => Direction::YForX,
    };
    let min_out = match (args.min_out, args.tolerance_bps) {
        (Some(m), None) => Amount(m),
        (None, Some(tol)) => {
            if tol > 10_000 {
                bail!("--tolerance-bps must be at most 10000");
            }
            min_out_for(pool.quote(direction, Amount(args.amount_in))?, tol)?
        }
        _ => bail!("exactly one of --min-out or --tolerance-bps is required"),
    };
    let victim = TradeOrder::new(
        AccountId::new("victim")?,
        direction,
        Amount(args.amount_in),
        min_out,
        0,
    )?;
    if args.step == 0 {
        bail!("--step must be positive");
    }
    let (reserve_in, _) = pool.reserves_for(direction);
    let exit = match args.exit {
        ExitArg::BackRun => Exit::BackRun,
        ExitArg::HoldAtMarket => Exit::HoldAtMarket,
    };
    let search = SandwichSearch::new(
        Amount(args.fee),
        Amount(args.step),
        args.max_front.map_or(reserve_in, Amount),
    )
    .with_exit(exit);
    let grid = sandwich_grid(&pool, &victim, &search)?;

    let mut out = io::stdout().lock();
    writeln!(out, "victim min_out={min_out}")?;
    writeln!(
        out,
        "front_amount,front_out,victim_out,exit_value,net_profit"
    )?;
    for c in &grid {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.front_amount, c.front_out, c.victim_out, c.exit_value, c.net_profit
        )?;
    }
    let best = optimal_sandwich(&pool, &victim, &search)?;
    writeln!(
        out,
        "argmax front_amount={} net_profit={}",
        best.front_amount, best.net_profit
    )?;
    Ok(EXIT_OK)
}
