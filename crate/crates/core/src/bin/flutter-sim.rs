use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flutter_core::adversary::{builtin_behaviors, Behavior};
use flutter_core::campaign::run_campaign;
use flutter_core::checkers::{check_all, CheckReport, Verdict};
use flutter_core::runner::run_scenario;
use flutter_core::scenario::Scenario;
use flutter_core::trace::Trace;

/// Default directory for traces and reports when no path is given.
const OUT_DIR_ENV: &str = "FLUTTER_SIM_OUT";

#[derive(Parser)]
#[command(name = "flutter-sim", version, about = "Run and check Blink/Flutter simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, write its trace and check report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a scenario across seeds and Byzantine behaviors.
    Campaign {
        scenario: PathBuf,
        /// Half-open range, e.g. `0..1000`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        /// Comma-separated behavior names, or `all`.
        #[arg(long, default_value = "all", value_parser = parse_behaviors)]
        behaviors: BehaviorList,
        #[arg(long)]
        parallel: Option<usize>,
        /// Where to write the JSON summary.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Check an existing JSONL trace against a scenario's configuration.
    Check {
        trace: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// The trace stops at a cutoff rather than at quiescence.
        #[arg(long)]
        cutoff: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected A..B")?;
    let a: u64 = a.parse().map_err(|e| format!("{a}: {e}"))?;
    let b: u64 = b.parse().map_err(|e| format!("{b}: {e}"))?;
    if a >= b {
        return Err(format!("empty seed range {s}"));
    }
    Ok(a..b)
}

#[derive(Clone)]
struct BehaviorList(Vec<Behavior>);

fn parse_behaviors(s: &str) -> Result<BehaviorList, String> {
    if s == "all" {
        return Ok(BehaviorList(builtin_behaviors()));
    }
    s.split(',')
        .map(|name| name.trim().parse::<Behavior>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()
        .map(BehaviorList)
}

fn default_path(name: &str, ext: &str) -> PathBuf {
    let dir = std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    dir.join(format!("{}.{ext}", name.replace('/', "_")))
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_checks(checks: &[CheckReport]) {
    for c in checks {
        match &c.verdict {
            Verdict::Pass => println!("  pass  {}", c.property),
            Verdict::NotApplicable(why) => println!("  n/a   {} ({why})", c.property),
            Verdict::Fail { reason, witness } => {
                println!("  FAIL  {}: {reason}", c.property);
                for e in witness {
                    println!("          {e}");
                }
            }
        }
    }
}

fn run(scenario: &Path, trace: Option<PathBuf>, report: Option<PathBuf>) -> Result<bool, String> {
    let scenario = Scenario::load(scenario).map_err(|e| e.to_string())?;
    let result = run_scenario(&scenario).map_err(|e| e.to_string())?;

    let trace_path = trace.unwrap_or_else(|| default_path(&scenario.name, "trace.jsonl"));
    write_text(&trace_path, &result.trace.to_jsonl())?;
    let report_path = report.unwrap_or_else(|| default_path(&scenario.name, "report.json"));
    write_text(&report_path, &result.report_json())?;

    let o = &result.outcome;
    println!(
        "{}: {} events, {} steps, {} at t={}",
        scenario.name,
        result.trace.len(),
        o.steps,
        if o.quiescent { "quiescent" } else { "cut off" },
        o.end_time
    );
    print_checks(&result.checks);
    let m = &result.metrics;
    for b in &m.broadcasts {
        let latency = b.latency.map_or("-".to_string(), |l| l.to_string());
        println!(
            "  broadcast {}/{:?} at {}: {} attempt(s), delivered by {}, latency {latency}",
            b.client, b.message, b.broadcast_at, b.attempts, b.delivered_by
        );
    }
    let sends: Vec<String> = m.sends_by_kind.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("  sends {} ({} bits)", sends.join(" "), m.total_bits);
    println!("trace:  {}", trace_path.display());
    println!("report: {}", report_path.display());
    Ok(result.passed())
}

fn campaign(
    scenario: &Path,
    seeds: Range<u64>,
    behaviors: Vec<Behavior>,
    parallel: Option<usize>,
    summary_path: Option<PathBuf>,
) -> Result<bool, String> {
    let base = Scenario::load(scenario).map_err(|e| e.to_string())?;
    let summary = run_campaign(&base, seeds, &behaviors, parallel);
    let path = summary_path.unwrap_or_else(|| default_path(&format!("{}.campaign", base.name), "json"));
    write_text(&path, &summary.to_json())?;

    println!(
        "{} runs of {} over seeds {}..{}",
        summary.runs, base.name, summary.seeds.0, summary.seeds.1
    );
    println!(
        "{:<22} {:>6} {:>9} {:>6} {:>6} {:>14}",
        "behavior", "runs", "quiescent", "fails", "errors", "suggests/inst"
    );
    for (name, b) in &summary.behaviors {
        let fails: u64 = b.properties.values().map(|c| c.fail).sum();
        println!(
            "{name:<22} {:>6} {:>9} {fails:>6} {:>6} {:>8} <= {:<3}",
            b.runs, b.quiescent, b.errors, b.max_suggests_per_instance, b.suggest_bound
        );
    }
    for f in summary.failures.iter().take(20) {
        println!("FAIL {} seed {} {}: {}", f.behavior, f.seed, f.property, f.reason);
    }
    println!("summary: {}", path.display());
    Ok(summary.passed())
}

fn check(trace: &Path, scenario: &Path, cutoff: bool, report: Option<PathBuf>) -> Result<bool, String> {
    let scenario = Scenario::load(scenario).map_err(|e| e.to_string())?;
    let file = File::open(trace).map_err(|e| format!("{}: {e}", trace.display()))?;
    let trace = Trace::read_jsonl(BufReader::new(file)).map_err(|e| e.to_string())?;
    let checks = check_all(&trace.events, &scenario.check_config(!cutoff));
    print_checks(&checks);
    if let Some(path) = report {
        let file = File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &checks).map_err(|e| e.to_string())?;
    }
    Ok(checks.iter().all(|c| !c.verdict.is_fail()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            trace,
            report,
        } => run(&scenario, trace, report),
        Command::Campaign {
            scenario,
            seeds,
            behaviors,
            parallel,
            summary,
        } => campaign(&scenario, seeds, behaviors.0, parallel, summary),
        Command::Check {
            trace,
            scenario,
            cutoff,
            report,
        } => check(&trace, &scenario, cutoff, report),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
