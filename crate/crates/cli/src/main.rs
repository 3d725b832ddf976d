//! `wltb`: run wireless train backbone scenarios and export channel data.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | success: train operational and every flow verdict passed |
//! | 1  | generic failure (I/O, internal) |
//! | 2  | usage or scenario schema error |
//! | 10 | length mismatch between directory and secondary channel |
//! | 11 | cabin conflict |
//! | 12 | unroutable frames |
//! | 13 | secondary channel fault |
//! | 14 | train integrity fault |
//! | 15 | not operational (no cabin claim, or pending) |
//! | 16 | flow endpoint not in the operational directory |
//! | 17 | inconsistent adjacency reports |
//! | 20 | at least one flow violated its requirements |

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::thread;

use clap::{Args, Parser, Subcommand};

use wltb_core::channel::{
    coherence_bandwidth, rms_delay_spread, snr_grid, sweep_per, synth_pdp, write_pdp_csv,
    write_per_csv, ChannelScenario, Mcs, PerCalibration,
};
use wltb_core::scenario::{Scenario, ScenarioError};
use wltb_core::sim::{
    exit_code, format_node_table, format_otd_table, run, write_artifacts, RunOptions, RunOutcome,
};
use wltb_core::traffic::read_report_csv;

#[derive(Parser)]
#[command(name = "wltb", version, about = "Wireless train backbone simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write the report, digest and directories.
    Run(RunArgs),
    /// Run discovery and inauguration only and print the directory.
    Inaugurate(InaugurateArgs),
    /// PER versus SNR curves as CSV.
    SweepPer(SweepArgs),
    /// Synthesized power-delay profile as CSV.
    Pdp(PdpArgs),
    /// Summarize a report CSV; exits 20 if any flow failed.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug)]
enum SeedArg {
    Fixed(u64),
    Random,
}

impl FromStr for SeedArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "random" {
            return Ok(SeedArg::Random);
        }
        s.parse()
            .map(SeedArg::Fixed)
            .map_err(|_| format!("expected an unsigned integer or `random`, got `{s}`"))
    }
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Overrides `run.seed`; `random` draws one from the OS.
    #[arg(long)]
    seed: Option<SeedArg>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write the per-event trace (`trace.tsv`).
    #[arg(long)]
    trace: bool,
    /// Independent replicas with seeds base, base + 1, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    repeat: u32,
}

#[derive(Args)]
struct InaugurateArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<SeedArg>,
    /// Also write artifacts here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated schemes; all three when omitted, none when empty.
    #[arg(long)]
    mcs: Option<String>,
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 30.0, allow_negative_numbers = true)]
    snr_max: f64,
    #[arg(long, default_value_t = 0.25)]
    step: f64,
    /// Takes the curve calibration from this scenario's radio section.
    #[arg(long)]
    scenario: Option<String>,
    /// CSV file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PdpArgs {
    /// Channel tag, e.g. `metro_tunnel`.
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    channel: Option<ChannelScenario>,
    /// Uses this scenario's channel section.
    #[arg(long)]
    scenario: Option<String>,
    /// Sounder bandwidth in MHz (80 or 120).
    #[arg(long, requires = "channel")]
    bandwidth: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A `report.csv` written by `run`.
    report: PathBuf,
}

/// Failure outside the simulated protocol.
enum CliError {
    Usage(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit_code::USAGE,
            CliError::Io(_) => exit_code::GENERIC,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Schema { .. } => CliError::Usage(format!("scenario error: {e}")),
            ScenarioError::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Inaugurate(a) => cmd_inaugurate(a),
        Command::SweepPer(a) => cmd_sweep(a),
        Command::Pdp(a) => cmd_pdp(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}

fn resolve_seed(arg: Option<SeedArg>, scenario: &Scenario) -> u64 {
    match arg {
        Some(SeedArg::Fixed(s)) => s,
        Some(SeedArg::Random) => rand::random(),
        None => scenario.run.seed,
    }
}

fn describe(outcome: &RunOutcome) -> String {
    match &outcome.failure {
        None => format!("exit {} (ok)", exit_code::OK),
        Some(f) => format!("exit {} ({f})", f.exit_code()),
    }
}

fn print_summary(out: &RunOutcome, flows: bool) {
    println!("scenario {}  seed {}  simulated {}", out.scenario, out.seed, out.end);
    println!("digest {}  events {}", out.digest, out.steps);
    println!();
    print!("{}", format_node_table(&out.nodes));
    if let Some(otd) = out.otd() {
        println!();
        print!("{}", format_otd_table(otd));
    }
    if flows && !out.report.flows.is_empty() {
        println!();
        println!(
            "{:<16} {:<9} {:>6} {:>9} {:>7} {:>8} {:>9} verdict",
            "flow", "domain", "sent", "delivered", "dropped", "p99_us", "mbps"
        );
        for f in &out.report.flows {
            let violations: Vec<&str> = f.violations.iter().map(|v| v.label()).collect();
            println!(
                "{:<16} {:<9} {:>6} {:>9} {:>7} {:>8} {:>9.3} {}{}",
                f.flow_id,
                f.domain.as_str(),
                f.sent,
                f.delivered,
                f.dropped,
                f.p99_us.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                f.throughput_mbps,
                if f.pass() { "pass" } else { "fail" },
                if violations.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", violations.join(", "))
                }
            );
        }
    }
    for (t, e) in &out.command_errors {
        println!("command rejected at {t}: {e}");
    }
    println!();
    println!("{}", describe(out));
}

fn cmd_run(a: RunArgs) -> Result<i32, CliError> {
    let scenario = Scenario::resolve(&a.scenario)?;
    let base = resolve_seed(a.seed, &scenario);
    if a.repeat == 1 {
        let outcome = run(
            scenario,
            &RunOptions {
                seed: Some(base),
                trace: a.trace,
                no_traffic: false,
            },
        );
        write_artifacts(&outcome, &a.out)?;
        print_summary(&outcome, true);
        println!("artifacts in {}", a.out.display());
        return Ok(outcome.exit_code());
    }

    let outcomes: Vec<RunOutcome> = thread::scope(|s| {
        let handles: Vec<_> = (0..u64::from(a.repeat))
            .map(|i| {
                let scenario = scenario.clone();
                let opts = RunOptions {
                    seed: Some(base.wrapping_add(i)),
                    trace: a.trace,
                    no_traffic: false,
                };
                s.spawn(move || run(scenario, &opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("replica panicked"))
            .collect()
    });

    fs::create_dir_all(&a.out)?;
    let mut agg = String::from("replica,seed,exit_code,digest,events,flows_passed,flows_total\n");
    println!("{:<8} {:<20} {:<5} {:<16} flows", "replica", "seed", "exit", "digest");
    for (i, o) in outcomes.iter().enumerate() {
        write_artifacts(o, &a.out.join(format!("replica-{i:03}")))?;
        let passed = o.report.flows.iter().filter(|f| f.pass()).count();
        let total = o.report.flows.len();
        agg.push_str(&format!(
            "{i},{},{},{},{},{passed},{total}\n",
            o.seed,
            o.exit_code(),
            o.digest,
            o.steps
        ));
        println!("{i:<8} {:<20} {:<5} {:<16} {passed}/{total}", o.seed, o.exit_code(), o.digest.to_string());
    }
    fs::write(a.out.join("aggregate.csv"), agg)?;
    println!("artifacts in {}", a.out.display());
    Ok(outcomes
        .iter()
        .map(RunOutcome::exit_code)
        .find(|&c| c != exit_code::OK)
        .unwrap_or(exit_code::OK))
}

fn cmd_inaugurate(a: InaugurateArgs) -> Result<i32, CliError> {
    let scenario = Scenario::resolve(&a.scenario)?;
    let seed = resolve_seed(a.seed, &scenario);
    let outcome = run(
        scenario,
        &RunOptions {
            seed: Some(seed),
            trace: a.trace,
            no_traffic: true,
        },
    );
    if let Some(dir) = &a.out {
        write_artifacts(&outcome, dir)?;
    }
    print_summary(&outcome, false);
    Ok(outcome.exit_code())
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            Box::new(io::BufWriter::new(fs::File::create(p)?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_sweep(a: SweepArgs) -> Result<i32, CliError> {
    let schemes = match &a.mcs {
        None => Mcs::ALL.to_vec(),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<Mcs>().map_err(|e| CliError::Usage(format!("--mcs: {e}"))))
            .collect::<Result<_, _>>()?,
    };
    let cal = match &a.scenario {
        Some(s) => Scenario::resolve(s)?.radio.calibration(),
        None => PerCalibration::default(),
    };
    let grid = snr_grid(a.snr_min, a.snr_max, a.step).map_err(|e| CliError::Usage(e.to_string()))?;
    write_per_csv(&sweep_per(&schemes, &cal, &grid), output(&a.out)?)?;
    Ok(exit_code::OK)
}

fn cmd_pdp(a: PdpArgs) -> Result<i32, CliError> {
    let model = match (&a.scenario, a.channel) {
        (Some(s), _) => Scenario::resolve(s)?.channel.model(),
        (None, Some(c)) => synth_pdp(c, a.bandwidth.unwrap_or_else(|| c.default_bandwidth_mhz())),
        (None, None) => unreachable!("clap requires one of them"),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    write_pdp_csv(&model, output(&a.out)?)?;
    let bc = coherence_bandwidth(&model)
        .map(|b| format!("{b:.2} MHz"))
        .unwrap_or_else(|e| e.to_string());
    eprintln!(
        "{}: {} taps, rms delay spread {:.2} ns, coherence bandwidth {bc}",
        model.scenario,
        model.taps.len(),
        rms_delay_spread(&model)
    );
    Ok(exit_code::OK)
}

fn cmd_report(a: ReportArgs) -> Result<i32, CliError> {
    let file = fs::File::open(&a.report).map_err(|e| CliError::Io(format!("{}: {e}", a.report.display())))?;
    let rows = read_report_csv(file).map_err(|e| CliError::Usage(format!("{}: {e}", a.report.display())))?;
    print_report(&rows, &a.report);
    let failed = rows.iter().filter(|r| r.verdict != "pass").count();
    Ok(if failed == 0 { exit_code::OK } else { exit_code::VERDICT_FAIL })
}

fn print_report(rows: &[wltb_core::traffic::ReportRow], path: &Path) {
    println!("{}", path.display());
    for r in rows {
        println!(
            "{:<16} {:<9} sent {:>6} delivered {:>6} dropped {:>5} p99 {:>7} us {:>9.3} Mbps  {}{}",
            r.flow_id,
            r.domain,
            r.sent,
            r.delivered,
            r.dropped,
            r.p99_us.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            r.throughput_mbps,
            r.verdict,
            if r.violation.is_empty() {
                String::new()
            } else {
                format!(" ({})", r.violation)
            }
        );
    }
    let failed = rows.iter().filter(|r| r.verdict != "pass").count();
    println!("{} flows, {} failed", rows.len(), failed);
}
