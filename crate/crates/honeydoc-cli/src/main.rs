//! Command-line surface: run scenarios, execute the canned experiments,
//! dump flow tables and validate stored traces.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use honeydoc_core::experiments::{
    exp_data_reduction, exp_handover, exp_latency, exp_sensibility, first_psh_latency_us,
    LATENCY_MECHANISMS,
};
use honeydoc_core::orchestrator::Mechanism;
use honeydoc_core::scenario::Scenario;
use honeydoc_core::trace::parse_trace;
use honeydoc_core::validate::{validate_handover, validate_trace_text};

#[derive(Parser)]
#[command(name = "honeydoc", version, about = "Deterministic honeynet orchestration testbed")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MechArg {
    Direct,
    M1,
    M2,
}

impl From<MechArg> for Mechanism {
    fn from(m: MechArg) -> Mechanism {
        match m {
            MechArg::Direct => Mechanism::Direct,
            MechArg::M1 => Mechanism::M1,
            MechArg::M2 => Mechanism::M2,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and emit its trace
    Run {
        scenario: PathBuf,
        /// Write the trace here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Canned experiments
    Exp {
        #[command(subcommand)]
        exp: ExpCmd,
    },
    /// Print the flow tables a scenario installs at startup
    DumpFlows { scenario: PathBuf },
    /// Validate a stored trace file
    Validate {
        trace: PathBuf,
        /// Additionally check the SSH handover pattern
        #[arg(long)]
        handover: bool,
        /// Mechanism the handover trace was recorded under
        #[arg(long, value_enum, default_value_t = MechArg::M2)]
        mech: MechArg,
    },
}

#[derive(Subcommand)]
enum ExpCmd {
    /// Rule-translation dump plus one probe per service port
    Sensibility,
    /// SSH redirection trace with the handover validator
    Handover {
        #[arg(long, value_enum, default_value_t = MechArg::M2)]
        mech: MechArg,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Write the trace here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// First-PSH latency sweep over {direct, m1, m2}
    Latency {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Connections per second
        #[arg(long, default_value_t = 10)]
        rate: u64,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack-data reduction under the allowlist ruleset
    Reduce {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Fraction of connections aimed at off-allowlist ports
        #[arg(long, default_value_t = 0.9)]
        offlist: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn env_seed() -> Option<u64> {
    std::env::var("HONEYDOC_SEED").ok()?.parse().ok()
}

/// 2 = configuration error, 1 = validation failure.
fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn load_scenario(path: &PathBuf) -> Result<Scenario, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut scn = Scenario::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    scn.apply_env_seed();
    Ok(scn)
}

fn write_or_print(out: &Option<PathBuf>, content: &str) -> Result<(), String> {
    match out {
        Some(path) => fs::write(path, content).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { scenario, out } => {
            let scn = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            let mut world = match scn.build() {
                Ok(w) => w,
                Err(e) => return fail(2, e),
            };
            world.run(None);
            if let Err(e) = write_or_print(&out, &world.trace.to_text()) {
                return fail(2, e);
            }
            ExitCode::SUCCESS
        }
        Cmd::DumpFlows { scenario } => {
            let scn = match load_scenario(&scenario) {
                Ok(s) => s,
                Err(e) => return fail(2, e),
            };
            let world = match scn.build() {
                Ok(w) => w,
                Err(e) => return fail(2, e),
            };
            let mut names = vec!["fcf".to_string()];
            names.extend(
                scn.decoys
                    .iter()
                    .filter(|d| d.behind_spf)
                    .map(|d| format!("spf-{}", d.name)),
            );
            for name in names {
                let sw = world.switch(&name).expect("builder created this switch");
                println!("=== {name}");
                let dump = sw.dump_flows_normalized();
                if !dump.is_empty() {
                    println!("{dump}");
                }
            }
            ExitCode::SUCCESS
        }
        Cmd::Validate { trace, handover, mech } => {
            let text = match fs::read_to_string(&trace) {
                Ok(t) => t,
                Err(e) => return fail(2, format!("{}: {e}", trace.display())),
            };
            let count = match validate_trace_text(&text) {
                Ok(n) => n,
                Err(e) => return fail(1, format!("{}: {e}", trace.display())),
            };
            println!("structure: OK ({count} events)");
            if handover {
                let events = parse_trace(&text).expect("validated above");
                match validate_handover(&events, mech.into(), "attacker~fcf", "hih0", 43) {
                    Ok(()) => println!("handover: OK"),
                    Err(e) => return fail(1, format!("handover: {e}")),
                }
            }
            ExitCode::SUCCESS
        }
        Cmd::Exp { exp } => run_exp(exp),
    }
}

fn run_exp(exp: ExpCmd) -> ExitCode {
    match exp {
        ExpCmd::Sensibility => {
            let report = match exp_sensibility() {
                Ok(r) => r,
                Err(e) => return fail(2, e),
            };
            println!("{}", report.dump);
            for probe in report.probes {
                println!(
                    "port {}: {}",
                    probe.port,
                    if probe.delivered { "delivered" } else { "denied" }
                );
            }
            ExitCode::SUCCESS
        }
        ExpCmd::Handover { mech, seed, out } => {
            let seed = env_seed().unwrap_or(seed);
            let outcome = match exp_handover(mech.into(), seed) {
                Ok(o) => o,
                Err(e) => return fail(2, e),
            };
            if let Err(e) = write_or_print(&out, &outcome.trace_text) {
                return fail(2, e);
            }
            match outcome.verdict {
                Ok(()) => {
                    eprintln!("handover: OK");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(1, format!("handover: {e}")),
            }
        }
        ExpCmd::Latency { n, rate, seed, out } => {
            let seed = env_seed().unwrap_or(seed);
            let report = match exp_latency(n, rate, seed) {
                Ok(r) => r,
                Err(e) => return fail(2, e),
            };
            if let Err(e) = write_or_print(&out, &report.csv()) {
                return fail(2, e);
            }
            eprint!("{}", report.summary());
            let timing = honeydoc_core::orchestrator::TimingConfig::default();
            for m in LATENCY_MECHANISMS {
                eprintln!(
                    "{m:?}: closed-form first-PSH latency {} ms",
                    first_psh_latency_us(&timing, m) / 1000
                );
            }
            for (m, bins) in &report.histograms {
                let cells: Vec<String> =
                    bins.iter().map(|(start, n)| format!("{start}:{n}")).collect();
                eprintln!("{m:?} fcf frames per 100 ms bin: {}", cells.join(" "));
            }
            ExitCode::SUCCESS
        }
        ExpCmd::Reduce { n, offlist, seed } => {
            let seed = env_seed().unwrap_or(seed);
            let report = match exp_data_reduction(n, offlist, seed) {
                Ok(r) => r,
                Err(e) => return fail(2, e),
            };
            print!("{}", report.table());
            eprintln!("off-allowlist deliveries after filtering: {}", report.offlist_after());
            ExitCode::SUCCESS
        }
    }
}
