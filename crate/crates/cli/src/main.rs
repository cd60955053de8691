//! `qpl`: gain ledgers, simulations, trace verification and parameter sweeps.

mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qpl_core::gains::Requirement;
use qpl_core::manifest::{write_run_outputs, RunManifest, CONFIG_FILE, LEDGER_FILE};
use qpl_core::scenario::{resolve, Mode, Resolved, ScenarioConfig};
use qpl_core::sim::run_partial;
use qpl_core::trace::{write_atomic, SimTrace};
use qpl_core::verify::verify_trace;
use qpl_core::{EnvelopeReport, GainLedger};

#[derive(Parser)]
#[command(name = "qpl", version, about = "Switched predictor feedback under dynamic quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the gain ledger and print the condition table.
    Gains(GainsArgs),
    /// Run one scenario and write its trace.
    Simulate(SimulateArgs),
    /// Check a trace directory against its gain ledger.
    Verify(VerifyArgs),
    /// Run a parameter grid and aggregate per-run summaries.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct Overrides {
    /// Override the scenario mode (state_q, input_q, nominal, open_loop).
    #[arg(long)]
    mode: Option<String>,
    /// Override the number of grid cells.
    #[arg(long = "grid-n")]
    grid_n: Option<usize>,
    /// Override the seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, config: &mut ScenarioConfig) -> qpl_core::Result<()> {
        if let Some(m) = &self.mode {
            config.mode = Mode::parse(m)?;
        }
        if let Some(n) = self.grid_n {
            config.grid_n = n;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        Ok(())
    }
}

#[derive(Args)]
struct GainsArgs {
    #[arg(long)]
    config: PathBuf,
    /// Where to write the ledger JSON.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Directory for the ledger and manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also run at twice the grid resolution into `<out>/refined`.
    #[arg(long)]
    refine: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct VerifyArgs {
    /// Trace directory written by `simulate`.
    #[arg(value_name = "TRACE_DIR")]
    trace: PathBuf,
    /// Ledger JSON; defaults to the one in the trace directory.
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// Where to write the report JSON; defaults to `<TRACE_DIR>/report.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// On failure, rerun the saved configuration at twice the grid resolution.
    #[arg(long)]
    refine: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Command outcome mapped onto the process exit code.
enum Failure {
    /// Usage, configuration or I/O problem: exit 1.
    Usage(anyhow::Error),
    /// A requested condition or check did not hold: exit 2.
    Condition(String),
    /// The simulation produced a non-finite value: exit 3.
    Blowup(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<qpl_core::Error>() {
            Some(qpl_core::Error::NonFinite { .. }) => Failure::Blowup(format!("{e:#}")),
            _ => Failure::Usage(e),
        }
    }
}

impl From<qpl_core::Error> for Failure {
    fn from(e: qpl_core::Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(path: &Path, overrides: &Overrides) -> anyhow::Result<ScenarioConfig> {
    let mut config = ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?;
    overrides.apply(&mut config)?;
    Ok(config)
}

fn requirement(mode: Mode) -> Requirement {
    match mode {
        Mode::StateQ => Requirement::StateQuantization,
        Mode::InputQ => Requirement::InputQuantization,
        Mode::Nominal | Mode::OpenLoop => Requirement::All,
    }
}

fn condition_table(ledger: &GainLedger) -> String {
    let mut out = format!("{:<22} {:<6} {:>24}\n", "condition", "ok", "margin");
    for row in ledger.conditions() {
        out += &format!("{:<22} {:<6} {:>24.16e}\n", row.name, row.ok, row.margin);
    }
    out.push('\n');
    let values = [
        ("M3", ledger.m3),
        ("M4", ledger.m4),
        ("M5", ledger.m5),
        ("MBar", ledger.m_bar),
        ("phi", ledger.phi),
        ("phi1", ledger.phi1),
        ("M0", ledger.m0),
        ("Omega", ledger.omega),
        ("T", ledger.window),
        ("gamma", ledger.gamma),
        ("gamma_bar", ledger.gamma_bar),
        ("thm1_threshold", ledger.thm1_threshold),
        ("thm2_threshold", ledger.thm2_threshold),
    ];
    for (name, v) in values {
        out += &format!("{name:<22} {v:>31.16e}\n");
    }
    out
}

/// Writes to stdout, ignoring a closed pipe.
pub(crate) fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn cmd_gains(args: &GainsArgs) -> CmdResult {
    let config = load_config(&args.config, &args.overrides)?;
    let resolved = resolve(&config)?;
    let ledger = resolved.ledger;
    let json = serde_json::to_string_pretty(&ledger).map_err(anyhow::Error::from)?;
    let path = match (&args.ledger, &args.out) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) => Some(dir.join(LEDGER_FILE)),
        (None, None) => None,
    };
    if let Some(path) = &path {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
        write_atomic(path, json.as_bytes())?;
        if let Some(dir) = &args.out {
            let manifest = RunManifest::build("gains", Some(&args.config), dir, std::slice::from_ref(path))?;
            manifest.write(dir)?;
        }
    }
    emit(&condition_table(&ledger));
    if ledger.satisfies(requirement(config.mode)) {
        Ok(())
    } else {
        Err(Failure::Condition(format!(
            "conditions required for {} do not hold",
            config.mode.as_str()
        )))
    }
}

/// Runs and writes one scenario. Returns the numerical failure, if any, after
/// the partial trace has been written.
fn simulate_into(resolved: &Resolved, out: &Path, config_path: &Path) -> anyhow::Result<(SimTrace, Option<qpl_core::Error>)> {
    let (trace, failure) = run_partial(resolved);
    let files = write_run_outputs(out, resolved, &trace)?;
    let manifest = RunManifest::build("simulate", Some(config_path), out, &files)?;
    manifest.write(out)?;
    Ok((trace, failure))
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let config = load_config(&args.config, &args.overrides)?;
    let resolved = resolve(&config)?;
    for w in &resolved.warnings {
        eprintln!("warning: {w}");
    }
    let (trace, failure) = simulate_into(&resolved, &args.out, &args.config)?;
    if let Some(e) = failure {
        return Err(Failure::Blowup(format!("{e} (partial trace written to {})", args.out.display())));
    }
    summarize(&trace);
    if args.refine {
        let mut fine = resolved.config.clone();
        fine.grid_n *= 2;
        let fine_resolved = resolve(&fine)?;
        let dir = args.out.join("refined");
        let (fine_trace, failure) = simulate_into(&fine_resolved, &dir, &args.config)?;
        if let Some(e) = failure {
            return Err(Failure::Blowup(format!("{e} in refined run")));
        }
        summarize(&fine_trace);
    }
    Ok(())
}

fn summarize(trace: &SimTrace) {
    let last = trace.final_record().map_or(f64::NAN, |r| r.norm);
    emit(&format!(
        "{} N={} steps={} t1*={} final norm {:.6e} (initial {:.6e}), {} events\n",
        trace.meta.mode.as_str(),
        trace.meta.grid_n,
        trace.meta.steps,
        trace.meta.t1_star.map_or("-".to_string(), |t| format!("{t:.6}")),
        last,
        trace.meta.initial_norm,
        trace.events.len()
    ));
}

fn read_ledger(path: &Path) -> anyhow::Result<GainLedger> {
    let bytes = std::fs::read(path).with_context(|| format!("reading ledger {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing ledger {}", path.display()))
}

fn cmd_verify(args: &VerifyArgs) -> CmdResult {
    let trace = SimTrace::read_dir(&args.trace).with_context(|| format!("reading trace {}", args.trace.display()))?;
    let ledger_path = args.ledger.clone().unwrap_or_else(|| args.trace.join(LEDGER_FILE));
    let ledger = read_ledger(&ledger_path)?;
    let mut report = verify_trace(&trace, &ledger);
    emit(&report.table());

    if !report.verdict && args.refine {
        let config = ScenarioConfig::load(&args.trace.join(CONFIG_FILE)).context("refinement needs the saved config")?;
        let mut fine = config.clone();
        fine.grid_n *= 2;
        let resolved = resolve(&fine)?;
        let (fine_trace, failure) = run_partial(&resolved);
        if let Some(e) = failure {
            return Err(Failure::Blowup(format!("{e} in refined run")));
        }
        let fine_report = verify_trace(&fine_trace, &resolved.ledger);
        emit(&format!("\nrefined to N = {}:\n", fine.grid_n));
        emit(&fine_report.table());
        let combined = serde_json::json!({ "base": report, "refined": fine_report });
        write_report(args, &serde_json::to_string_pretty(&combined).map_err(anyhow::Error::from)?)?;
        report = fine_report;
    } else {
        write_report(args, &report.to_json())?;
    }
    verdict(&report)
}

fn write_report(args: &VerifyArgs, json: &str) -> anyhow::Result<()> {
    let path = args.out.clone().unwrap_or_else(|| args.trace.join("report.json"));
    write_atomic(&path, json.as_bytes())?;
    Ok(())
}

fn verdict(report: &EnvelopeReport) -> CmdResult {
    if report.verdict {
        Ok(())
    } else {
        Err(Failure::Condition("verification failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gains(a) => cmd_gains(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => sweep::cmd_sweep(&a.config, &a.out).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Condition(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Blowup(msg)) => {
            eprintln!("numerical blowup: {msg}");
            ExitCode::from(3)
        }
    }
}
