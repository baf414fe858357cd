//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 a deadline was missed.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use tracing::info;

use crate::engine::run;
use crate::events::{read_log, write_log};
use crate::hmi::{self, GatewayConfig};
use crate::metrics::{aggregate_csv, metrics_from_events, RunMetrics};
use crate::scenario::{reference_scenarios, ScenarioSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DEADLINE: i32 = 2;

pub const OUT_DIR_ENV: &str = "VRULINK_OUT";

#[derive(Debug, Parser)]
#[command(name = "vrulink", version, about = "Hybrid VRU-protection pipeline simulator")]
pub struct Cli {
    /// Debug logging on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its event log and metrics CSV.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
        out: PathBuf,
    },
    /// Recompute metrics from a log and compare them with the stored CSV.
    Replay {
        log: PathBuf,
        /// Defaults to the `.metrics.csv` next to the log.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Aggregate metrics of several logs into one CSV.
    Report {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario paced in real time behind the HMI gateway.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Built console assets.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Write the built-in reference scenarios as JSON files.
    Scenarios {
        #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
        out: PathBuf,
    },
}

/// File stem shared by a run's log and CSV.
pub fn run_stem(name: &str, seed: u64) -> String {
    format!("{name}-{seed}")
}

pub fn log_path(out: &Path, name: &str, seed: u64) -> PathBuf {
    out.join(format!("{}.events.jsonl", run_stem(name, seed)))
}

pub fn csv_path(out: &Path, name: &str, seed: u64) -> PathBuf {
    out.join(format!("{}.metrics.csv", run_stem(name, seed)))
}

/// `x.events.jsonl` pairs with `x.metrics.csv`.
pub fn csv_for_log(log: &Path) -> PathBuf {
    let name = log.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = name.strip_suffix(".events.jsonl").or_else(|| name.strip_suffix(".jsonl")).unwrap_or(&name);
    log.with_file_name(format!("{stem}.metrics.csv"))
}

pub fn load_metrics(log: &Path) -> anyhow::Result<RunMetrics> {
    let file = fs::File::open(log).with_context(|| format!("cannot open log {}", log.display()))?;
    let events = read_log(BufReader::new(file)).with_context(|| format!("{}", log.display()))?;
    metrics_from_events(&events).with_context(|| format!("{}", log.display()))
}

fn load_spec(path: &Path, seed: Option<u64>) -> anyhow::Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::load(path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(spec)
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: &Path) -> anyhow::Result<i32> {
    let spec = load_spec(scenario, seed)?;
    let (name, seed) = (spec.name.clone(), spec.seed);
    let output = run(spec)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let lp = log_path(out, &name, seed);
    let file = fs::File::create(&lp).with_context(|| format!("cannot write {}", lp.display()))?;
    write_log(&output.events, std::io::BufWriter::new(file))?;
    let cp = csv_path(out, &name, seed);
    fs::write(&cp, output.metrics.to_csv()).with_context(|| format!("cannot write {}", cp.display()))?;
    info!(log = %lp.display(), csv = %cp.display(), "run written");
    print!("{}", output.metrics.to_csv());
    Ok(if output.metrics.all_deadlines_met() { EXIT_OK } else { EXIT_DEADLINE })
}

fn cmd_replay(log: &Path, csv: Option<&Path>) -> anyhow::Result<i32> {
    let metrics = load_metrics(log)?;
    let csv = csv.map(Path::to_path_buf).unwrap_or_else(|| csv_for_log(log));
    let stored = fs::read_to_string(&csv).with_context(|| format!("cannot read {}", csv.display()))?;
    let fresh = metrics.to_csv();
    if fresh != stored {
        let mut msg = format!("metrics differ from {}\n", csv.display());
        for (i, (a, b)) in stored.lines().zip(fresh.lines()).enumerate() {
            if a != b {
                msg.push_str(&format!("  row {}: stored `{a}`, replayed `{b}`\n", i + 1));
            }
        }
        if stored.lines().count() != fresh.lines().count() {
            msg.push_str(&format!(
                "  stored has {} rows, replay has {}\n",
                stored.lines().count(),
                fresh.lines().count()
            ));
        }
        bail!(msg.trim_end().to_string());
    }
    println!("replay matches {}", csv.display());
    Ok(EXIT_OK)
}

fn cmd_report(logs: &[PathBuf], out: Option<&Path>) -> anyhow::Result<i32> {
    let runs = logs.iter().map(|l| load_metrics(l)).collect::<anyhow::Result<Vec<_>>>()?;
    let csv = aggregate_csv(&runs);
    match out {
        Some(p) => fs::write(p, csv).with_context(|| format!("cannot write {}", p.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn cmd_serve(
    scenario: &Path,
    seed: Option<u64>,
    port: u16,
    speed: f64,
    assets: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let spec = load_spec(scenario, seed)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = hmi::bind(port).await.with_context(|| format!("cannot listen on port {port}"))?;
        eprintln!("serving {} on http://{}/ (ws at /ws)", spec.name, listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        hmi::serve_on(listener, spec, GatewayConfig { speed, assets }, shutdown).await?;
        Ok(EXIT_OK)
    })
}

fn cmd_scenarios(out: &Path) -> anyhow::Result<i32> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for s in reference_scenarios() {
        let p = out.join(format!("{}.json", s.name));
        fs::write(&p, s.to_json_pretty() + "\n").with_context(|| format!("cannot write {}", p.display()))?;
        println!("{}", p.display());
    }
    Ok(EXIT_OK)
}

pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run { scenario, seed, out } => cmd_run(&scenario, seed, &out),
        Command::Replay { log, csv } => cmd_replay(&log, csv.as_deref()),
        Command::Report { logs, out } => cmd_report(&logs, out.as_deref()),
        Command::Serve { scenario, seed, port, speed, assets } => cmd_serve(&scenario, seed, port, speed, assets),
        Command::Scenarios { out } => cmd_scenarios(&out),
    }
}

/// Parse arguments, run, and map the outcome onto the exit-code contract.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .try_init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
