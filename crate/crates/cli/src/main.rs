use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppmarket::actors::{run_scenario, verify_suite, Evidence, ScenarioConfig, ScenarioError, ScenarioRun};
use ppmarket::ledger::{import_ndjson, LedgerConfig, LedgerError};
use ppmarket::simnet::{models_per_second, sweep, write_csv, SweepConfig};

const OK: u8 = 0;
const MISMATCH: u8 = 1;
const CONFIG: u8 = 2;
const CORRUPT: u8 = 3;

#[derive(Parser)]
#[command(name = "ppmarket", version, about = "Run, verify and benchmark data-marketplace scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its ledger, logs, model and reports.
    RunScenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, env = "PPMARKET_SEED")]
        seed: Option<u64>,
    },
    /// Replay a ledger export and run every verification check on it.
    Verify {
        /// Ledger export (NDJSON).
        #[arg(long)]
        ledger: PathBuf,
        /// Actor evidence; defaults to evidence.json next to the ledger.
        #[arg(long)]
        evidence: Option<PathBuf>,
    },
    /// Run a throughput/latency sweep and write it as CSV.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, env = "PPMARKET_SEED")]
        seed: Option<u64>,
    },
    /// Run a scenario and write only the ledger export and evidence.
    Export {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, env = "PPMARKET_SEED")]
        seed: Option<u64>,
    },
}

/// A failure with the exit code it maps to.
struct Exit(u8, String);

impl From<std::io::Error> for Exit {
    fn from(e: std::io::Error) -> Self {
        Exit(MISMATCH, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RunScenario { config, out, seed } => run_cmd(&config, &out, seed, true),
        Command::Export { config, out, seed } => run_cmd(&config, &out, seed, false),
        Command::Verify { ledger, evidence } => verify_cmd(&ledger, evidence.as_deref()),
        Command::Bench { config, out, seed } => bench_cmd(config.as_deref(), &out, seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Exit(code, msg)) => {
            println!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Exit> {
    let mut cfg = ScenarioConfig::load(path).map_err(|e| Exit(CONFIG, e))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cfg: &ScenarioConfig) -> Result<ScenarioRun, Exit> {
    run_scenario(cfg).map_err(|e| match e {
        ScenarioError::Config(_) | ScenarioError::Data(_) => Exit(CONFIG, e.to_string()),
        ScenarioError::Ledger(LedgerError::CorruptChain { .. }) => Exit(CORRUPT, e.to_string()),
        _ => Exit(MISMATCH, e.to_string()),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Exit> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Exit(MISMATCH, e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn run_cmd(config: &Path, out: &Path, seed: Option<u64>, full: bool) -> Result<u8, Exit> {
    let cfg = load_scenario(config, seed)?;
    let run = execute(&cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("ledger.ndjson"), run.ledger.export())?;
    write_json(&out.join("evidence.json"), &run.evidence)?;
    if !full {
        println!("exported {} blocks to {}", run.ledger.blocks().len(), out.display());
        return Ok(OK);
    }
    fs::write(out.join("actors.ndjson"), run.log.to_ndjson())?;
    write_json(&out.join("model.json"), &run.final_model)?;
    write_json(&out.join("reports.json"), &run.reports)?;

    println!(
        "scenario {}: seed {}, {} blocks, {} round(s) aggregated",
        cfg.name,
        cfg.seed,
        run.ledger.blocks().len(),
        run.rounds.len()
    );
    if let Some(q) = &run.quorum_failure {
        println!("quorum failure: {q}");
    }
    let flagged = run.flagged_endpoints();
    println!("flagged cloud owners: {}", if flagged.is_empty() { "none".to_string() } else { flagged.into_iter().collect::<Vec<_>>().join(", ") });
    let failed: Vec<_> = run.failed_reports().collect();
    println!("{} verification report(s), {} failed", run.reports.len(), failed.len());
    for r in failed {
        println!("  {r}");
    }
    let mismatches = run.expectation_mismatches();
    for m in &mismatches {
        println!("mismatch: {m}");
    }
    Ok(if mismatches.is_empty() { OK } else { MISMATCH })
}

fn verify_cmd(ledger: &Path, evidence: Option<&Path>) -> Result<u8, Exit> {
    let text = fs::read_to_string(ledger).map_err(|e| Exit(CONFIG, format!("{}: {e}", ledger.display())))?;
    let blocks = import_ndjson(&text).map_err(|e| Exit(CORRUPT, e.to_string()))?;
    let evidence_path = evidence
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ledger.with_file_name("evidence.json"));
    let evidence: Evidence = match fs::read_to_string(&evidence_path) {
        Ok(t) => serde_json::from_str(&t).map_err(|e| Exit(CONFIG, format!("{}: {e}", evidence_path.display())))?,
        Err(_) if evidence.is_none() => {
            println!("no evidence at {}; checks needing off-chain bytes will fail", evidence_path.display());
            Evidence::default()
        }
        Err(e) => return Err(Exit(CONFIG, format!("{}: {e}", evidence_path.display()))),
    };
    let reports = verify_suite(&LedgerConfig::default(), &blocks, &evidence).map_err(|e| match e {
        LedgerError::CorruptChain { .. } => Exit(CORRUPT, e.to_string()),
        other => Exit(MISMATCH, other.to_string()),
    })?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} block(s), {} report(s), {failed} failed", blocks.len(), reports.len());
    Ok(if failed == 0 { OK } else { MISMATCH })
}

fn bench_cmd(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<u8, Exit> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Exit(CONFIG, format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SweepConfig>(&text).map_err(|e| Exit(CONFIG, format!("{}: {e}", path.display())))?
        }
        None => SweepConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| Exit(CONFIG, e))?;
    let reports = sweep(&cfg.cells(), &cfg.params, cfg.runs, cfg.seed);
    fs::create_dir_all(out)?;
    let mut csv = Vec::new();
    write_csv(&reports, &mut csv).map_err(|e| Exit(MISMATCH, e.to_string()))?;
    fs::write(out.join("bench.csv"), csv)?;

    println!(
        "{:<5} {:>5} {:>6} {:>10} {:>11} {:>10} {:>8}",
        "topo", "peers", "rate", "tps", "mean ms", "p95 ms", "models/s"
    );
    for r in &reports {
        let a = &r.aggregate;
        println!(
            "{:<5} {:>5} {:>6} {:>10.1} {:>11.1} {:>10.1} {:>8.1}",
            r.topology.label(),
            r.topology.peers,
            r.send_rate,
            a.throughput_tps,
            a.lat_mean_ms,
            a.lat_p95_ms,
            models_per_second(a.throughput_tps)
        );
    }
    println!("wrote {} cell(s) to {}", reports.len(), out.join("bench.csv").display());
    Ok(OK)
}
