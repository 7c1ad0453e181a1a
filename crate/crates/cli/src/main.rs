//! Experiment runner.
//!
//! Subcommands map to the evaluation presets: `run` executes one simulation
//! and writes the full artifact set, `sweep-beta` / `compare` / `scale`
//! reproduce the acceptance-rate experiments, and `replay` rebuilds state
//! from a chain file and audits it. Exit codes: 0 success, 1 configuration
//! or input error, 2 audit or consistency failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use edgemeter_core::harness::{
    compare_schedulers, config::ExperimentConfig, run_experiment, scale_sweep, sweep_beta,
    HarnessError, Scheduler,
};
use edgemeter_core::ledger::Chain;
use edgemeter_core::state::replay_chain;

#[derive(Parser)]
#[command(name = "edgemeter", version, about = "Edge resource metering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (also settable via EDGEMETER_OUT).
    #[arg(long, global = true, env = "EDGEMETER_OUT")]
    out: Option<PathBuf>,

    /// Single seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Seed list for multi-seed presets, e.g. --seeds 1,2,3
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Priority influence factor override.
    #[arg(long, global = true)]
    beta: Option<f64>,

    /// Scheduler override: pricing, fcfs, or priority.
    #[arg(long, global = true)]
    scheduler: Option<String>,

    /// Capacity scale override in (0, 1].
    #[arg(long, global = true)]
    scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment and write metrics, traces, and the chain.
    Run {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Acceptance rate of the pricing scheduler over a beta grid.
    SweepBeta {
        #[command(flatten)]
        common: CommonOpts,
        /// Explicit beta grid, e.g. --betas 1.0,1.35,2.0
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Acceptance comparison of pricing vs FCFS vs priority scheduling.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Scheduler comparison as pool capacity scales down.
    Scale {
        #[command(flatten)]
        common: CommonOpts,
        /// Explicit scale list, e.g. --scales 1.0,0.8,0.6,0.4
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
    },
    /// Rebuild state from a chain file and audit it.
    Replay {
        /// Path to a chain.jsonl written by a previous run.
        chain_file: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Audit(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(1),
            CliError::Audit(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Audit(m) => m,
        }
    }
}

fn config_err(message: impl Into<String>) -> CliError {
    CliError::Config(message.into())
}

impl From<HarnessError> for CliError {
    fn from(err: HarnessError) -> Self {
        match err {
            HarnessError::AuditFailed(m) => CliError::Audit(format!("run audit failed: {m}")),
            HarnessError::Consistency(m) => CliError::Audit(format!("internal consistency: {m}")),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        None => ExperimentConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(beta) = common.beta {
        config.beta = beta;
    }
    if let Some(name) = &common.scheduler {
        config.scheduler = name.parse::<Scheduler>().map_err(config_err)?;
    }
    if let Some(scale) = common.scale {
        config.resource_scale = scale;
    }
    config.validate().map_err(|e| config_err(e.to_string()))?;
    Ok(config)
}

fn seeds_for(common: &CommonOpts, config: &ExperimentConfig) -> Vec<u64> {
    if let Some(seeds) = &common.seeds {
        if !seeds.is_empty() {
            return seeds.clone();
        }
    }
    if let Some(seed) = common.seed {
        return vec![seed];
    }
    let mut seeds = ExperimentConfig::default_seeds();
    if !seeds.contains(&config.seed) {
        seeds[0] = config.seed;
    }
    seeds
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    config_path: Option<String>,
    out_dir: String,
    seeds: &'a [u64],
}

/// Write the manifest and a resolved config copy before the run; this also
/// proves the output directory is writable before any simulation starts.
fn prepare_out_dir(
    subcommand: &str,
    common: &CommonOpts,
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Result<PathBuf, CliError> {
    let dir = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(subcommand));
    std::fs::create_dir_all(&dir)
        .map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))?;
    let manifest = RunManifest {
        tool: "edgemeter",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config_path: common
            .config
            .as_ref()
            .map(|p| p.display().to_string()),
        out_dir: dir.display().to_string(),
        seeds,
    };
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), manifest_json)
        .map_err(|e| config_err(format!("output dir not writable: {e}")))?;
    let config_toml = toml::to_string_pretty(config).expect("config serializes");
    std::fs::write(dir.join("config.toml"), config_toml)
        .map_err(|e| config_err(format!("output dir not writable: {e}")))?;
    Ok(dir)
}

fn cmd_run(common: &CommonOpts) -> Result<(), CliError> {
    let config = load_config(common)?;
    let seeds = [config.seed];
    let dir = prepare_out_dir("run", common, &config, &seeds)?;
    let output = run_experiment(&config, Some(&dir))?;
    let m = &output.metrics;
    println!(
        "run: seed {} | {} slots | {} submitted | {} accepted | acceptance {:.4}",
        config.seed, m.timeslots, m.submitted, m.accepted, m.acceptance_rate
    );
    println!(
        "     {} blocks | {} txs | mean block {:.0} B | blocked devices {} | mean price {:.2}",
        m.blocks, m.transactions, m.mean_block_bytes, m.blocked_devices, m.mean_price
    );
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_sweep_beta(common: &CommonOpts, betas: Option<Vec<f64>>) -> Result<(), CliError> {
    let config = load_config(common)?;
    let seeds = seeds_for(common, &config);
    let betas = betas.unwrap_or_else(ExperimentConfig::beta_grid);
    if betas.is_empty() {
        return Err(config_err("beta grid must be nonempty"));
    }
    let dir = prepare_out_dir("sweep-beta", common, &config, &seeds)?;
    let rows = sweep_beta(&config, &betas, &seeds, Some(&dir))?;
    let mut means: BTreeMap<String, (f64, u32)> = BTreeMap::new();
    for row in &rows {
        let entry = means.entry(format!("{:.2}", row.beta)).or_insert((0.0, 0));
        entry.0 += row.acceptance_rate;
        entry.1 += 1;
    }
    println!("beta,mean_acceptance_rate ({} seeds)", seeds.len());
    for (beta, (sum, n)) in &means {
        println!("{beta},{:.4}", sum / *n as f64);
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_compare(common: &CommonOpts) -> Result<(), CliError> {
    let config = load_config(common)?;
    let seeds = seeds_for(common, &config);
    let dir = prepare_out_dir("compare", common, &config, &seeds)?;
    let rows = compare_schedulers(&config, &seeds, Some(&dir))?;
    for scheduler in Scheduler::ALL {
        let cells: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheduler == scheduler)
            .map(|r| r.acceptance_rate)
            .collect();
        let mean = cells.iter().sum::<f64>() / cells.len() as f64;
        println!("{}: mean acceptance {:.4}", scheduler.name(), mean);
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_scale(common: &CommonOpts, scales: Option<Vec<f64>>) -> Result<(), CliError> {
    let config = load_config(common)?;
    let seeds = seeds_for(common, &config);
    let scales = scales.unwrap_or_else(ExperimentConfig::scale_grid);
    if scales.is_empty() {
        return Err(config_err("scale list must be nonempty"));
    }
    for scale in &scales {
        if !(*scale > 0.0 && *scale <= 1.0) {
            return Err(config_err(format!("scale must be in (0, 1], got {scale}")));
        }
    }
    let dir = prepare_out_dir("scale", common, &config, &seeds)?;
    let rows = scale_sweep(&config, &scales, &seeds, Some(&dir))?;
    println!("scale,scheduler,mean_acceptance_rate");
    for scale in &scales {
        for scheduler in Scheduler::ALL {
            let cells: Vec<f64> = rows
                .iter()
                .filter(|r| r.scale == *scale && r.scheduler == scheduler)
                .map(|r| r.acceptance_rate)
                .collect();
            let mean = cells.iter().sum::<f64>() / cells.len() as f64;
            println!("{scale:.2},{},{mean:.4}", scheduler.name());
        }
    }
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_replay(chain_file: &Path) -> Result<(), CliError> {
    let chain = Chain::read_file(chain_file)
        .map_err(|e| CliError::Audit(format!("cannot load chain: {e}")))?;
    let audit = chain.validate_chain();
    if !audit.valid {
        return Err(CliError::Audit(format!(
            "chain invalid at height {:?}",
            audit.first_violation
        )));
    }
    let state = replay_chain(&chain)
        .map_err(|e| CliError::Audit(format!("replay failed: {e}")))?;
    if !state.coins_conserved() {
        return Err(CliError::Audit("coin conservation violated".into()));
    }
    let devices = state.devices();
    let blocked = devices.values().filter(|d| d.is_blocked).count();
    let legacy = devices.values().filter(|d| d.legacy).count();
    let balance_total: edgemeter_core::coins::Coins =
        devices.values().map(|d| d.coin_balance).sum();
    let tx_count: usize = chain.blocks.iter().map(|b| b.tx_list.len()).sum();
    println!(
        "chain: {} blocks, {tx_count} txs, difficulty {} bits, id {:?}",
        chain.blocks.len(),
        chain.genesis_config.difficulty_bits,
        chain.genesis_config.chain_id
    );
    println!(
        "registry: {} devices ({legacy} legacy, {blocked} blocked)",
        devices.len()
    );
    println!(
        "coins: device total {balance_total}, edge revenue {}",
        state.revenue()
    );
    if let Some(alloc) = state.allocation() {
        println!(
            "decisions: {} recorded, {} accepted | minted {}",
            alloc.decisions, alloc.accepted, alloc.minted
        );
    }
    let mean_credit = if devices.is_empty() {
        0.0
    } else {
        devices.values().map(|d| d.credit as f64).sum::<f64>() / devices.len() as f64
    };
    println!("credit: mean {mean_credit:.1}");
    println!("audit: pass (hash chain, replay fold, coin conservation)");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => cmd_run(common),
        Command::SweepBeta { common, betas } => cmd_sweep_beta(common, betas.clone()),
        Command::Compare { common } => cmd_compare(common),
        Command::Scale { common, scales } => cmd_scale(common, scales.clone()),
        Command::Replay { chain_file } => cmd_replay(chain_file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.exit_code()
        }
    }
}
