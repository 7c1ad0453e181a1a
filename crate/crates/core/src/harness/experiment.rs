//! Experiment presets and CSV artifacts.
//!
//! Every run finishes with a consistency audit (chain validity, replay
//! equality, coin conservation, count identities); an audit failure is an
//! error, not a warning. Independent cells of a sweep run in parallel and
//! are written in cell order, so outputs are byte-stable for a given
//! configuration and seed list.
//!
//! CSV artifacts and their headers:
//!
//! * `beta_sweep.csv`: `beta,seed,acceptance_rate`
//! * `scheduler_cmp.csv`: `scheduler,seed,acceptance_rate`
//! * `scale_sweep.csv`: `scale,scheduler,seed,acceptance_rate`
//! * `metrics.csv`: one `key,value` row per summary metric
//! * `decisions.csv`: `timeslot,request_id,device,level,verdict,price,reason`
//! * `utilization.csv`: `timeslot,cpu,memory,storage,bandwidth`
//! * `credit_traj.csv`: `timeslot,device,credit,balance`
//! * `chain.jsonl`, `events.jsonl`: canonical line-delimited ledger exports

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Scheduler};
use super::metrics::MetricsReport;
use super::world::{HarnessError, World};

/// Outcome of a single audited run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: MetricsReport,
}

fn run_world(config: &ExperimentConfig, collect_details: bool) -> Result<World, HarnessError> {
    let mut world = World::new(config.clone(), collect_details)?;
    world.run()?;
    let audit = world.audit();
    if !audit.ok() {
        return Err(HarnessError::AuditFailed(audit.summary()));
    }
    Ok(world)
}

/// Run one experiment, audit it, and (optionally) write the full artifact
/// set into `out`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<RunOutput, HarnessError> {
    let world = run_world(config, out.is_some())?;
    let metrics = world.metrics();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        world.chain.write_file(&dir.join("chain.jsonl"))?;
        world.bus.write_file(&dir.join("events.jsonl"))?;
        write_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
        write_decisions_csv(&dir.join("decisions.csv"), &world)?;
        write_utilization_csv(&dir.join("utilization.csv"), &world)?;
        write_credit_csv(&dir.join("credit_traj.csv"), &world)?;
    }
    Ok(RunOutput { metrics })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub seed: u64,
    pub acceptance_rate: f64,
}

/// Acceptance rate for each (beta, seed) cell.
pub fn sweep_beta(
    base: &ExperimentConfig,
    betas: &[f64],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, HarnessError> {
    let cells: Vec<(f64, u64)> = betas
        .iter()
        .flat_map(|b| seeds.iter().map(move |s| (*b, *s)))
        .collect();
    let rows = run_cells(&cells, |(beta, seed)| {
        let mut config = base.clone();
        config.beta = *beta;
        config.seed = *seed;
        config.scheduler = Scheduler::Pricing;
        Ok(SweepRow {
            beta: *beta,
            seed: *seed,
            acceptance_rate: run_world(&config, false)?.metrics().acceptance_rate,
        })
    })?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut file = fs::File::create(dir.join("beta_sweep.csv"))?;
        writeln!(file, "beta,seed,acceptance_rate")?;
        for row in &rows {
            writeln!(
                file,
                "{:.2},{},{:.6}",
                row.beta, row.seed, row.acceptance_rate
            )?;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerRow {
    pub scheduler: Scheduler,
    pub seed: u64,
    pub acceptance_rate: f64,
}

/// Acceptance rate of each scheduler at the configured beta.
pub fn compare_schedulers(
    base: &ExperimentConfig,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<SchedulerRow>, HarnessError> {
    let cells: Vec<(Scheduler, u64)> = Scheduler::ALL
        .iter()
        .flat_map(|sched| seeds.iter().map(move |s| (*sched, *s)))
        .collect();
    let rows = run_cells(&cells, |(scheduler, seed)| {
        let mut config = base.clone();
        config.scheduler = *scheduler;
        config.seed = *seed;
        Ok(SchedulerRow {
            scheduler: *scheduler,
            seed: *seed,
            acceptance_rate: run_world(&config, false)?.metrics().acceptance_rate,
        })
    })?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut file = fs::File::create(dir.join("scheduler_cmp.csv"))?;
        writeln!(file, "scheduler,seed,acceptance_rate")?;
        for row in &rows {
            writeln!(
                file,
                "{},{},{:.6}",
                row.scheduler.name(),
                row.seed,
                row.acceptance_rate
            )?;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleRow {
    pub scale: f64,
    pub scheduler: Scheduler,
    pub seed: u64,
    pub acceptance_rate: f64,
}

/// Acceptance rate of each scheduler as the pool capacity shrinks.
pub fn scale_sweep(
    base: &ExperimentConfig,
    scales: &[f64],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<ScaleRow>, HarnessError> {
    let cells: Vec<(f64, Scheduler, u64)> = scales
        .iter()
        .flat_map(|scale| {
            Scheduler::ALL
                .iter()
                .flat_map(move |sched| seeds.iter().map(move |s| (*scale, *sched, *s)))
        })
        .collect();
    let rows = run_cells(&cells, |(scale, scheduler, seed)| {
        let mut config = base.clone();
        config.resource_scale = *scale;
        config.scheduler = *scheduler;
        config.seed = *seed;
        Ok(ScaleRow {
            scale: *scale,
            scheduler: *scheduler,
            seed: *seed,
            acceptance_rate: run_world(&config, false)?.metrics().acceptance_rate,
        })
    })?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut file = fs::File::create(dir.join("scale_sweep.csv"))?;
        writeln!(file, "scale,scheduler,seed,acceptance_rate")?;
        for row in &rows {
            writeln!(
                file,
                "{:.2},{},{},{:.6}",
                row.scale,
                row.scheduler.name(),
                row.seed,
                row.acceptance_rate
            )?;
        }
    }
    Ok(rows)
}

/// Run independent cells in parallel, keeping cell order in the output.
fn run_cells<C: Sync, R: Send>(
    cells: &[C],
    run: impl Fn(&C) -> Result<R, HarnessError> + Sync + Send,
) -> Result<Vec<R>, HarnessError> {
    cells.par_iter().map(run).collect()
}

fn write_metrics_csv(path: &Path, metrics: &MetricsReport) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "key,value")?;
    writeln!(file, "timeslots,{}", metrics.timeslots)?;
    writeln!(file, "submitted,{}", metrics.submitted)?;
    writeln!(file, "accepted,{}", metrics.accepted)?;
    writeln!(file, "denied,{}", metrics.denied)?;
    writeln!(file, "acceptance_rate,{:.6}", metrics.acceptance_rate)?;
    for (i, level) in metrics.per_level.iter().enumerate() {
        writeln!(
            file,
            "level{}_acceptance_rate,{:.6}",
            i + 1,
            level.acceptance_rate()
        )?;
        writeln!(file, "level{}_submitted,{}", i + 1, level.submitted)?;
    }
    for (reason, count) in &metrics.denials {
        writeln!(file, "denied_{reason},{count}")?;
    }
    writeln!(file, "mean_price,{:.6}", metrics.mean_price)?;
    for (i, name) in ["cpu", "memory", "storage", "bandwidth"].iter().enumerate() {
        writeln!(file, "utilization_{name},{:.6}", metrics.mean_utilization[i])?;
    }
    writeln!(file, "blocked_devices,{}", metrics.blocked_devices)?;
    writeln!(file, "blocks,{}", metrics.blocks)?;
    writeln!(file, "transactions,{}", metrics.transactions)?;
    writeln!(file, "mean_block_bytes,{:.2}", metrics.mean_block_bytes)?;
    writeln!(
        file,
        "dropped_blocked_events,{}",
        metrics.dropped_blocked_events
    )?;
    writeln!(file, "clamped_refunds,{}", metrics.clamped_refunds)?;
    Ok(())
}

fn write_decisions_csv(path: &Path, world: &World) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(file, "timeslot,request_id,device,level,verdict,price,reason")?;
    for row in &world.decision_rows {
        writeln!(
            file,
            "{},{},{},{},{},{},{}",
            row.timeslot,
            row.request_id,
            row.device,
            row.level,
            if row.accepted { "accept" } else { "deny" },
            row.price.map(|p| format!("{p:.6}")).unwrap_or_default(),
            row.reason.unwrap_or(""),
        )?;
    }
    file.flush()
}

fn write_utilization_csv(path: &Path, world: &World) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(file, "timeslot,cpu,memory,storage,bandwidth")?;
    for (t, used) in &world.utilization_rows {
        writeln!(
            file,
            "{t},{:.6},{:.6},{:.6},{:.6}",
            used[0], used[1], used[2], used[3]
        )?;
    }
    file.flush()
}

fn write_credit_csv(path: &Path, world: &World) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(file, "timeslot,device,credit,balance")?;
    for (t, device, credit, balance) in &world.credit_rows {
        writeln!(file, "{t},{device},{credit},{balance}")?;
    }
    file.flush()
}
