//! Experiment orchestration: seeded multi-round runs with stop rules,
//! per-round CSV logs, repeat aggregation, protocol comparison, and report
//! emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ProtocolKind, SimConfig};
use crate::error::{Result, SimError};
use crate::model::{evaluate, loss_for};
use crate::protocol::Engine;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run exactly this many rounds.
    MaxRounds(usize),
    /// Stop once the best-so-far global loss reaches the target (capped at
    /// the config's t_max).
    TargetLoss(f64),
    /// Stop once the best-so-far global metric reaches the target (capped at
    /// the config's t_max).
    TargetMetric(f64),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub cfg: SimConfig,
    pub stop: StopRule,
    pub repeats: usize,
    pub base_seed: u64,
    /// When set, one per-round CSV is written per repeat.
    pub out_dir: Option<PathBuf>,
    /// File-name stem for outputs.
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub protocol: String,
    pub seed: u64,
    pub rounds_run: usize,
    pub best_metric: f64,
    pub best_loss: f64,
    pub avg_round_len: f64,
    /// Σ of round lengths over the whole run (s).
    pub total_time: f64,
    /// First round at which the stop target was met, if it was a target rule.
    pub rounds_to_target: Option<usize>,
    pub time_to_target: Option<f64>,
    pub energy_to_target_j: Option<f64>,
    /// Total device energy over the run (J).
    pub energy_total_j: f64,
    /// Final slack estimates per region.
    pub theta_hat: Vec<f64>,
    pub csv: String,
    pub csv_path: Option<PathBuf>,
}

pub const CSV_HEADER: &str =
    "protocol,t,r,C_r,U_r,X_r,S_r,q_r,theta_hat,EDC_r,round_len,cum_energy,global_loss,global_metric";

fn target_met(stop: StopRule, best_loss: f64, best_metric: f64) -> bool {
    match stop {
        StopRule::MaxRounds(_) => false,
        StopRule::TargetLoss(x) => best_loss <= x,
        StopRule::TargetMetric(x) => best_metric >= x,
    }
}

/// One deterministic run: (config, seed) fully determine every output byte.
pub fn run_single(cfg: &SimConfig, stop: StopRule, seed: u64) -> Result<RunSummary> {
    let mut eng = Engine::new(cfg.clone(), seed)?;
    let loss_kind = loss_for(eng.topo.dataset.task);
    let max_rounds = match stop {
        StopRule::MaxRounds(t) => t,
        _ => cfg.t_max,
    };

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let init_eval = evaluate(&eng.global, &eng.topo.dataset, loss_kind);
    let mut best_loss = init_eval.loss;
    let mut best_metric = init_eval.metric;
    let mut total_time = 0.0;
    let mut cum_energy = 0.0;
    let mut rounds_to_target = None;
    let mut time_to_target = None;
    let mut energy_to_target = None;
    let mut rounds_run = 0;

    for t in 1..=max_rounds {
        let out = eng.run_round(t)?;
        rounds_run = t;
        total_time += out.round_len;
        cum_energy += out.energy;
        let eval = evaluate(&out.global, &eng.topo.dataset, loss_kind);
        best_loss = best_loss.min(eval.loss);
        best_metric = best_metric.max(eval.metric);
        for rs in &out.regions {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                cfg.protocol.name(),
                t,
                rs.region,
                rs.decision.c_r,
                rs.u_r.len(),
                rs.x_r.len(),
                rs.s_r.len(),
                rs.q_r,
                rs.theta_hat,
                rs.edc_r,
                out.round_len,
                cum_energy,
                eval.loss,
                eval.metric
            )
            .expect("string write");
        }
        if rounds_to_target.is_none() && target_met(stop, best_loss, best_metric) {
            rounds_to_target = Some(t);
            time_to_target = Some(total_time);
            energy_to_target = Some(cum_energy);
            break;
        }
    }

    let theta_hat = eng
        .histories
        .iter()
        .map(crate::estimator::estimate_theta)
        .collect();
    Ok(RunSummary {
        protocol: cfg.protocol.name().to_string(),
        seed,
        rounds_run,
        best_metric,
        best_loss,
        avg_round_len: if rounds_run > 0 {
            total_time / rounds_run as f64
        } else {
            0.0
        },
        total_time,
        rounds_to_target,
        time_to_target,
        energy_to_target_j: energy_to_target,
        energy_total_j: cum_energy,
        theta_hat,
        csv,
        csv_path: None,
    })
}

/// Run all repeats (in parallel; outputs merged in repeat order) and write
/// one CSV per repeat when an output directory is configured.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunSummary>> {
    let seeds: Vec<u64> = (0..spec.repeats as u64).map(|i| spec.base_seed + i).collect();
    let mut summaries: Vec<RunSummary> = seeds
        .par_iter()
        .map(|&seed| run_single(&spec.cfg, spec.stop, seed))
        .collect::<Result<_>>()?;
    if let Some(dir) = &spec.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| SimError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        for s in &mut summaries {
            let path = dir.join(format!("{}_{}_seed{}.csv", spec.label, s.protocol, s.seed));
            std::fs::write(&path, &s.csv).map_err(|e| SimError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            s.csv_path = Some(path);
        }
    }
    Ok(summaries)
}

/// Run the same spec under several protocols. The world (topology, data,
/// profiles) is identical across protocols for a given seed; only the
/// protocol-namespaced selection/drop-out substreams differ.
pub fn compare_protocols(
    spec: &ExperimentSpec,
    protocols: &[ProtocolKind],
) -> Result<Vec<(ProtocolKind, Vec<RunSummary>)>> {
    protocols
        .iter()
        .map(|&p| {
            let mut s = spec.clone();
            s.cfg = spec.cfg.with_protocol(p);
            Ok((p, run_experiment(&s)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone)]
pub struct AggregateSummary {
    pub protocol: String,
    pub repeats: usize,
    pub best_metric: MeanStd,
    pub best_loss: MeanStd,
    pub avg_round_len: MeanStd,
    pub total_time: MeanStd,
    /// Over repeats that reached the target; `reached` counts them.
    pub rounds_to_target: MeanStd,
    pub time_to_target: MeanStd,
    pub energy_to_target_j: MeanStd,
    pub reached: usize,
}

pub fn aggregate(summaries: &[RunSummary]) -> AggregateSummary {
    let collect = |f: &dyn Fn(&RunSummary) -> f64| -> Vec<f64> {
        summaries.iter().map(f).collect()
    };
    let reached: Vec<&RunSummary> = summaries
        .iter()
        .filter(|s| s.rounds_to_target.is_some())
        .collect();
    let reached_vals = |f: &dyn Fn(&RunSummary) -> f64| -> Vec<f64> {
        reached.iter().map(|s| f(s)).collect()
    };
    AggregateSummary {
        protocol: summaries
            .first()
            .map(|s| s.protocol.clone())
            .unwrap_or_default(),
        repeats: summaries.len(),
        best_metric: mean_std(&collect(&|s| s.best_metric)),
        best_loss: mean_std(&collect(&|s| s.best_loss)),
        avg_round_len: mean_std(&collect(&|s| s.avg_round_len)),
        total_time: mean_std(&collect(&|s| s.total_time)),
        rounds_to_target: mean_std(&reached_vals(&|s| s.rounds_to_target.unwrap() as f64)),
        time_to_target: mean_std(&reached_vals(&|s| s.time_to_target.unwrap())),
        energy_to_target_j: mean_std(&reached_vals(&|s| s.energy_to_target_j.unwrap())),
        reached: reached.len(),
    }
}

/// Write a summary CSV plus a plain-text table; deterministic and idempotent.
pub fn emit_report(dir: &Path, label: &str, aggregates: &[AggregateSummary]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut csv = String::from(
        "protocol,repeats,best_metric,best_metric_std,best_loss,avg_round_len,total_time,rounds_to_target,time_to_target,energy_to_target_j,reached\n",
    );
    let mut txt = format!(
        "{:<10} {:>8} {:>12} {:>12} {:>14} {:>16} {:>16}\n",
        "protocol", "repeats", "best_metric", "round_len", "total_time", "rounds_to_tgt", "reached"
    );
    for a in aggregates {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            a.protocol,
            a.repeats,
            a.best_metric.mean,
            a.best_metric.std,
            a.best_loss.mean,
            a.avg_round_len.mean,
            a.total_time.mean,
            a.rounds_to_target.mean,
            a.time_to_target.mean,
            a.energy_to_target_j.mean,
            a.reached
        )
        .expect("string write");
        writeln!(
            txt,
            "{:<10} {:>8} {:>12.4} {:>12.2} {:>14.2} {:>16.1} {:>16}",
            a.protocol,
            a.repeats,
            a.best_metric.mean,
            a.avg_round_len.mean,
            a.total_time.mean,
            a.rounds_to_target.mean,
            a.reached
        )
        .expect("string write");
    }
    let csv_path = dir.join(format!("{label}_summary.csv"));
    let txt_path = dir.join(format!("{label}_summary.txt"));
    for (path, content) in [(&csv_path, &csv), (&txt_path, &txt)] {
        std::fs::write(path, content).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(csv_path)
}
