//! Experiment runner CLI: parse a config or preset, run seeded multi-round
//! simulations for one or all protocols, and emit per-round CSVs plus a
//! summary report.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Parser;

use hybridfl_core::config::{ProtocolKind, SimConfig};
use hybridfl_core::runner::{
    aggregate, compare_protocols, emit_report, ExperimentSpec, StopRule,
};

#[derive(Parser, Debug)]
#[command(
    name = "hybridfl",
    about = "Deterministic simulator of federated learning over a cloud/edge/client topology"
)]
struct Args {
    /// Flat key=value config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in preset: fig2 | task1 | task2-small | task2.
    #[arg(long)]
    preset: Option<String>,

    /// Protocol to run: hybridfl | fedavg | hierfavg | all.
    #[arg(long, default_value = "all")]
    protocol: String,

    /// Root RNG seed of the first repeat.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Number of repeats (seeds seed..seed+N-1); results reported mean ± std.
    #[arg(long, default_value_t = 5)]
    repeats: usize,

    /// Output directory for per-round CSVs and the summary report.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Stop after exactly N rounds (default: the config's t_max).
    #[arg(long, conflicts_with_all = ["stop_metric", "stop_loss"])]
    stop_rounds: Option<usize>,

    /// Stop when the best global metric reaches this value.
    #[arg(long, conflicts_with = "stop_loss")]
    stop_metric: Option<f64>,

    /// Stop when the best global loss drops to this value.
    #[arg(long)]
    stop_loss: Option<f64>,

    /// Model cloud-edge transfers as parallel across edges (divides the
    /// backhaul term by the number of edges).
    #[arg(long, default_value_t = false)]
    parallel_backhaul: bool,

    /// Rayon worker threads (0 = library default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .context("configuring thread pool")?;
    }

    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => SimConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        (None, Some(name)) => SimConfig::preset(name)?,
        (None, None) => bail!("provide --config or --preset"),
    };
    cfg.seed = args.seed;
    if args.parallel_backhaul {
        cfg.parallel_backhaul = true;
    }

    let stop = match (args.stop_rounds, args.stop_metric, args.stop_loss) {
        (Some(t), _, _) => StopRule::MaxRounds(t),
        (None, Some(x), _) => StopRule::TargetMetric(x),
        (None, None, Some(x)) => StopRule::TargetLoss(x),
        (None, None, None) => StopRule::MaxRounds(cfg.t_max),
    };

    let protocols: Vec<ProtocolKind> = match args.protocol.as_str() {
        "hybridfl" => vec![ProtocolKind::HybridFl],
        "fedavg" => vec![ProtocolKind::FedAvg],
        "hierfavg" => vec![ProtocolKind::HierFavg { kappa2: 10 }],
        "all" => vec![
            ProtocolKind::HybridFl,
            ProtocolKind::FedAvg,
            ProtocolKind::HierFavg { kappa2: 10 },
        ],
        other => bail!("unknown protocol '{other}'"),
    };

    let label = args
        .preset
        .clone()
        .or_else(|| {
            args.config
                .as_ref()
                .and_then(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        })
        .unwrap_or_else(|| "run".into());
    let spec = ExperimentSpec {
        cfg,
        stop,
        repeats: args.repeats,
        base_seed: args.seed,
        out_dir: Some(args.out.clone()),
        label: label.clone(),
    };

    let results = compare_protocols(&spec, &protocols)?;
    let aggregates: Vec<_> = results.iter().map(|(_, runs)| aggregate(runs)).collect();
    let report = emit_report(&args.out, &label, &aggregates)?;

    for a in &aggregates {
        let reached = if a.reached == a.repeats {
            format!("{:.1}", a.rounds_to_target.mean)
        } else if a.reached == 0 {
            "not reached".into()
        } else {
            format!("{:.1} ({}/{} runs)", a.rounds_to_target.mean, a.reached, a.repeats)
        };
        println!(
            "{:<10} best metric {:.4} ± {:.4} | round length {:.2} s | total time {:.1} s | rounds to target: {}",
            a.protocol,
            a.best_metric.mean,
            a.best_metric.std,
            a.avg_round_len.mean,
            a.total_time.mean,
            reached
        );
    }
    println!("report: {}", report.display());
    Ok(())
}
