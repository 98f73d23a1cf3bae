//! Acceptance gate: quantitative end-to-end checks of the simulator.
//!
//! Each criterion prints exactly one `criterion N: PASS/FAIL — detail` line;
//! the test fails at the end if any criterion failed. Criteria 3 and 4 share
//! one 9-cell protocol-comparison grid (the expensive part of the gate).

use std::time::Instant;

use hybridfl_core::analysis::{verify_theorem1_empirically, ObjectiveSnapshot, Quadratic};
use hybridfl_core::config::{ProtocolKind, SimConfig};
use hybridfl_core::data::{synthesize_classification, synthesize_regression, Dataset};
use hybridfl_core::estimator::{expected_survivors_mc, lse_theta, RegionHistory};
use hybridfl_core::model::{
    finite_difference_gradient, loss_for, mean_loss_gradient, Arch, ModelParams,
};
use hybridfl_core::protocol::{cloud_aggregate, edc, flatten_weights, regional_aggregate, Engine};
use hybridfl_core::rng::RngFactory;
use hybridfl_core::runner::{run_experiment, run_single, ExperimentSpec, StopRule};
use hybridfl_core::simclock::{straggler_limit, TimingParams};
use hybridfl_core::config::Gaussian;
use rand::Rng;

struct Gate {
    failures: Vec<String>,
}

impl Gate {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!(
            "criterion {name}: {} — {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failures.push(name.to_string());
        }
    }
}

// ---------------------------------------------------------------- criterion 1

/// Two-region trace reproduction: slack-estimate fixed points 0.46/0.63 and realized
/// participation 0.30 per region, averaged over 10 seeds, under a minute.
fn criterion_1(g: &mut Gate) {
    let start = Instant::now();
    let cfg = SimConfig::fig2();
    let n_r = [11.0, 9.0];
    let seeds = 10u64;
    let mut theta = [0.0f64; 2];
    let mut part = [0.0f64; 2];
    for seed in 1..=seeds {
        let mut eng = Engine::new(cfg.clone(), seed).expect("fig2 engine");
        for t in 1..=cfg.t_max {
            let out = eng.run_round(t).expect("fig2 round");
            for rs in &out.regions {
                if t > cfg.t_max - 30 {
                    theta[rs.region] += rs.theta_hat;
                }
                if t > cfg.t_max - 50 {
                    part[rs.region] += rs.x_r.len() as f64 / n_r[rs.region];
                }
            }
        }
    }
    for v in &mut theta {
        *v /= (30 * seeds) as f64;
    }
    for v in &mut part {
        *v /= (50 * seeds) as f64;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = (theta[0] - 0.46).abs() <= 0.05
        && (theta[1] - 0.63).abs() <= 0.05
        && (part[0] - 0.30).abs() <= 0.05
        && (part[1] - 0.30).abs() <= 0.05
        && elapsed < 60.0;
    g.check(
        "1",
        pass,
        format!(
            "theta_hat last-30 means {:.4}/{:.4} (0.46/0.63 ± 0.05), \
             |X_r|/n_r last-50 means {:.4}/{:.4} (0.30 ± 0.05), {:.1}s (< 60s)",
            theta[0], theta[1], part[0], part[1], elapsed
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

/// Response-time-limit reconstruction from the two tasks' constants.
fn criterion_2(g: &mut Gate) {
    let task2 = TimingParams {
        msize: 8e7,
        br: 1e9,
        snr: 100.0,
        bps: 6272.0,
        cpb: 400.0,
        tau: 5,
        t_lim: 0.0,
    };
    let t2 = straggler_limit(140.0, Gaussian::new(1.0, 0.3), Gaussian::new(1.0, 0.3), &task2)
        .expect("task2 T_lim");
    let task1 = TimingParams {
        msize: 4e7,
        br: 1e9,
        snr: 100.0,
        bps: 384.0,
        cpb: 300.0,
        tau: 5,
        t_lim: 0.0,
    };
    let t1 = straggler_limit(100.2, Gaussian::new(0.5, 0.1), Gaussian::new(0.5, 0.1), &task1)
        .expect("task1 T_lim");
    let pass = (t2 - 378.02).abs() <= 0.01 && (t1 - 90.40).abs() <= 0.05;
    g.check(
        "2",
        pass,
        format!("T_lim task2 {t2:.4}s (378.02 ± 0.01), task1 {t1:.4}s (90.40 ± 0.05)"),
    );
}

// ------------------------------------------------------- criteria 3 & 4: grid

const GRID_C: [f64; 3] = [0.1, 0.3, 0.5];
const GRID_DR: [f64; 3] = [0.1, 0.3, 0.6];
const GRID_SEEDS: u64 = 5;
const GRID_TMAX: usize = 600;
const PROTOCOLS: [ProtocolKind; 3] = [
    ProtocolKind::HybridFl,
    ProtocolKind::FedAvg,
    ProtocolKind::HierFavg { kappa2: 10 },
];

/// Per-round trajectory reconstructed from a run's CSV log.
struct Trace {
    loss: Vec<f64>,
    cum_time: Vec<f64>,
    cum_energy: Vec<f64>,
}

fn parse_trace(csv: &str) -> Trace {
    let mut loss = Vec::new();
    let mut cum_time = Vec::new();
    let mut cum_energy = Vec::new();
    let mut last_t = 0usize;
    let mut running = 0.0;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let t: usize = f[1].parse().expect("round index");
        if t != last_t {
            running += f[10].parse::<f64>().expect("round_len");
            loss.push(f[12].parse().expect("global_loss"));
            cum_time.push(running);
            cum_energy.push(f[11].parse().expect("cum_energy"));
            last_t = t;
        }
    }
    Trace {
        loss,
        cum_time,
        cum_energy,
    }
}

/// First crossing of the loss target: (round, elapsed time, elapsed energy).
/// A run that never reaches the target scores t_max + 1 rounds and its full
/// time/energy expenditure.
fn to_target(tr: &Trace, target: f64) -> (f64, f64, f64) {
    for i in 0..tr.loss.len() {
        if tr.loss[i] <= target {
            return ((i + 1) as f64, tr.cum_time[i], tr.cum_energy[i]);
        }
    }
    (
        (GRID_TMAX + 1) as f64,
        *tr.cum_time.last().expect("nonempty trace"),
        *tr.cum_energy.last().expect("nonempty trace"),
    )
}

#[derive(Clone, Copy, Default)]
struct CellStats {
    round_len: f64,
    rtt: f64,
    time: f64,
    energy: f64,
}

/// 9-cell × 3-protocol comparison at Task-1 scale; means over 5 seeds with
/// the per-seed target set to the loss of that seed's final FedAvg model.
fn run_grid() -> Vec<[CellStats; 3]> {
    let mut cells = Vec::new();
    for &dr in &GRID_DR {
        for &c in &GRID_C {
            let mut base = SimConfig::task1();
            base.c = c;
            base.dropout.mean = dr;
            base.eta = 0.05;
            let mut traces: Vec<Vec<Trace>> = Vec::new();
            let mut lens: Vec<f64> = vec![0.0; PROTOCOLS.len()];
            for (pi, &p) in PROTOCOLS.iter().enumerate() {
                let cfg = base.with_protocol(p);
                let mut per_seed = Vec::new();
                for seed in 1..=GRID_SEEDS {
                    let s = run_single(&cfg, StopRule::MaxRounds(GRID_TMAX), seed)
                        .expect("grid run");
                    lens[pi] += s.avg_round_len / GRID_SEEDS as f64;
                    per_seed.push(parse_trace(&s.csv));
                }
                traces.push(per_seed);
            }
            let mut stats = [CellStats::default(); 3];
            for (pi, per_seed) in traces.iter().enumerate() {
                stats[pi].round_len = lens[pi];
                for (si, tr) in per_seed.iter().enumerate() {
                    let target = *traces[1][si].loss.last().expect("fedavg trace");
                    let (r, t, e) = to_target(tr, target);
                    stats[pi].rtt += r / GRID_SEEDS as f64;
                    stats[pi].time += t / GRID_SEEDS as f64;
                    stats[pi].energy += e / GRID_SEEDS as f64;
                }
            }
            cells.push(stats);
        }
    }
    cells
}

/// Cell index for (C, E[dr]) in the row-major {dr} × {C} layout.
fn cell_index(c: f64, dr: f64) -> usize {
    let ci = GRID_C.iter().position(|&x| x == c).expect("C value");
    let di = GRID_DR.iter().position(|&x| x == dr).expect("dr value");
    di * GRID_C.len() + ci
}

fn criterion_3(g: &mut Gate, grid: &[[CellStats; 3]], grid_secs: f64) {
    let len_wins = grid
        .iter()
        .filter(|s| s[0].round_len < s[1].round_len && s[0].round_len < s[2].round_len)
        .count();
    let rtt_wins = grid
        .iter()
        .filter(|s| s[0].rtt <= s[1].rtt && s[0].rtt <= s[2].rtt)
        .count();
    let hard = &grid[cell_index(0.1, 0.6)];
    let time_ratio = hard[0].time / hard[1].time;
    let pass = len_wins == 9 && rtt_wins >= 8 && time_ratio <= 1.0 / 3.0 && grid_secs < 1800.0;
    g.check(
        "3",
        pass,
        format!(
            "round length lowest in {len_wins}/9 cells (need 9), rounds-to-target best in \
             {rtt_wins}/9 (need ≥ 8), time ratio vs FedAvg at (C=0.1, E[dr]=0.6) \
             {time_ratio:.3} (need ≤ 0.333), grid {grid_secs:.0}s (< 1800s)"
        ),
    );
}

fn criterion_4(g: &mut Gate, grid: &[[CellStats; 3]]) {
    let energy_wins = grid
        .iter()
        .filter(|s| s[0].energy < s[1].energy && s[0].energy < s[2].energy)
        .count();
    let hard = &grid[cell_index(0.1, 0.6)];
    let energy_ratio = hard[0].energy / hard[1].energy;
    let pass = energy_wins == 9 && energy_ratio <= 0.60;
    g.check(
        "4",
        pass,
        format!(
            "energy to target lowest in {energy_wins}/9 cells (need 9), ratio vs FedAvg at \
             (C=0.1, E[dr]=0.6) {energy_ratio:.3} (need ≤ 0.60)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 5

fn random_model(arch: &Arch, rng: &mut impl Rng) -> ModelParams {
    let mut mp = ModelParams::zeros(arch.clone());
    for t in &mut mp.theta {
        *t = rng.gen_range(-1.0..1.0);
    }
    mp
}

/// Two-level (regional then cloud) aggregation must equal the flattened
/// per-client weighting, and the flattened weights must sum to 1.
fn criterion_5(g: &mut Gate) {
    let factory = RngFactory::new(99);
    let mut rng = factory.stream("acceptance/aggregation", &[]);
    let arch = Arch::new(3, &[4], 1);
    let mut max_err = 0.0f64;
    let mut max_wsum_err = 0.0f64;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=4);
        let sizes: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                (0..rng.gen_range(1..=6))
                    .map(|_| rng.gen_range(1..=50))
                    .collect()
            })
            .collect();
        let models: Vec<Vec<ModelParams>> = sizes
            .iter()
            .map(|row| row.iter().map(|_| random_model(&arch, &mut rng)).collect())
            .collect();
        // Random fresh-submitter subsets with at least one fresh client.
        let fresh: Vec<Vec<bool>> = loop {
            let f: Vec<Vec<bool>> = sizes
                .iter()
                .map(|row| row.iter().map(|_| rng.gen_bool(0.6)).collect())
                .collect();
            if f.iter().flatten().any(|&b| b) {
                break f;
            }
        };
        let edcs: Vec<f64> = sizes
            .iter()
            .zip(&fresh)
            .map(|(row, fr)| {
                let submitters: Vec<usize> = row
                    .iter()
                    .zip(fr)
                    .filter(|(_, &f)| f)
                    .map(|(&s, _)| s)
                    .collect();
                edc(&submitters)
            })
            .collect();
        let regionals: Vec<ModelParams> = sizes
            .iter()
            .zip(&models)
            .map(|(row, ms)| {
                let refs: Vec<&ModelParams> = ms.iter().collect();
                regional_aggregate(&refs, row).expect("regional aggregate")
            })
            .collect();
        let regional_refs: Vec<&ModelParams> = regionals.iter().collect();
        let prev = random_model(&arch, &mut rng);
        let two_level = cloud_aggregate(&regional_refs, &edcs, &prev).expect("cloud aggregate");
        let gammas = flatten_weights(&edcs, &sizes).expect("flatten weights");
        let mut flat = vec![0.0; arch.param_count()];
        for (grow, mrow) in gammas.iter().zip(&models) {
            for (&gamma, mp) in grow.iter().zip(mrow) {
                for (acc, &x) in flat.iter_mut().zip(&mp.theta) {
                    *acc += gamma * x;
                }
            }
        }
        for (a, b) in two_level.theta.iter().zip(&flat) {
            max_err = max_err.max((a - b).abs());
        }
        let wsum: f64 = gammas.iter().flatten().sum();
        max_wsum_err = max_wsum_err.max((wsum - 1.0).abs());
    }
    let pass = max_err <= 1e-12 && max_wsum_err <= 1e-12;
    g.check(
        "5",
        pass,
        format!(
            "1000 round states: max |two-level − flattened| {max_err:.2e} (≤ 1e-12), \
             max |Σγ − 1| {max_wsum_err:.2e} (≤ 1e-12)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

/// Grid-refinement minimizer of the slack least-squares objective
/// J(θ) = Σ_i (|S_r(i)| − θ·n_r·C_r(i)·q_r(i))²; brute-force oracle.
///
/// Candidates are compared through the algebraically expanded difference
/// J(θ_a) − J(θ_b) = Σ_i (θ_b − θ_a)·n·x_i·(2·s_i − (θ_a + θ_b)·n·x_i),
/// which stays fully precise near the minimum where direct evaluation of J
/// loses the comparison to cancellation against the residual floor.
fn brute_force_theta(h: &RegionHistory) -> f64 {
    let n = h.n_r as f64;
    // J(cand) − J(best): negative means the candidate is strictly better.
    let delta = |cand: f64, best: f64| -> f64 {
        h.c_r
            .iter()
            .zip(&h.q_r)
            .zip(&h.s_count)
            .map(|((&c, &q), &s)| {
                let x = n * c * q;
                (best - cand) * x * (2.0 * s as f64 - (cand + best) * x)
            })
            .sum()
    };
    // The minimizer is an x²-weighted average of s_i/(n·x_i), so the largest
    // of those ratios brackets it from above.
    let upper = h
        .c_r
        .iter()
        .zip(&h.q_r)
        .zip(&h.s_count)
        .map(|((&c, &q), &s)| s as f64 / (n * c * q))
        .fold(3.0f64, f64::max);
    let (mut lo, mut hi) = (0.0f64, upper + 1e-6);
    let mut best = (lo + hi) / 2.0;
    for _ in 0..12 {
        let steps = 200;
        let step = (hi - lo) / steps as f64;
        for i in 0..=steps {
            let theta = lo + i as f64 * step;
            if delta(theta, best) < 0.0 {
                best = theta;
            }
        }
        lo = (best - step).max(0.0);
        hi = best + step;
    }
    best
}

fn criterion_6(g: &mut Gate) {
    let factory = RngFactory::new(42);
    let mut rng = factory.stream("acceptance/lse", &[]);
    let mut max_err = 0.0f64;
    for _ in 0..1000 {
        let n_r = rng.gen_range(5..=30);
        let theta_true: f64 = rng.gen_range(0.1..1.2);
        let mut h = RegionHistory::new(n_r, 0.5, None);
        for _ in 0..rng.gen_range(5..=40) {
            let c_r: f64 = rng.gen_range(0.05..1.0);
            let q: f64 = rng.gen_range(0.2..2.0);
            let ideal = theta_true * n_r as f64 * c_r * q;
            let s = (ideal + rng.gen_range(-1.5..1.5))
                .round()
                .clamp(0.0, n_r as f64) as usize;
            h.push(c_r, q, s);
        }
        if let Some(est) = lse_theta(&h) {
            max_err = max_err.max((est - brute_force_theta(&h)).abs());
        }
    }
    // Exact recovery on a noiseless linear history: s_i = θ·n_r·C_r·q_i with
    // integer counts by construction.
    let mut exact_err = 0.0f64;
    for &(n_r, theta) in &[(10usize, 0.5f64), (20, 0.25), (8, 1.0)] {
        let mut h = RegionHistory::new(n_r, 0.5, None);
        for s in 1..=4usize {
            let c_r = 0.5;
            let q = s as f64 / (theta * n_r as f64 * c_r);
            h.push(c_r, q, s);
        }
        exact_err = exact_err.max((lse_theta(&h).expect("noiseless LSE") - theta).abs());
    }
    let pass = max_err <= 1e-9 && exact_err <= 1e-12;
    g.check(
        "6",
        pass,
        format!(
            "1000 histories: max |closed-form − grid minimizer| {max_err:.2e} (≤ 1e-9), \
             noiseless recovery error {exact_err:.2e}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 7

/// Exhaustive enumeration of E[|X_r|] and Var[|X_r|] under uniform selection
/// of `u` of `n` clients followed by independent survival.
fn enumerate_survivors(p: &[f64], u: usize) -> (f64, f64) {
    let n = p.len();
    let mut count = 0u64;
    let mut sum_mean = 0.0;
    let mut sum_mean_sq = 0.0;
    let mut sum_var = 0.0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != u {
            continue;
        }
        let mut mean = 0.0;
        let mut var = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            if mask & (1 << i) != 0 {
                mean += pi;
                var += pi * (1.0 - pi);
            }
        }
        count += 1;
        sum_mean += mean;
        sum_mean_sq += mean * mean;
        sum_var += var;
    }
    let c = count as f64;
    let e = sum_mean / c;
    // Law of total variance over the random subset.
    let v = sum_var / c + (sum_mean_sq / c - e * e);
    (e, v)
}

fn criterion_7(g: &mut Gate) {
    let factory = RngFactory::new(13);
    let mut rng = factory.stream("acceptance/survivors", &[]);
    let trials = 4000;
    let mut vectors = 0;
    let mut max_z = 0.0f64;
    let mut max_analytic_err = 0.0f64;
    let mut pass = true;
    for n_r in 1..=8usize {
        for _ in 0..7 {
            let p: Vec<f64> = (0..n_r).map(|_| rng.gen_range(0.05..0.95)).collect();
            vectors += 1;
            for u in 1..=n_r {
                let (exact, var) = enumerate_survivors(&p, u);
                let analytic = u as f64 / n_r as f64 * p.iter().sum::<f64>();
                max_analytic_err = max_analytic_err.max((exact - analytic).abs());
                let mc = expected_survivors_mc(&p, u, trials, &mut rng);
                let se = (var / trials as f64).sqrt();
                let z = (mc - exact).abs() / (se + 1e-12);
                max_z = max_z.max(z);
                if (mc - exact).abs() > 3.0 * se + 1e-9 {
                    pass = false;
                }
            }
        }
    }
    pass = pass && max_analytic_err <= 1e-12;
    g.check(
        "7",
        pass,
        format!(
            "{vectors} reliability vectors (n_r ≤ 8, all U sizes): max |MC − enumeration| \
             {max_z:.2} standard errors (≤ 3), enumeration vs (U/n)·ΣP max error \
             {max_analytic_err:.2e}"
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(g: &mut Gate) {
    let factory = RngFactory::new(13);
    let mut rng = factory.stream("acceptance/theorem1", &[]);
    let mut instances = 0;
    let mut all_pass = true;
    let mut tau1_zero = true;
    let mut max_tau1_gap = 0.0f64;
    for &tau in &[1usize, 2, 5, 10] {
        for i in 0..6 {
            let dim = 1 + (i % 2);
            let n = rng.gen_range(2..=5);
            let clients: Vec<Quadratic> = (0..n)
                .map(|_| Quadratic {
                    a: (0..dim).map(|_| rng.gen_range(0.3..1.2)).collect(),
                    c: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                })
                .collect();
            let mut gamma: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = gamma.iter().sum();
            for v in &mut gamma {
                *v /= total;
            }
            let snap = ObjectiveSnapshot { gamma, clients };
            let w0: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let report = verify_theorem1_empirically(&snap, &w0, tau, 0.05, 5);
            instances += 1;
            all_pass &= report.pass;
            if tau == 1 {
                for row in &report.rows {
                    max_tau1_gap = max_tau1_gap.max(row.gap.abs());
                }
                tau1_zero &= report.rows.iter().all(|r| r.gap.abs() <= 1e-12);
            }
        }
    }
    let pass = instances >= 20 && all_pass && tau1_zero;
    g.check(
        "8",
        pass,
        format!(
            "{instances} randomized quadratic instances, τ ∈ {{1,2,5,10}}: gap ≤ ρ·h̄ \
             everywhere: {all_pass}; τ=1 max |gap| {max_tau1_gap:.2e} (≡ 0)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

fn gradient_rel_err(data: &Dataset, hidden: &[usize], seed: u64) -> f64 {
    let arch = Arch::for_task(data.dim(), hidden, data.task);
    let params = ModelParams::init(arch, &RngFactory::new(seed));
    let loss = loss_for(data.task);
    let analytic = mean_loss_gradient(&params, data, loss);
    let fd = finite_difference_gradient(&params, data, loss, 1e-5);
    let diff: f64 = analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / (norm + 1e-12)
}

fn criterion_9(g: &mut Gate) {
    let factory = RngFactory::new(21);
    let reg = synthesize_regression(40, 5, 0.2, &factory);
    let cls = synthesize_classification(60, 16, 10, &factory);
    let cases: [(&str, &Dataset, &[usize]); 3] = [
        ("linear", &reg, &[]),
        ("mlp-16-16", &reg, &[16, 16]),
        ("softmax-32", &cls, &[32]),
    ];
    let mut max_err = 0.0f64;
    for (_, data, hidden) in cases {
        max_err = max_err.max(gradient_rel_err(data, hidden, 3));
    }
    let pass = max_err <= 1e-5;
    g.check(
        "9",
        pass,
        format!("analytic vs finite-difference gradients, all shipped architectures: max relative error {max_err:.2e} (≤ 1e-5)"),
    );
}

// --------------------------------------------------------------- criterion 10

fn small_determinism_spec(out: Option<std::path::PathBuf>) -> ExperimentSpec {
    let mut cfg = SimConfig::task1();
    cfg.t_max = 15;
    ExperimentSpec {
        cfg,
        stop: StopRule::MaxRounds(15),
        repeats: 2,
        base_seed: 11,
        out_dir: out,
        label: "determinism".into(),
    }
}

fn criterion_10(g: &mut Gate) {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = small_determinism_spec(Some(dir.path().to_path_buf()));
    let a = run_experiment(&spec).expect("first run");
    let bytes_a: Vec<Vec<u8>> = a
        .iter()
        .map(|s| std::fs::read(s.csv_path.as_ref().expect("csv path")).expect("read csv"))
        .collect();
    let b = run_experiment(&spec).expect("second run");
    let bytes_b: Vec<Vec<u8>> = b
        .iter()
        .map(|s| std::fs::read(s.csv_path.as_ref().expect("csv path")).expect("read csv"))
        .collect();
    let rerun_identical = bytes_a == bytes_b && !bytes_a.is_empty();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool");
    let spec1 = small_determinism_spec(None);
    let c = pool.install(|| run_experiment(&spec1).expect("single-thread run"));
    let thread_identical = a
        .iter()
        .zip(&c)
        .all(|(x, y)| x.csv == y.csv);
    let pass = rerun_identical && thread_identical;
    g.check(
        "10",
        pass,
        format!("byte-identical CSVs across reruns: {rerun_identical}; across thread counts: {thread_identical}"),
    );
}

// -------------------------------------------------- declared task2-small check

/// Reduced-scale stand-in for the full Task-2 comparison: HybridFL must beat
/// both baselines on mean round length and rounds-to-target (target = loss of
/// each seed's final FedAvg model).
fn declared_task2_small(g: &mut Gate) {
    let base = SimConfig::task2_small();
    let seeds = 5u64;
    let mut lens = [0.0f64; 3];
    let mut rtts = [0.0f64; 3];
    let mut traces: Vec<Vec<Trace>> = Vec::new();
    for (pi, &p) in PROTOCOLS.iter().enumerate() {
        let cfg = base.with_protocol(p);
        let mut per_seed = Vec::new();
        for seed in 1..=seeds {
            let s = run_single(&cfg, StopRule::MaxRounds(base.t_max), seed).expect("task2-small");
            lens[pi] += s.avg_round_len / seeds as f64;
            per_seed.push(parse_trace(&s.csv));
        }
        traces.push(per_seed);
    }
    for pi in 0..PROTOCOLS.len() {
        for si in 0..seeds as usize {
            let target = *traces[1][si].loss.last().expect("fedavg trace");
            let rtt = traces[pi][si]
                .loss
                .iter()
                .position(|&l| l <= target)
                .map_or((base.t_max + 1) as f64, |i| (i + 1) as f64);
            rtts[pi] += rtt / seeds as f64;
        }
    }
    let pass = lens[0] < lens[1] && lens[0] < lens[2] && rtts[0] <= rtts[1] && rtts[0] <= rtts[2];
    g.check(
        "task2-small (declared)",
        pass,
        format!(
            "round length {:.1}/{:.1}/{:.1}s (hybridfl/fedavg/hierfavg, need lowest), \
             rounds-to-target {:.1}/{:.1}/{:.1} (need lowest)",
            lens[0], lens[1], lens[2], rtts[0], rtts[1], rtts[2]
        ),
    );
}

// ----------------------------------------------------------------------- gate

#[test]
fn acceptance() {
    let mut g = Gate { failures: vec![] };
    criterion_1(&mut g);
    criterion_2(&mut g);
    let grid_start = Instant::now();
    let grid = run_grid();
    let grid_secs = grid_start.elapsed().as_secs_f64();
    criterion_3(&mut g, &grid, grid_secs);
    criterion_4(&mut g, &grid);
    criterion_5(&mut g);
    criterion_6(&mut g);
    criterion_7(&mut g);
    criterion_8(&mut g);
    criterion_9(&mut g);
    criterion_10(&mut g);
    declared_task2_small(&mut g);
    assert!(
        g.failures.is_empty(),
        "failed acceptance criteria: {}",
        g.failures.join(", ")
    );
}
