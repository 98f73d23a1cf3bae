//! Round engines: client selection, drop-out realization, quota-triggered
//! round termination, regional aggregation with model caching, EDC-weighted
//! cloud aggregation, and the FedAvg / HierFAVG baselines.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use crate::config::ProtocolKind;
use crate::config::{HistoryMode, SimConfig};
use crate::data::Dataset;
use crate::error::{Result, SimError};
use crate::estimator::{
    compute_q, estimate_theta, selection_proportion, RegionHistory, SelectionDecision,
};
use crate::model::{local_train, loss_for, Arch, LossKind, ModelParams};
use crate::rng::{round_half_up, RngFactory};
use crate::simclock::{self, TimingParams};
use crate::topology::{build_topology, ClientProfile, Topology};

/// Everything the simulator knows about one region's round. `x_r` is ground
/// truth visible only to the simulator; the estimator is fed exclusively from
/// edge-observable quantities (see `append_history`).
#[derive(Debug, Clone)]
pub struct RegionRoundState {
    pub region: usize,
    pub theta_hat: f64,
    pub decision: SelectionDecision,
    pub u_r: Vec<usize>,
    pub x_r: Vec<usize>,
    pub s_r: Vec<usize>,
    /// Survivors whose upload lands within T_lim (includes post-signal
    /// arrivals the edge keeps counting).
    pub received: usize,
    /// q_r(t) = |S_r|/(C·n_r), the bookkeeping quotient.
    pub q_r: f64,
    pub edc_r: f64,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub t: usize,
    pub regions: Vec<RegionRoundState>,
    pub global: ModelParams,
    /// T_round in seconds (compute window + backhaul).
    pub round_len: f64,
    /// Total device energy spent this round (J).
    pub energy: f64,
    pub quota_met: bool,
    pub edc_total: f64,
}

/// Uniform subset without replacement, returned in ascending id order.
pub fn select_clients(ids: &[usize], size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if size > ids.len() {
        return Err(SimError::Domain(format!(
            "cannot select {size} of {} clients",
            ids.len()
        )));
    }
    let mut pool = ids.to_vec();
    pool.shuffle(rng);
    let mut chosen: Vec<usize> = pool[..size].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Independent Bernoulli survival with probability 1 - dropout per client.
pub fn realize_dropout(
    selected: &[usize],
    profiles: &[ClientProfile],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    selected
        .iter()
        .copied()
        .filter(|&k| rng.gen::<f64>() >= profiles[k].dropout)
        .collect()
}

/// Weighted average of parameter vectors; weights must be nonnegative with a
/// positive sum.
fn weighted_average(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(SimError::Domain("aggregation weights sum to zero".into()));
    }
    let first = models.first().ok_or_else(|| {
        SimError::Domain("aggregation over an empty model list".into())
    })?;
    let mut theta = vec![0.0; first.theta.len()];
    for (m, &w) in models.iter().zip(weights) {
        let w = w / total;
        for (acc, v) in theta.iter_mut().zip(&m.theta) {
            *acc += w * v;
        }
    }
    Ok(ModelParams {
        arch: first.arch.clone(),
        theta,
    })
}

/// Regional aggregation (every client slot filled, fresh or cached):
/// w^r(t) = Σ_k (|D_k^r|/|D^r|)·w_k^r(t).
pub fn regional_aggregate(models: &[&ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    if sizes.iter().sum::<usize>() == 0 {
        return Err(SimError::Domain("region holds no data".into()));
    }
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    weighted_average(models, &weights)
}

/// Effective data coverage of a region: total sample count behind its fresh
/// submissions, EDC_r = Σ_{k∈S_r} |D_k^r|.
pub fn edc(submitter_sizes: &[usize]) -> f64 {
    submitter_sizes.iter().sum::<usize>() as f64
}

pub fn edc_total(per_region: &[f64]) -> f64 {
    per_region.iter().sum()
}

/// EDC-weighted cloud aggregation: w(t) = Σ_r (EDC_r/EDC)·w^r(t); when no
/// region has coverage the previous global model is carried forward.
pub fn cloud_aggregate(
    regional: &[&ModelParams],
    edcs: &[f64],
    previous: &ModelParams,
) -> Result<ModelParams> {
    if edc_total(edcs) <= 0.0 {
        return Ok(previous.clone());
    }
    weighted_average(regional, edcs)
}

/// Flattened per-client weights γ(k,r,t) = (EDC_r/EDC)·(|D_k^r|/|D^r|);
/// the single-level equivalent of regional + cloud aggregation.
pub fn flatten_weights(edcs: &[f64], region_sizes: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let total = edc_total(edcs);
    if total <= 0.0 {
        return Err(SimError::Domain("flatten_weights needs EDC > 0".into()));
    }
    edcs.iter()
        .zip(region_sizes)
        .map(|(&e, sizes)| {
            let d_r: usize = sizes.iter().sum();
            if d_r == 0 {
                return Err(SimError::Domain("region holds no data".into()));
            }
            Ok(sizes
                .iter()
                .map(|&s| (e / total) * (s as f64 / d_r as f64))
                .collect())
        })
        .collect()
}

/// The full simulation state for one protocol run.
pub struct Engine {
    pub cfg: SimConfig,
    pub topo: Topology,
    pub timing: TimingParams,
    pub global: ModelParams,
    pub histories: Vec<RegionHistory>,
    /// HybridFL: cached regional models w^r(t-1). HierFAVG: the live
    /// regional models between cloud syncs.
    pub regional: Vec<ModelParams>,
    rng: RngFactory,
    loss: LossKind,
    client_data: Vec<Dataset>,
    /// Fixed per-client communication and training times (s).
    client_comm: Vec<f64>,
    client_train: Vec<f64>,
}

impl Engine {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Engine> {
        cfg.validate()?;
        let rng = RngFactory::new(seed);
        let topo = build_topology(&cfg, &rng)?;
        let mean_partition = topo.total_data_size() as f64 / cfg.n as f64;
        let timing = TimingParams::from_config(&cfg, mean_partition)?;
        let loss = loss_for(topo.dataset.task);
        let arch = Arch::for_task(topo.dataset.dim(), &cfg.hidden, topo.dataset.task);
        let global = ModelParams::init(arch, &rng);
        let client_data: Vec<Dataset> = (0..cfg.n).map(|k| topo.client_dataset(k)).collect();
        let client_comm: Vec<f64> = topo
            .clients
            .iter()
            .map(|c| simclock::t_comm(cfg.msize_bits, c.bandwidth * 1e6, cfg.snr))
            .collect::<Result<_>>()?;
        let client_train: Vec<f64> = topo
            .clients
            .iter()
            .map(|c| {
                simclock::t_train(c.data.len() as f64, cfg.tau, cfg.bps, cfg.cpb, c.speed)
            })
            .collect::<Result<_>>()?;
        let histories = topo
            .regions
            .iter()
            .map(|r| RegionHistory::new(r.len(), cfg.theta_init, cfg.history_window))
            .collect();
        let regional = vec![global.clone(); cfg.m];
        Ok(Engine {
            cfg,
            topo,
            timing,
            global,
            histories,
            regional,
            rng,
            loss,
            client_data,
            client_comm,
            client_train,
        })
    }

    pub fn quota(&self) -> usize {
        round_half_up(self.cfg.c * self.cfg.n as f64).max(1)
    }

    fn completion(&self, k: usize) -> f64 {
        self.client_comm[k] + self.client_train[k]
    }

    fn backhaul(&self) -> f64 {
        simclock::t_c2e2c(
            self.cfg.msize_bits,
            self.cfg.m,
            self.cfg.br_bits_per_sec(),
            self.cfg.parallel_backhaul,
        )
    }

    /// Train every submitter from its start model; merged in client-id order
    /// so the result is independent of scheduling.
    fn train_submitters(&self, submitters: &[usize], start: &[&ModelParams]) -> Result<Vec<ModelParams>> {
        submitters
            .par_iter()
            .zip(start.par_iter())
            .map(|(&k, from)| {
                local_train(from, &self.client_data[k], self.cfg.tau, self.cfg.eta, self.loss)
            })
            .collect()
    }

    /// Energy for a survivor active until the window closes: the full
    /// per-round cost scaled by the fraction of its completion time it was
    /// allowed to run, capped at the full cost.
    fn survivor_energy(&self, k: usize, window: f64) -> f64 {
        let total = self.completion(k);
        let full = simclock::energy(
            self.client_comm[k],
            self.client_train[k],
            self.topo.clients[k].speed,
        );
        if total <= 0.0 {
            return 0.0;
        }
        full * (window.min(total) / total)
    }

    pub fn run_round(&mut self, t: usize) -> Result<RoundOutcome> {
        match self.cfg.protocol {
            ProtocolKind::HybridFl => self.run_round_hybrid(t),
            ProtocolKind::FedAvg => self.run_round_fedavg(t),
            ProtocolKind::HierFavg { kappa2 } => self.run_round_hierfavg(t, kappa2),
        }
    }

    fn run_round_hybrid(&mut self, t: usize) -> Result<RoundOutcome> {
        let t_lim = self.timing.t_lim;
        let quota = self.quota();
        let m = self.cfg.m;

        // Per-region selection from the slack estimate, then drop-out.
        let mut decisions = Vec::with_capacity(m);
        let mut u_sets = Vec::with_capacity(m);
        let mut x_sets = Vec::with_capacity(m);
        for r in 0..m {
            let theta_hat = estimate_theta(&self.histories[r]);
            let d = selection_proportion(self.cfg.c, theta_hat, self.topo.regions[r].len())?;
            let mut sel_rng = self.rng.stream("hybridfl/select", &[t as u64, r as u64]);
            let u_r = select_clients(&self.topo.regions[r], d.u_r_size, &mut sel_rng)?;
            let mut drop_rng = self.rng.stream("hybridfl/dropout", &[t as u64, r as u64]);
            let x_r = realize_dropout(&u_r, &self.topo.clients, &mut drop_rng);
            decisions.push((theta_hat, d));
            u_sets.push(u_r);
            x_sets.push(x_r);
        }

        // Quota-triggered termination: first `quota` finishers within T_lim.
        let mut finishers: Vec<(f64, usize)> = x_sets
            .iter()
            .flatten()
            .map(|&k| (self.completion(k), k))
            .collect();
        finishers.sort_by(|a, b| a.partial_cmp(b).expect("finite completion times"));
        let mut s_global = Vec::new();
        let mut window = t_lim;
        for &(c, k) in &finishers {
            if c > t_lim || s_global.len() == quota {
                break;
            }
            s_global.push(k);
            if s_global.len() == quota {
                window = c;
            }
        }
        let quota_met = s_global.len() == quota;
        if !quota_met {
            window = t_lim;
        }
        s_global.sort_unstable();

        // Submitters train from the downloaded global model w(t-1).
        let start: Vec<&ModelParams> = s_global.iter().map(|_| &self.global).collect();
        let fresh = self.train_submitters(&s_global, &start)?;
        let fresh_of = |k: usize| -> Option<&ModelParams> {
            s_global.binary_search(&k).ok().map(|i| &fresh[i])
        };

        // Regional aggregation with cache fill, then EDC-weighted cloud step.
        let mut region_states = Vec::with_capacity(m);
        let mut new_regional = Vec::with_capacity(m);
        let mut edcs = Vec::with_capacity(m);
        for r in 0..m {
            let ids = &self.topo.regions[r];
            let sizes: Vec<usize> = ids.iter().map(|&k| self.topo.clients[k].data.len()).collect();
            let models: Vec<&ModelParams> = ids
                .iter()
                .map(|&k| fresh_of(k).unwrap_or(&self.regional[r]))
                .collect();
            let w_r = regional_aggregate(&models, &sizes)?;
            let s_r: Vec<usize> = ids.iter().copied().filter(|&k| fresh_of(k).is_some()).collect();
            let submitter_sizes: Vec<usize> =
                s_r.iter().map(|&k| self.topo.clients[k].data.len()).collect();
            let edc_r = edc(&submitter_sizes);
            let received = x_sets[r]
                .iter()
                .filter(|&&k| self.completion(k) <= t_lim)
                .count();
            let (theta_hat, d) = decisions[r];
            region_states.push(RegionRoundState {
                region: r,
                theta_hat,
                decision: d,
                u_r: u_sets[r].clone(),
                x_r: x_sets[r].clone(),
                q_r: compute_q(s_r.len(), self.cfg.c, ids.len())?,
                s_r,
                received,
                edc_r,
            });
            new_regional.push(w_r);
            edcs.push(edc_r);
        }
        let regional_refs: Vec<&ModelParams> = new_regional.iter().collect();
        let global = cloud_aggregate(&regional_refs, &edcs, &self.global)?;

        // Energy: submitters at full cost, quota-aborted survivors at the
        // window fraction, dropped clients at zero.
        let energy: f64 = x_sets
            .iter()
            .flatten()
            .map(|&k| self.survivor_energy(k, window))
            .sum();

        // Estimator histories: only edge-observable aggregates.
        for rs in &region_states {
            self.append_history(rs);
        }

        self.regional = new_regional;
        self.global = global.clone();
        Ok(RoundOutcome {
            t,
            regions: region_states,
            global,
            round_len: simclock::round_length(window, self.backhaul()),
            energy,
            quota_met,
            edc_total: edc_total(&edcs),
        })
    }

    fn append_history(&mut self, rs: &RegionRoundState) {
        let entry = match self.cfg.history_mode {
            HistoryMode::Received => {
                let q_star = if rs.received > 0 {
                    rs.s_r.len() as f64 / rs.received as f64
                } else {
                    0.0
                };
                (rs.decision.c_r, q_star, rs.received)
            }
            HistoryMode::QuotaCount => (rs.decision.c_r, rs.q_r, rs.s_r.len()),
        };
        self.histories[rs.region].push(entry.0, entry.1, entry.2);
    }

    fn run_round_fedavg(&mut self, t: usize) -> Result<RoundOutcome> {
        let t_lim = self.timing.t_lim;
        let quota = self.quota();
        let all: Vec<usize> = (0..self.cfg.n).collect();
        let mut sel_rng = self.rng.stream("fedavg/select", &[t as u64]);
        let u = select_clients(&all, quota, &mut sel_rng)?;
        let mut drop_rng = self.rng.stream("fedavg/dropout", &[t as u64]);
        let x = realize_dropout(&u, &self.topo.clients, &mut drop_rng);

        // Synchronous round: a dropped client never completes, pinning the
        // wait at T_lim; otherwise the slowest selected client closes it.
        let any_drop = x.len() < u.len();
        let max_completion = x
            .iter()
            .map(|&k| self.completion(k))
            .fold(0.0_f64, f64::max);
        let window = if any_drop || u.is_empty() {
            t_lim
        } else {
            max_completion.min(t_lim)
        };
        let s: Vec<usize> = x
            .iter()
            .copied()
            .filter(|&k| self.completion(k) <= t_lim)
            .collect();

        let start: Vec<&ModelParams> = s.iter().map(|_| &self.global).collect();
        let fresh = self.train_submitters(&s, &start)?;

        // No edge layer: plain data-size-weighted average over received
        // models only, carrying w(t-1) forward if none arrive.
        let global = if s.is_empty() {
            self.global.clone()
        } else {
            let sizes: Vec<usize> = s.iter().map(|&k| self.topo.clients[k].data.len()).collect();
            let refs: Vec<&ModelParams> = fresh.iter().collect();
            regional_aggregate(&refs, &sizes)?
        };

        let energy: f64 = x.iter().map(|&k| self.survivor_energy(k, window)).sum();
        let region_states = self.baseline_region_states(&u, &x, &s)?;
        let quota_met = s.len() >= quota;
        self.global = global.clone();
        Ok(RoundOutcome {
            t,
            edc_total: region_states.iter().map(|r| r.edc_r).sum(),
            regions: region_states,
            global,
            round_len: simclock::round_length(window, 0.0),
            energy,
            quota_met,
        })
    }

    fn run_round_hierfavg(&mut self, t: usize, kappa2: usize) -> Result<RoundOutcome> {
        let t_lim = self.timing.t_lim;
        let m = self.cfg.m;
        let mut u_sets = Vec::with_capacity(m);
        let mut x_sets = Vec::with_capacity(m);
        for r in 0..m {
            let n_r = self.topo.regions[r].len();
            let size = round_half_up(self.cfg.c * n_r as f64).min(n_r);
            let mut sel_rng = self.rng.stream("hierfavg/select", &[t as u64, r as u64]);
            let u_r = select_clients(&self.topo.regions[r], size, &mut sel_rng)?;
            let mut drop_rng = self.rng.stream("hierfavg/dropout", &[t as u64, r as u64]);
            let x_r = realize_dropout(&u_r, &self.topo.clients, &mut drop_rng);
            u_sets.push(u_r);
            x_sets.push(x_r);
        }

        // Per-region synchronous wait; the cloud round closes on the slowest
        // region.
        let mut windows = Vec::with_capacity(m);
        let mut s_sets = Vec::with_capacity(m);
        for r in 0..m {
            let any_drop = x_sets[r].len() < u_sets[r].len();
            let max_completion = x_sets[r]
                .iter()
                .map(|&k| self.completion(k))
                .fold(0.0_f64, f64::max);
            let window = if u_sets[r].is_empty() {
                0.0
            } else if any_drop {
                t_lim
            } else {
                max_completion.min(t_lim)
            };
            windows.push(window);
            let s_r: Vec<usize> = x_sets[r]
                .iter()
                .copied()
                .filter(|&k| self.completion(k) <= t_lim)
                .collect();
            s_sets.push(s_r);
        }
        let global_window = windows.iter().cloned().fold(0.0_f64, f64::max);

        // Clients train from their region's live model; edges aggregate with
        // cache fill every round.
        let mut region_states = Vec::with_capacity(m);
        let mut new_regional = Vec::with_capacity(m);
        for r in 0..m {
            let start: Vec<&ModelParams> = s_sets[r].iter().map(|_| &self.regional[r]).collect();
            let fresh = self.train_submitters(&s_sets[r], &start)?;
            let ids = &self.topo.regions[r];
            let sizes: Vec<usize> = ids.iter().map(|&k| self.topo.clients[k].data.len()).collect();
            let models: Vec<&ModelParams> = ids
                .iter()
                .map(|&k| {
                    s_sets[r]
                        .iter()
                        .position(|&s| s == k)
                        .map(|i| &fresh[i])
                        .unwrap_or(&self.regional[r])
                })
                .collect();
            new_regional.push(regional_aggregate(&models, &sizes)?);
            let submitter_sizes: Vec<usize> = s_sets[r]
                .iter()
                .map(|&k| self.topo.clients[k].data.len())
                .collect();
            region_states.push(RegionRoundState {
                region: r,
                theta_hat: 1.0,
                decision: SelectionDecision {
                    c_r: self.cfg.c,
                    u_r_size: u_sets[r].len(),
                    clamped: false,
                },
                u_r: u_sets[r].clone(),
                x_r: x_sets[r].clone(),
                q_r: compute_q(s_sets[r].len(), self.cfg.c, ids.len())?,
                s_r: s_sets[r].clone(),
                received: s_sets[r].len(),
                edc_r: edc(&submitter_sizes),
            });
        }
        self.regional = new_regional;

        // Cloud sync every kappa2 rounds resets regional models to the
        // data-weighted average; the same average serves as the evaluation
        // model every round.
        let d_weights: Vec<f64> = (0..m).map(|r| self.topo.region_data_size(r) as f64).collect();
        let refs: Vec<&ModelParams> = self.regional.iter().collect();
        let global = weighted_average(&refs, &d_weights)?;
        if t % kappa2 == 0 {
            self.regional = vec![global.clone(); m];
        }
        self.global = global.clone();

        let energy: f64 = (0..m)
            .flat_map(|r| x_sets[r].iter().map(move |&k| (r, k)))
            .map(|(r, k)| self.survivor_energy(k, windows[r]))
            .sum();
        let quota = self.quota();
        let quota_met = s_sets.iter().map(Vec::len).sum::<usize>() >= quota;
        Ok(RoundOutcome {
            t,
            edc_total: region_states.iter().map(|r| r.edc_r).sum(),
            regions: region_states,
            global,
            round_len: simclock::round_length(global_window, self.backhaul()),
            energy,
            quota_met,
        })
    }

    /// Group a flat (U, X, S) split into per-region states for reporting.
    fn baseline_region_states(
        &self,
        u: &[usize],
        x: &[usize],
        s: &[usize],
    ) -> Result<Vec<RegionRoundState>> {
        (0..self.cfg.m)
            .map(|r| {
                let in_region = |set: &[usize]| -> Vec<usize> {
                    set.iter()
                        .copied()
                        .filter(|&k| self.topo.clients[k].region == r)
                        .collect()
                };
                let u_r = in_region(u);
                let x_r = in_region(x);
                let s_r = in_region(s);
                let submitter_sizes: Vec<usize> =
                    s_r.iter().map(|&k| self.topo.clients[k].data.len()).collect();
                let n_r = self.topo.regions[r].len();
                Ok(RegionRoundState {
                    region: r,
                    theta_hat: 1.0,
                    decision: SelectionDecision {
                        c_r: self.cfg.c,
                        u_r_size: u_r.len(),
                        clamped: false,
                    },
                    q_r: compute_q(s_r.len(), self.cfg.c, n_r)?,
                    received: x_r.len(),
                    edc_r: edc(&submitter_sizes),
                    u_r,
                    x_r,
                    s_r,
                })
            })
            .collect()
    }
}
