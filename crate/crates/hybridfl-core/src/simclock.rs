//! Closed-form timing and energy models: per-client training and
//! communication time, cloud-edge transfer, the response-time limit, round
//! length, and device energy.

use crate::config::{Gaussian, SimConfig};
use crate::error::{Result, SimError};

/// Device transmit power (W).
pub const P_TRANS: f64 = 0.5;
/// Compute power baseline (W at 1 GHz); scales with the cube of the clock.
pub const P_COMP_BASE: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingParams {
    /// Model size in bits.
    pub msize: f64,
    /// Cloud-edge bit rate in bits/s.
    pub br: f64,
    pub snr: f64,
    /// Bits per sample processed in training.
    pub bps: f64,
    /// CPU cycles per bit.
    pub cpb: f64,
    pub tau: usize,
    /// Response-time ceiling (s), from `straggler_limit`.
    pub t_lim: f64,
}

impl TimingParams {
    pub fn from_config(cfg: &SimConfig, mean_partition: f64) -> Result<TimingParams> {
        let mut p = TimingParams {
            msize: cfg.msize_bits,
            br: cfg.br_bits_per_sec(),
            snr: cfg.snr,
            bps: cfg.bps,
            cpb: cfg.cpb,
            tau: cfg.tau,
            t_lim: 0.0,
        };
        p.t_lim = straggler_limit(mean_partition, cfg.speed, cfg.bandwidth, &p)?;
        Ok(p)
    }
}

/// Local training time: |D_k|·τ·BPS·CPB cycles at s_k GHz.
pub fn t_train(partition: f64, tau: usize, bps: f64, cpb: f64, s_ghz: f64) -> Result<f64> {
    if s_ghz <= 0.0 {
        return Err(SimError::Domain(format!(
            "client speed must be positive, got {s_ghz} GHz"
        )));
    }
    Ok(partition * tau as f64 * bps * cpb / (s_ghz * 1e9))
}

/// Model exchange over the wireless channel: 3·msize / (bw·log2(1+SNR)).
/// The factor 3 covers one download plus the costlier upload.
pub fn t_comm(msize: f64, bw_hz: f64, snr: f64) -> Result<f64> {
    if bw_hz <= 0.0 {
        return Err(SimError::Domain(format!(
            "bandwidth must be positive, got {bw_hz} Hz"
        )));
    }
    if snr <= 0.0 {
        return Err(SimError::Domain(format!("SNR must be positive, got {snr}")));
    }
    Ok(3.0 * msize / (bw_hz * (1.0 + snr).log2()))
}

/// Cloud-edge backhaul per round: 3·msize·m / BR serially, or 3·msize / BR
/// when edges transfer in parallel. Identically 0 for FedAvg (no edge layer).
pub fn t_c2e2c(msize: f64, m: usize, br: f64, parallel: bool) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let edges = if parallel { 1.0 } else { m as f64 };
    3.0 * msize * edges / br
}

/// Response-time ceiling: the completion time of a hypothetical μ−3σ
/// straggler (in both CPU speed and bandwidth) training an average-size
/// partition. Bandwidth distribution is in MHz.
pub fn straggler_limit(
    mean_partition: f64,
    speed: Gaussian,
    bandwidth: Gaussian,
    p: &TimingParams,
) -> Result<f64> {
    let s = speed.mean - 3.0 * speed.std;
    let bw = bandwidth.mean - 3.0 * bandwidth.std;
    if s <= 0.0 || bw <= 0.0 {
        return Err(SimError::Config(format!(
            "straggler speed/bandwidth non-positive (s = {s} GHz, bw = {bw} MHz)"
        )));
    }
    Ok(t_train(mean_partition, p.tau, p.bps, p.cpb, s)? + t_comm(p.msize, bw * 1e6, p.snr)?)
}

/// T_round = T_c2e2c + compute window (the caller caps the window at T_lim
/// per the protocol's rule).
pub fn round_length(window: f64, t_c2e2c: f64) -> f64 {
    debug_assert!(window >= 0.0 && t_c2e2c >= 0.0);
    window + t_c2e2c
}

/// Device energy: E = P_trans·T_comm + P_comp_base·s³·T_train, with the
/// clock entering the cubic as the bare GHz number.
pub fn energy(t_comm_active: f64, t_train_active: f64, s_ghz: f64) -> f64 {
    debug_assert!(t_comm_active >= 0.0 && t_train_active >= 0.0);
    P_TRANS * t_comm_active + P_COMP_BASE * s_ghz.powi(3) * t_train_active
}
