//! Reliability-agnostic regional client-selection machinery: q_r bookkeeping,
//! the least-squares slack-factor fit, the clamped selection proportion, and
//! a Monte-Carlo oracle for the binomial survivor-expectation model.
//!
//! Everything here sees only edge-observable aggregates — no client identity,
//! drop-out state, or per-client reliability appears in any signature.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};

/// Floor of the slack-factor clamp; prevents C_r explosion on pathological
/// histories.
pub const THETA_FLOOR: f64 = 0.05;

/// Per-region observable log feeding the slack estimator: one entry per past
/// round, strictly parallel lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionHistory {
    pub c_r: Vec<f64>,
    pub q_r: Vec<f64>,
    pub s_count: Vec<usize>,
    pub n_r: usize,
    pub theta_init: f64,
    /// Sliding window (last W rounds); None = full history.
    pub window: Option<usize>,
}

impl RegionHistory {
    pub fn new(n_r: usize, theta_init: f64, window: Option<usize>) -> RegionHistory {
        RegionHistory {
            c_r: Vec::new(),
            q_r: Vec::new(),
            s_count: Vec::new(),
            n_r,
            theta_init,
            window,
        }
    }

    pub fn push(&mut self, c_r: f64, q_r: f64, s_count: usize) {
        debug_assert!(c_r > 0.0 && c_r <= 1.0);
        debug_assert!(q_r >= 0.0);
        debug_assert!(s_count <= self.n_r);
        self.c_r.push(c_r);
        self.q_r.push(q_r);
        self.s_count.push(s_count);
    }

    pub fn len(&self) -> usize {
        self.c_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_r.is_empty()
    }

    fn windowed_range(&self) -> std::ops::Range<usize> {
        match self.window {
            Some(w) => self.len().saturating_sub(w)..self.len(),
            None => 0..self.len(),
        }
    }
}

/// q_r(t) = |S_r(t)| / (C·n_r). May legitimately exceed 1 when a region
/// contributes more than its share of the global quota.
pub fn compute_q(s_count: usize, c: f64, n_r: usize) -> Result<f64> {
    let denom = c * n_r as f64;
    if denom <= 0.0 {
        return Err(SimError::Domain(format!(
            "q_r undefined for C·n_r = {denom}"
        )));
    }
    Ok(s_count as f64 / denom)
}

/// Unclamped least-squares slack estimate:
/// θ̂ = (1/n_r)·Σ C_r(i)·q_r(i)·|S_r(i)| / Σ (C_r(i)·q_r(i))².
/// None when the history (or its window) gives a zero denominator.
pub fn lse_theta(history: &RegionHistory) -> Option<f64> {
    let range = history.windowed_range();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in range {
        let x = history.c_r[i] * history.q_r[i];
        num += x * history.s_count[i] as f64;
        den += x * x;
    }
    if den <= 0.0 {
        None
    } else {
        Some(num / (history.n_r as f64 * den))
    }
}

/// Slack estimate used by the protocol: the LSE quotient clamped to
/// [THETA_FLOOR, 1], falling back to theta_init on degenerate histories.
pub fn estimate_theta(history: &RegionHistory) -> f64 {
    match lse_theta(history) {
        Some(theta) => theta.clamp(THETA_FLOOR, 1.0),
        None => history.theta_init,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionDecision {
    pub c_r: f64,
    pub u_r_size: usize,
    pub clamped: bool,
}

/// C_r = min(1, C/θ̂); number selected = max(1, ceil(C_r·n_r)).
///
/// Ceiling integerization guarantees at least the C_r proportion is invited
/// even when C_r·n_r is fractional; the resulting slight over-selection is
/// what drives the estimated slack factors above the raw survival means
/// (e.g. the 0.46/0.63 fixed points of the two-region trace) while holding
/// the realized participation |X_r|/n_r at the desired proportion C.
pub fn selection_proportion(c: f64, theta_hat: f64, n_r: usize) -> Result<SelectionDecision> {
    if theta_hat <= 0.0 {
        return Err(SimError::Domain(format!(
            "slack estimate must be positive, got {theta_hat}"
        )));
    }
    if n_r == 0 {
        return Err(SimError::Domain("empty region".into()));
    }
    let raw = c / theta_hat;
    let clamped = raw > 1.0;
    let c_r = raw.min(1.0);
    let u_r_size = ((c_r * n_r as f64).ceil() as i64).max(1).min(n_r as i64) as usize;
    Ok(SelectionDecision {
        c_r,
        u_r_size,
        clamped,
    })
}

/// Monte-Carlo estimate of E[|X_r|]: uniformly select `u_size` of the clients
/// without replacement, survive each with its own probability, average the
/// survivor count over `trials`. Test oracle for the binomial selection model.
pub fn expected_survivors_mc(
    reliabilities: &[f64],
    u_size: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    assert!(u_size <= reliabilities.len());
    assert!(trials >= 1);
    let mut ids: Vec<usize> = (0..reliabilities.len()).collect();
    let mut total = 0u64;
    for _ in 0..trials {
        ids.shuffle(rng);
        for &i in &ids[..u_size] {
            if rng.gen::<f64>() < reliabilities[i] {
                total += 1;
            }
        }
    }
    total as f64 / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{round_half_up, RngFactory};
    use approx::assert_abs_diff_eq;

    #[test]
    fn q_examples() {
        assert_abs_diff_eq!(compute_q(6, 0.3, 20).unwrap(), 1.0);
        assert_abs_diff_eq!(compute_q(0, 0.3, 20).unwrap(), 0.0);
        assert_abs_diff_eq!(compute_q(3, 0.3, 20).unwrap(), 0.5);
        assert!(compute_q(3, 0.0, 20).is_err());
    }

    #[test]
    fn theta_single_entry_hand_value() {
        // n_r=10, C_r=0.6, q=1, S=3: (1/10)·(0.6·3)/(0.36) = 0.5.
        let mut h = RegionHistory::new(10, 0.5, None);
        h.push(0.6, 1.0, 3);
        assert_abs_diff_eq!(estimate_theta(&h), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn theta_empty_history_falls_back() {
        let h = RegionHistory::new(10, 0.5, None);
        assert_eq!(estimate_theta(&h), 0.5);
        // Zero-denominator history (all q = 0) also falls back.
        let mut h = RegionHistory::new(10, 0.4, None);
        h.push(0.6, 0.0, 0);
        assert_eq!(estimate_theta(&h), 0.4);
    }

    #[test]
    fn theta_recovers_noiseless_linear_coefficient() {
        // |S(i)|/n_r = θ·C_r(i)·q_r(i) exactly, θ = 0.37, n_r = 100.
        let theta = 0.37_f64;
        let mut h = RegionHistory::new(100, 0.5, None);
        for (c_r, q) in [(1.0, 1.0), (1.0, 2.0), (0.5, 2.0)] {
            let s = (theta * c_r * q * 100.0).round() as usize;
            assert_abs_diff_eq!(s as f64, theta * c_r * q * 100.0); // exact by construction
            h.push(c_r, q, s);
        }
        assert_abs_diff_eq!(estimate_theta(&h), theta, epsilon = 1e-12);
    }

    // Double-double (compensated) arithmetic so the brute-force cost can
    // discriminate candidates closer than the f64 plateau around the
    // minimum allows.
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    fn dd_add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        let (s, e) = two_sum(a.0, b.0);
        let e = e + a.1 + b.1;
        two_sum(s, e)
    }

    /// (y - theta*x)^2 in double-double precision.
    fn dd_sq_residual(y: f64, theta: f64, x: f64) -> (f64, f64) {
        let (p, pe) = two_prod(theta, x);
        let (r, re) = two_sum(y, -p);
        let r_lo = re - pe;
        let (sq, sqe) = two_prod(r, r);
        dd_add((sq, sqe), (2.0 * r * r_lo, 0.0))
    }

    fn dd_cost(h: &RegionHistory, theta: f64) -> (f64, f64) {
        let mut acc = (0.0, 0.0);
        for i in 0..h.len() {
            let x = h.c_r[i] * h.q_r[i];
            let y = h.s_count[i] as f64 / h.n_r as f64;
            acc = dd_add(acc, dd_sq_residual(y, theta, x));
        }
        acc
    }

    fn dd_less(a: (f64, f64), b: (f64, f64)) -> bool {
        a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    /// Brute-force grid-refinement least squares over [lo, hi].
    fn grid_lse(h: &RegionHistory, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..40 {
            let step = (hi - lo) / 100.0;
            let mut best = lo;
            let mut best_cost = (f64::INFINITY, 0.0);
            for j in 0..=100 {
                let theta = lo + j as f64 * step;
                let c = dd_cost(h, theta);
                if dd_less(c, best_cost) {
                    best_cost = c;
                    best = theta;
                }
            }
            lo = (best - step).max(lo);
            hi = (best + step).min(hi);
            if hi - lo < 1e-13 {
                break;
            }
        }
        (lo + hi) / 2.0
    }

    #[test]
    fn theta_matches_grid_refinement_oracle() {
        let mut rng = RngFactory::new(77).stream("test/lse", &[]);
        for _ in 0..100 {
            let n_r = rng.gen_range(5..50usize);
            let mut h = RegionHistory::new(n_r, 0.5, None);
            let entries = rng.gen_range(1..20usize);
            for _ in 0..entries {
                let c_r = rng.gen_range(0.1..1.0);
                let q = rng.gen_range(0.1..2.0);
                let s = rng.gen_range(0..=n_r);
                h.push(c_r, q, s);
            }
            let Some(closed) = lse_theta(&h) else {
                continue;
            };
            let oracle = grid_lse(&h, closed - 1.0, closed + 1.0);
            assert!(
                (closed - oracle).abs() < 1e-9,
                "closed {closed} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn theta_always_in_unit_interval() {
        let mut rng = RngFactory::new(78).stream("test/clamp", &[]);
        for _ in 0..500 {
            let n_r = rng.gen_range(1..30usize);
            let mut h = RegionHistory::new(n_r, 0.5, None);
            for _ in 0..rng.gen_range(0..10usize) {
                h.push(
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.0..3.0),
                    rng.gen_range(0..=n_r),
                );
            }
            let t = estimate_theta(&h);
            assert!((THETA_FLOOR..=1.0).contains(&t), "theta {t}");
        }
    }

    #[test]
    fn selection_proportion_examples() {
        let d = selection_proportion(0.3, 0.5, 10).unwrap();
        assert_abs_diff_eq!(d.c_r, 0.6);
        assert_eq!(d.u_r_size, 6);
        assert!(!d.clamped);

        let d = selection_proportion(0.3, 1.0, 10).unwrap();
        assert_abs_diff_eq!(d.c_r, 0.3);
        assert_eq!(d.u_r_size, 3);

        // Fractional products round up: 0.3/0.63 * 9 = 4.29 -> 5 selected.
        let d = selection_proportion(0.3, 0.63, 9).unwrap();
        assert_eq!(d.u_r_size, 5);

        let d = selection_proportion(0.5, 0.4, 10).unwrap();
        assert_abs_diff_eq!(d.c_r, 1.0);
        assert!(d.clamped);
        assert_eq!(d.u_r_size, 10);

        assert!(selection_proportion(0.3, 0.0, 10).is_err());
    }

    #[test]
    fn selection_size_bounds() {
        for n_r in 1..20 {
            for theta in [0.05, 0.3, 0.7, 1.0] {
                let d = selection_proportion(0.3, theta, n_r).unwrap();
                assert!(d.u_r_size >= 1 && d.u_r_size <= n_r);
            }
        }
    }

    #[test]
    fn mc_homogeneous_matches_binomial_mean() {
        let mut rng = RngFactory::new(80).stream("test/mc", &[]);
        let p = 0.6;
        let rel = vec![p; 12];
        let trials = 20_000;
        let est = expected_survivors_mc(&rel, 7, trials, &mut rng);
        let mean = 7.0 * p;
        let se = (7.0 * p * (1.0 - p) / trials as f64).sqrt();
        assert!((est - mean).abs() < 3.0 * se, "est {est}, mean {mean}");
    }

    #[test]
    fn mc_heterogeneous_matches_linearity() {
        let mut rng = RngFactory::new(81).stream("test/mc", &[]);
        let rel = [0.1, 0.9, 0.4, 0.7, 0.2, 0.95];
        let u = 4;
        let trials = 40_000;
        let est = expected_survivors_mc(&rel, u, trials, &mut rng);
        let mean = u as f64 / rel.len() as f64 * rel.iter().sum::<f64>();
        // Conservative SE bound: variance of a sum of u Bernoullis ≤ u/4.
        let se = (u as f64 / 4.0 / trials as f64).sqrt();
        assert!((est - mean).abs() < 3.0 * se, "est {est}, mean {mean}");
    }

    #[test]
    fn mc_zero_selection_is_zero() {
        let mut rng = RngFactory::new(82).stream("test/mc", &[]);
        assert_eq!(expected_survivors_mc(&[0.5, 0.5], 0, 100, &mut rng), 0.0);
    }

    #[test]
    fn closed_loop_steers_participation_to_c() {
        // Single region, i.i.d. reliability θ* = 0.6, C = 0.3 (feasible:
        // C/θ* = 0.5 ≤ 1). The edge logs (C_r, in-time/received, received)
        // each round; mean |X|/n_r over the last half must sit at C ± 0.05.
        let n_r = 20;
        let c = 0.3;
        let theta_star = 0.6;
        let quota = round_half_up(c * n_r as f64);
        let factory = RngFactory::new(90);
        let mut participation = Vec::new();
        let mut h = RegionHistory::new(n_r, 0.5, None);
        for t in 0..100u64 {
            let d = selection_proportion(c, estimate_theta(&h), n_r).unwrap();
            let mut rng = factory.stream("test/loop", &[t]);
            let survivors = (0..d.u_r_size)
                .filter(|_| rng.gen::<f64>() < theta_star)
                .count();
            participation.push(survivors as f64 / n_r as f64);
            let in_time = survivors.min(quota);
            let q_star = if survivors > 0 {
                in_time as f64 / survivors as f64
            } else {
                0.0
            };
            h.push(d.c_r, q_star, survivors);
        }
        let last_half = &participation[50..];
        let mean = last_half.iter().sum::<f64>() / last_half.len() as f64;
        assert!((mean - c).abs() < 0.05, "participation {mean}");
    }
}
