//! World construction: regions, client profiles sampled from configured
//! distributions, and data partitions (Gaussian-sized or label-skewed
//! non-IID).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{Gaussian, PartitionSpec, SimConfig};
use crate::data::{Dataset, Task};
use crate::error::{Result, SimError};
use crate::rng::RngFactory;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub id: usize,
    pub region: usize,
    /// Indices of this client's samples in the dataset (partition D_k^r).
    pub data: Vec<usize>,
    /// CPU speed in GHz.
    pub speed: f64,
    /// Channel bandwidth in MHz.
    pub bandwidth: f64,
    /// Per-round drop-out probability; survival P_k = 1 - dropout.
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct Topology {
    /// Client ids per edge node; `regions.len() == m`.
    pub regions: Vec<Vec<usize>>,
    pub clients: Vec<ClientProfile>,
    pub dataset: Dataset,
}

impl Topology {
    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn m(&self) -> usize {
        self.regions.len()
    }

    /// Σ_k |D_k^r| for region r.
    pub fn region_data_size(&self, r: usize) -> usize {
        self.regions[r]
            .iter()
            .map(|&k| self.clients[k].data.len())
            .sum()
    }

    pub fn total_data_size(&self) -> usize {
        self.clients.iter().map(|c| c.data.len()).sum()
    }

    /// Materialize client k's partition as an owned dataset.
    pub fn client_dataset(&self, k: usize) -> Dataset {
        let idx = &self.clients[k].data;
        Dataset {
            features: idx.iter().map(|&i| self.dataset.features[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.dataset.targets[i]).collect(),
            task: self.dataset.task,
        }
    }
}

/// Draw from N(mean, std²) rejecting non-positive values; after 100 attempts
/// fall back to mean/100 (the distributions in play are far from zero, so the
/// clamp is a never-in-practice safety net).
fn sample_positive(g: Gaussian, rng: &mut ChaCha8Rng) -> f64 {
    if g.std == 0.0 {
        return g.mean;
    }
    let normal = Normal::new(g.mean, g.std).expect("validated gaussian");
    for _ in 0..100 {
        let v = normal.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
    g.mean / 100.0
}

fn sample_probability(mean: f64, std: f64, rng: &mut ChaCha8Rng) -> f64 {
    if std == 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    let normal = Normal::new(mean, std).expect("validated gaussian");
    normal.sample(rng).clamp(0.0, 1.0)
}

/// Proportionally rescale positive weights to integers summing to `total`,
/// each at least 1, by largest-remainder rounding (ties broken by index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let n = weights.len();
    assert!(total >= n, "total must allow at least 1 per slot");
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).expect("finite quotas").then(a.cmp(&b))
    });
    let mut cursor = 0;
    while assigned < total {
        sizes[order[cursor % n]] += 1;
        assigned += 1;
        cursor += 1;
    }
    // Enforce the ≥1 floor by taking from the largest slots.
    loop {
        let Some(zero) = sizes.iter().position(|&s| s == 0) else {
            break;
        };
        let max = (0..n)
            .max_by_key(|&i| sizes[i])
            .expect("nonempty sizes");
        sizes[max] -= 1;
        sizes[zero] += 1;
    }
    sizes
}

/// Partition sizes drawn from N(mean, std²) and rescaled (largest remainder)
/// to sum exactly to `total`, each ≥ 1.
pub fn partition_gaussian(
    total: usize,
    n: usize,
    g: Gaussian,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if total < n {
        return Err(SimError::Domain(format!(
            "cannot split {total} samples among {n} clients with at least 1 each"
        )));
    }
    let weights: Vec<f64> = (0..n).map(|_| sample_positive(g, rng)).collect();
    Ok(largest_remainder(&weights, total))
}

/// Label-skewed assignment: a sample of class y lands on a client whose id is
/// congruent to y modulo the class count with probability `affinity`, else on
/// a uniformly random client. Returns the owning client per sample.
pub fn partition_label_skew(
    labels: &[usize],
    n: usize,
    classes: usize,
    affinity: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if affinity > 0.0 && n < classes {
        return Err(SimError::Domain(format!(
            "label skew needs n >= classes ({n} < {classes})"
        )));
    }
    let congruent: Vec<Vec<usize>> = (0..classes)
        .map(|y| (y..n).step_by(classes).collect())
        .collect();
    labels
        .iter()
        .map(|&y| {
            if y >= classes {
                return Err(SimError::Domain(format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
            let owner = if affinity > 0.0 && rng.gen::<f64>() < affinity {
                let pool = &congruent[y];
                pool[rng.gen_range(0..pool.len())]
            } else {
                rng.gen_range(0..n)
            };
            Ok(owner)
        })
        .collect()
}

/// Build the full world from a validated config: region sizes, client
/// hardware/reliability profiles, dataset, and per-client partitions.
/// Deterministic for a fixed (config, seed).
pub fn build_topology(cfg: &SimConfig, rng: &RngFactory) -> Result<Topology> {
    cfg.validate()?;

    let region_sizes = match &cfg.region_sizes {
        Some(sizes) => sizes.clone(),
        None => {
            let mut r = rng.stream("topology/regions", &[]);
            let weights: Vec<f64> = (0..cfg.m)
                .map(|_| sample_positive(cfg.region_population, &mut r))
                .collect();
            largest_remainder(&weights, cfg.n)
        }
    };

    let mut regions = Vec::with_capacity(cfg.m);
    let mut next_id = 0;
    for &size in &region_sizes {
        regions.push((next_id..next_id + size).collect::<Vec<_>>());
        next_id += size;
    }

    let dataset = Dataset::build(&cfg.dataset, rng)?;
    if dataset.len() < cfg.n {
        return Err(SimError::Config(format!(
            "dataset has {} samples for {} clients",
            dataset.len(),
            cfg.n
        )));
    }

    let mut profile_rng = rng.stream("topology/profiles", &[]);
    let mut clients = Vec::with_capacity(cfg.n);
    for (r, ids) in regions.iter().enumerate() {
        for &id in ids {
            let speed = sample_positive(cfg.speed, &mut profile_rng);
            let bandwidth = sample_positive(cfg.bandwidth, &mut profile_rng);
            let dropout = match &cfg.reliability_means {
                Some(means) => {
                    1.0 - sample_probability(means[r], cfg.reliability_std, &mut profile_rng)
                }
                None => sample_probability(cfg.dropout.mean, cfg.dropout.std, &mut profile_rng),
            };
            clients.push(ClientProfile {
                id,
                region: r,
                data: Vec::new(),
                speed,
                bandwidth,
                dropout,
            });
        }
    }

    let mut part_rng = rng.stream("topology/partition", &[]);
    match &cfg.partition {
        PartitionSpec::Gaussian(g) => {
            let sizes = partition_gaussian(dataset.len(), cfg.n, *g, &mut part_rng)?;
            let mut cursor = 0;
            for (client, &size) in clients.iter_mut().zip(&sizes) {
                client.data = (cursor..cursor + size).collect();
                cursor += size;
            }
        }
        PartitionSpec::LabelSkew { affinity } => {
            let classes = match dataset.task {
                Task::Classification { classes } => classes,
                Task::Regression => {
                    return Err(SimError::Config(
                        "label-skew partitioning needs a classification dataset".into(),
                    ))
                }
            };
            let labels: Vec<usize> = dataset.targets.iter().map(|&y| y as usize).collect();
            let owners = partition_label_skew(&labels, cfg.n, classes, *affinity, &mut part_rng)?;
            for (sample, owner) in owners.iter().enumerate() {
                clients[*owner].data.push(sample);
            }
            // Every client needs ≥1 sample to train; move singles from the
            // richest clients into any empty ones (deterministic order).
            loop {
                let Some(empty) = clients.iter().position(|c| c.data.is_empty()) else {
                    break;
                };
                let richest = (0..clients.len())
                    .max_by_key(|&k| clients[k].data.len())
                    .expect("nonempty client list");
                let moved = clients[richest].data.pop().expect("richest has samples");
                clients[empty].data.push(moved);
            }
        }
    }

    Ok(Topology {
        regions,
        clients,
        dataset,
    })
}
