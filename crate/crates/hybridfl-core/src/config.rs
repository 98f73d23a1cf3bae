//! Simulation configuration: a flat key/value file mirroring the symbols of
//! the experimental setup (n, m, C, tau, t_max, eta, SNR, BR, BPS, CPB, ...),
//! plus named presets.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    HybridFl,
    FedAvg,
    HierFavg { kappa2: usize },
}

impl ProtocolKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolKind::HybridFl => "hybridfl",
            ProtocolKind::FedAvg => "fedavg",
            ProtocolKind::HierFavg { .. } => "hierfavg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Whitespace-separated numeric table, 6 columns (5 features + target).
    Aerofoil { path: String },
    /// Random linear regression target plus Gaussian noise.
    SyntheticRegression {
        n_samples: usize,
        d: usize,
        noise_std: f64,
    },
    /// Gaussian class blobs for a softmax classifier.
    SyntheticClassification {
        n_samples: usize,
        d: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionSpec {
    /// Partition sizes drawn from a Gaussian, rescaled to cover the dataset.
    Gaussian(Gaussian),
    /// Label-skewed non-IID assignment: a sample of class y lands on a client
    /// with id congruent to y with probability `affinity`.
    LabelSkew { affinity: f64 },
}

/// How the per-region estimator history is filled by the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryMode {
    /// The edge keeps counting model arrivals after the aggregation signal
    /// (until the response-time limit) and logs the received count together
    /// with the in-time fraction. Default; reproduces the published traces.
    Received,
    /// Strictly quota-count bookkeeping: q = |S_r|/(C*n_r) and the in-time
    /// submission count. Self-referential: the slack estimate never leaves
    /// its initial value (kept for comparison runs).
    QuotaCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub tau: usize,
    pub t_max: usize,
    pub eta: f64,
    pub seed: u64,

    pub speed: Gaussian,     // GHz
    pub bandwidth: Gaussian, // MHz
    pub dropout: Gaussian,   // probability per round
    /// Per-region reliability means (P = 1 - dr). Overrides `dropout.mean`.
    pub reliability_means: Option<Vec<f64>>,
    pub reliability_std: f64,
    pub region_population: Gaussian,
    /// Explicit region sizes; overrides sampled populations.
    pub region_sizes: Option<Vec<usize>>,

    pub snr: f64,
    pub br_mbps: f64,
    pub msize_bits: f64,
    pub bps: f64,
    pub cpb: f64,
    pub parallel_backhaul: bool,

    pub protocol: ProtocolKind,
    pub theta_init: f64,
    /// Sliding window over estimator history; None = all past rounds.
    pub history_window: Option<usize>,
    pub history_mode: HistoryMode,

    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    /// Hidden layer sizes of the trained network (empty = linear model).
    pub hidden: Vec<usize>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(SimError::Config(m));
        if self.n == 0 || self.m == 0 {
            return err("n and m must be positive".into());
        }
        if self.m > self.n {
            return err(format!("m = {} exceeds n = {}", self.m, self.n));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return err(format!("C = {} outside (0, 1]", self.c));
        }
        if self.tau == 0 {
            return err("tau must be >= 1".into());
        }
        if self.eta < 0.0 {
            return err("eta must be nonnegative".into());
        }
        if !(self.theta_init > 0.0 && self.theta_init <= 1.0) {
            return err(format!("theta_init = {} outside (0, 1]", self.theta_init));
        }
        for (name, g) in [
            ("speed", self.speed),
            ("bandwidth", self.bandwidth),
            ("region_population", self.region_population),
        ] {
            if g.mean <= 0.0 || g.std < 0.0 {
                return err(format!("{name} distribution must have mean > 0, std >= 0"));
            }
        }
        if let Some(sizes) = &self.region_sizes {
            if sizes.len() != self.m {
                return err("region_sizes length must equal m".into());
            }
            if sizes.iter().sum::<usize>() != self.n {
                return err("region_sizes must sum to n".into());
            }
            if sizes.iter().any(|&s| s == 0) {
                return err("every region needs at least one client".into());
            }
        }
        if let Some(means) = &self.reliability_means {
            if means.len() != self.m {
                return err("reliability_means length must equal m".into());
            }
        }
        if self.snr <= 0.0 || self.br_mbps <= 0.0 || self.msize_bits <= 0.0 {
            return err("SNR, BR and msize must be positive".into());
        }
        if self.bps <= 0.0 || self.cpb <= 0.0 {
            return err("BPS and CPB must be positive".into());
        }
        if let ProtocolKind::HierFavg { kappa2 } = self.protocol {
            if kappa2 == 0 {
                return err("kappa2 must be >= 1".into());
            }
        }
        if let PartitionSpec::LabelSkew { affinity } = self.partition {
            if !(0.0..=1.0).contains(&affinity) {
                return err(format!("affinity = {affinity} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn with_protocol(&self, protocol: ProtocolKind) -> SimConfig {
        let mut c = self.clone();
        c.protocol = protocol;
        c
    }

    pub fn br_bits_per_sec(&self) -> f64 {
        self.br_mbps * 1e6
    }

    /// Task-1 benchmark constants (Aerofoil-style regression, 15 clients, 3 edges).
    pub fn task1() -> SimConfig {
        SimConfig {
            n: 15,
            m: 3,
            c: 0.3,
            tau: 5,
            t_max: 600,
            eta: 1e-4,
            seed: 1,
            speed: Gaussian::new(0.5, 0.1),
            bandwidth: Gaussian::new(0.5, 0.1),
            dropout: Gaussian::new(0.1, 0.05),
            reliability_means: None,
            reliability_std: 0.15,
            region_population: Gaussian::new(5.0, 1.5),
            region_sizes: None,
            snr: 1e2,
            br_mbps: 1e3,
            msize_bits: 5.0 * 8e6, // 5 MB
            bps: 6.0 * 8.0 * 8.0,  // 384
            cpb: 300.0,
            parallel_backhaul: false,
            protocol: ProtocolKind::HybridFl,
            theta_init: 0.5,
            history_window: None,
            history_mode: HistoryMode::Received,
            dataset: DatasetSpec::SyntheticRegression {
                n_samples: 1503,
                d: 5,
                noise_std: 0.3,
            },
            partition: PartitionSpec::Gaussian(Gaussian::new(100.0, 30.0)),
            hidden: vec![16, 16],
        }
    }

    /// Slack-factor trace reproduction: 2 regions of 11 and 9 clients with
    /// per-region reliability means 0.43 / 0.57, C = 0.3, 100 rounds.
    pub fn fig2() -> SimConfig {
        let mut c = SimConfig::task1();
        c.n = 20;
        c.m = 2;
        c.t_max = 100;
        c.region_sizes = Some(vec![11, 9]);
        c.reliability_means = Some(vec![0.43, 0.57]);
        c.reliability_std = 0.15;
        c.dataset = DatasetSpec::SyntheticRegression {
            n_samples: 2000,
            d: 5,
            noise_std: 0.3,
        };
        c.hidden = vec![];
        c
    }

    /// Reduced-scale stand-in for the Task-2 benchmark: 50 clients, 3 edges,
    /// label-skewed synthetic classification with the Task 2 timing constants.
    pub fn task2_small() -> SimConfig {
        SimConfig {
            n: 50,
            m: 3,
            c: 0.3,
            tau: 5,
            t_max: 60,
            eta: 1e-2,
            seed: 1,
            speed: Gaussian::new(1.0, 0.3),
            bandwidth: Gaussian::new(1.0, 0.3),
            dropout: Gaussian::new(0.3, 0.05),
            reliability_means: None,
            reliability_std: 0.15,
            region_population: Gaussian::new(50.0 / 3.0, 5.0),
            region_sizes: None,
            snr: 1e2,
            br_mbps: 1e3,
            msize_bits: 10.0 * 8e6, // 10 MB
            bps: 28.0 * 28.0 * 8.0, // 6272
            cpb: 400.0,
            parallel_backhaul: false,
            protocol: ProtocolKind::HybridFl,
            theta_init: 0.5,
            history_window: None,
            history_mode: HistoryMode::Received,
            dataset: DatasetSpec::SyntheticClassification {
                n_samples: 7000,
                d: 16,
                classes: 10,
            },
            partition: PartitionSpec::LabelSkew { affinity: 0.75 },
            hidden: vec![32],
        }
    }

    /// Full Task-2 benchmark (500 clients, LeNet-scale timing). Provided as a
    /// large optional config; not exercised by the test suite.
    pub fn task2_full() -> SimConfig {
        let mut c = SimConfig::task2_small();
        c.n = 500;
        c.m = 10;
        c.t_max = 400;
        c.eta = 1e-3;
        c.region_population = Gaussian::new(50.0, 15.0);
        c.dataset = DatasetSpec::SyntheticClassification {
            n_samples: 70_000,
            d: 64,
            classes: 10,
        };
        c
    }

    pub fn preset(name: &str) -> Result<SimConfig> {
        match name {
            "task1" => Ok(SimConfig::task1()),
            "fig2" => Ok(SimConfig::fig2()),
            "task2-small" => Ok(SimConfig::task2_small()),
            "task2" => Ok(SimConfig::task2_full()),
            other => Err(SimError::Config(format!("unknown preset '{other}'"))),
        }
    }

    /// Parse a flat `key = value` file on top of the task1 defaults.
    pub fn from_file(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        SimConfig::from_str_keys(&text)
    }

    pub fn from_str_keys(text: &str) -> Result<SimConfig> {
        let mut kv = BTreeMap::new();
        for (ix, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(SimError::Parse {
                line: ix + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            kv.insert(k.trim().to_string(), (ix + 1, v.trim().to_string()));
        }
        let mut cfg = match kv.get("preset") {
            Some((_, name)) => SimConfig::preset(name)?,
            None => SimConfig::task1(),
        };
        apply_keys(&mut cfg, &kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_keys(cfg: &mut SimConfig, kv: &BTreeMap<String, (usize, String)>) -> Result<()> {
    fn parse<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| SimError::Parse {
            line,
            message: format!("invalid value '{v}' for key '{key}'"),
        })
    }
    for (key, (line, v)) in kv {
        let line = *line;
        match key.as_str() {
            "preset" => {}
            "n" => cfg.n = parse(line, key, v)?,
            "m" => cfg.m = parse(line, key, v)?,
            "C" | "c" => cfg.c = parse(line, key, v)?,
            "tau" => cfg.tau = parse(line, key, v)?,
            "t_max" => cfg.t_max = parse(line, key, v)?,
            "eta" => cfg.eta = parse(line, key, v)?,
            "seed" => cfg.seed = parse(line, key, v)?,
            "speed_mean" => cfg.speed.mean = parse(line, key, v)?,
            "speed_std" => cfg.speed.std = parse(line, key, v)?,
            "bw_mean" => cfg.bandwidth.mean = parse(line, key, v)?,
            "bw_std" => cfg.bandwidth.std = parse(line, key, v)?,
            "dr_mean" => cfg.dropout.mean = parse(line, key, v)?,
            "dr_std" => cfg.dropout.std = parse(line, key, v)?,
            "reliability_means" => {
                cfg.reliability_means = Some(parse_list(line, key, v)?);
            }
            "reliability_std" => cfg.reliability_std = parse(line, key, v)?,
            "region_mean" => cfg.region_population.mean = parse(line, key, v)?,
            "region_std" => cfg.region_population.std = parse(line, key, v)?,
            "regions" => {
                let sizes: Vec<f64> = parse_list(line, key, v)?;
                cfg.region_sizes = Some(sizes.into_iter().map(|s| s as usize).collect());
            }
            "snr" | "SNR" => cfg.snr = parse(line, key, v)?,
            "br_mbps" | "BR" => cfg.br_mbps = parse(line, key, v)?,
            "msize_mb" => cfg.msize_bits = parse::<f64>(line, key, v)? * 8e6,
            "msize_bits" => cfg.msize_bits = parse(line, key, v)?,
            "bps" | "BPS" => cfg.bps = parse(line, key, v)?,
            "cpb" | "CPB" => cfg.cpb = parse(line, key, v)?,
            "parallel_backhaul" => cfg.parallel_backhaul = parse(line, key, v)?,
            "protocol" => {
                cfg.protocol = match v.as_str() {
                    "hybridfl" => ProtocolKind::HybridFl,
                    "fedavg" => ProtocolKind::FedAvg,
                    "hierfavg" => ProtocolKind::HierFavg {
                        kappa2: match cfg.protocol {
                            ProtocolKind::HierFavg { kappa2 } => kappa2,
                            _ => 10,
                        },
                    },
                    other => {
                        return Err(SimError::Parse {
                            line,
                            message: format!("unknown protocol '{other}'"),
                        })
                    }
                }
            }
            "kappa2" => {
                cfg.protocol = ProtocolKind::HierFavg {
                    kappa2: parse(line, key, v)?,
                }
            }
            "theta_init" => cfg.theta_init = parse(line, key, v)?,
            "history_window" => cfg.history_window = Some(parse(line, key, v)?),
            "history_mode" => {
                cfg.history_mode = match v.as_str() {
                    "received" => HistoryMode::Received,
                    "quota-count" => HistoryMode::QuotaCount,
                    other => {
                        return Err(SimError::Parse {
                            line,
                            message: format!("unknown history_mode '{other}'"),
                        })
                    }
                }
            }
            "dataset" => {
                cfg.dataset = match v.as_str() {
                    "aerofoil" => DatasetSpec::Aerofoil {
                        path: "data/airfoil_self_noise.dat".into(),
                    },
                    "synthetic-regression" => DatasetSpec::SyntheticRegression {
                        n_samples: 1503,
                        d: 5,
                        noise_std: 0.3,
                    },
                    "synthetic-classification" => DatasetSpec::SyntheticClassification {
                        n_samples: 7000,
                        d: 16,
                        classes: 10,
                    },
                    other => {
                        return Err(SimError::Parse {
                            line,
                            message: format!("unknown dataset '{other}'"),
                        })
                    }
                }
            }
            "dataset_path" => {
                if let DatasetSpec::Aerofoil { path } = &mut cfg.dataset {
                    *path = v.clone();
                } else {
                    cfg.dataset = DatasetSpec::Aerofoil { path: v.clone() };
                }
            }
            "dataset_size" => match &mut cfg.dataset {
                DatasetSpec::SyntheticRegression { n_samples, .. }
                | DatasetSpec::SyntheticClassification { n_samples, .. } => {
                    *n_samples = parse(line, key, v)?
                }
                DatasetSpec::Aerofoil { .. } => {}
            },
            "features" => match &mut cfg.dataset {
                DatasetSpec::SyntheticRegression { d, .. }
                | DatasetSpec::SyntheticClassification { d, .. } => *d = parse(line, key, v)?,
                DatasetSpec::Aerofoil { .. } => {}
            },
            "noise_std" => {
                if let DatasetSpec::SyntheticRegression { noise_std, .. } = &mut cfg.dataset {
                    *noise_std = parse(line, key, v)?;
                }
            }
            "classes" => {
                if let DatasetSpec::SyntheticClassification { classes, .. } = &mut cfg.dataset {
                    *classes = parse(line, key, v)?;
                }
            }
            "partition_mean" | "partition_std" => {
                let g = match &mut cfg.partition {
                    PartitionSpec::Gaussian(g) => g,
                    PartitionSpec::LabelSkew { .. } => {
                        cfg.partition = PartitionSpec::Gaussian(Gaussian::new(100.0, 30.0));
                        match &mut cfg.partition {
                            PartitionSpec::Gaussian(g) => g,
                            _ => unreachable!(),
                        }
                    }
                };
                if key == "partition_mean" {
                    g.mean = parse(line, key, v)?;
                } else {
                    g.std = parse(line, key, v)?;
                }
            }
            "label_affinity" => {
                cfg.partition = PartitionSpec::LabelSkew {
                    affinity: parse(line, key, v)?,
                }
            }
            "hidden" => {
                // An empty value means no hidden layers (a linear model).
                if v.trim().is_empty() {
                    cfg.hidden = Vec::new();
                } else {
                    let sizes: Vec<f64> = parse_list(line, key, v)?;
                    cfg.hidden = sizes.into_iter().map(|s| s as usize).collect();
                }
            }
            other => {
                return Err(SimError::Parse {
                    line,
                    message: format!("unknown config key '{other}'"),
                })
            }
        }
    }
    Ok(())
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim().parse().map_err(|_| SimError::Parse {
                line,
                message: format!("invalid list entry '{s}' for key '{key}'"),
            })
        })
        .collect()
}
