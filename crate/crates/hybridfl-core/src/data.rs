//! Datasets: a whitespace-separated numeric table loader (5 features +
//! scalar target, standardized per column) and synthetic generators for
//! regression and classification.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::DatasetSpec;
use crate::error::{Result, SimError};
use crate::rng::RngFactory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    /// Regression: standardized target. Classification: class index as f64.
    pub targets: Vec<f64>,
    pub task: Task,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn build(spec: &DatasetSpec, rng: &RngFactory) -> Result<Dataset> {
        match spec {
            DatasetSpec::Aerofoil { path } => load_table(Path::new(path)),
            DatasetSpec::SyntheticRegression {
                n_samples,
                d,
                noise_std,
            } => Ok(synthesize_regression(*n_samples, *d, *noise_std, rng)),
            DatasetSpec::SyntheticClassification {
                n_samples,
                d,
                classes,
            } => Ok(synthesize_classification(*n_samples, *d, *classes, rng)),
        }
    }
}

/// Load a whitespace-separated numeric table; the last column is the target,
/// the rest are features. All columns are standardized to zero mean and unit
/// variance so the network trains on comparable scales.
pub fn load_table(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ix, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| SimError::Parse {
                    line: ix + 1,
                    message: format!("non-numeric token '{tok}'"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(SimError::Parse {
                    line: ix + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if cols < 2 {
        return Err(SimError::Domain(
            "dataset needs at least one feature column and one target column".into(),
        ));
    }
    standardize_columns(&mut rows);
    let features = rows.iter().map(|r| r[..cols - 1].to_vec()).collect();
    let targets = rows.iter().map(|r| r[cols - 1]).collect();
    Ok(Dataset {
        features,
        targets,
        task: Task::Regression,
    })
}

fn standardize_columns(rows: &mut [Vec<f64>]) {
    let n = rows.len() as f64;
    let cols = rows.first().map_or(0, Vec::len);
    for c in 0..cols {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-12);
        for r in rows.iter_mut() {
            r[c] = (r[c] - mean) / std;
        }
    }
}

/// y = w*x + b + noise with fixed random ground-truth weights; everything is
/// drawn from the dataset substream of the factory, so the corpus is a pure
/// function of the root seed.
///
/// Features are drawn around per-block cluster centers (one cluster per 100
/// consecutive rows), mirroring the locality of real sensor tables: each
/// contiguous client partition then covers a distinct slice of the input
/// space, which is what makes the federated setting non-IID.
pub fn synthesize_regression(n: usize, d: usize, noise_std: f64, rng: &RngFactory) -> Dataset {
    const BLOCK: usize = 100;
    const CENTER_SPREAD: f64 = 1.0;
    const WITHIN_STD: f64 = 0.5;
    let mut r = rng.stream("dataset/regression", &[n as u64, d as u64]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let w: Vec<f64> = (0..d).map(|_| normal.sample(&mut r)).collect();
    let b: f64 = normal.sample(&mut r);
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("noise normal");
    let n_clusters = n.div_ceil(BLOCK).max(1);
    let centers: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..d).map(|_| CENTER_SPREAD * normal.sample(&mut r)).collect())
        .collect();
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let c = &centers[i / BLOCK];
        let x: Vec<f64> = c.iter().map(|ci| ci + WITHIN_STD * normal.sample(&mut r)).collect();
        let y: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b + noise.sample(&mut r);
        features.push(x);
        targets.push(y);
    }
    // Standardize targets so losses are comparable across draws of w.
    let mean = targets.iter().sum::<f64>() / n as f64;
    let std = (targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    for y in &mut targets {
        *y = (*y - mean) / std;
    }
    Dataset {
        features,
        targets,
        task: Task::Regression,
    }
}

/// Gaussian blobs: one unit-variance cluster per class around a random
/// center, labels balanced round-robin.
pub fn synthesize_classification(n: usize, d: usize, classes: usize, rng: &RngFactory) -> Dataset {
    let classes = classes.max(2);
    let mut r = rng.stream("dataset/classification", &[n as u64, d as u64, classes as u64]);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| 2.0 * normal.sample(&mut r)).collect())
        .collect();
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let x: Vec<f64> = centers[y]
            .iter()
            .map(|c| c + normal.sample(&mut r))
            .collect();
        features.push(x);
        targets.push(y as f64);
    }
    // Shuffle so contiguous partitions do not align with label order.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
    let features = order.iter().map(|&i| features[i].clone()).collect();
    let targets = order.iter().map(|&i| targets[i]).collect();
    Dataset {
        features,
        targets,
        task: Task::Classification { classes },
    }
}
