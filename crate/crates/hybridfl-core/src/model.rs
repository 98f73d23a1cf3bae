//! Models, losses, and local full-batch gradient-descent training — the
//! client-side learning step of the protocol.
//!
//! Networks are plain MLPs over a flat parameter vector: tanh hidden layers
//! and a linear output (a scalar for regression, class logits for
//! classification). Training is deterministic full-batch gradient descent,
//! one step per epoch.

use rand::Rng;

use crate::data::{Dataset, Task};
use crate::error::{Result, SimError};
use crate::rng::RngFactory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Nll,
}

/// Layer sizes from input to output; hidden layers use tanh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub dims: Vec<usize>,
}

impl Arch {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Arch {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        Arch { dims }
    }

    /// Architecture matching a dataset: scalar output for regression,
    /// one logit per class for classification.
    pub fn for_task(input: usize, hidden: &[usize], task: Task) -> Arch {
        let output = match task {
            Task::Regression => 1,
            Task::Classification { classes } => classes,
        };
        Arch::new(input, hidden, output)
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("arch has at least two dims")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub theta: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: uniform in [-0.5, 0.5] / sqrt(fan_in) per layer.
    pub fn init(arch: Arch, rng: &RngFactory) -> ModelParams {
        let mut r = rng.stream("model/init", &[arch.dims.len() as u64]);
        let mut theta = Vec::with_capacity(arch.param_count());
        for w in arch.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt().max(1.0);
            for _ in 0..fan_in * fan_out + fan_out {
                theta.push(r.gen_range(-0.5..0.5) * scale);
            }
        }
        ModelParams { arch, theta }
    }

    pub fn zeros(arch: Arch) -> ModelParams {
        let n = arch.param_count();
        ModelParams {
            arch,
            theta: vec![0.0; n],
        }
    }

    /// Forward pass for one sample; returns the output-layer preactivations.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.arch.input_dim());
        let mut a = x.to_vec();
        let mut off = 0;
        let layers = self.arch.n_layers();
        for (l, w) in self.arch.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &self.theta[off + o * fan_in..off + (o + 1) * fan_in];
                let mut s = self.theta[off + fan_in * fan_out + o];
                for (ai, wi) in a.iter().zip(row) {
                    s += ai * wi;
                }
                z[o] = s;
            }
            off += fan_in * fan_out + fan_out;
            a = if l + 1 < layers {
                z.iter().map(|v| v.tanh()).collect()
            } else {
                z
            };
        }
        a
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn per_sample_loss(output: &[f64], target: f64, loss: LossKind) -> f64 {
    match loss {
        LossKind::Mse => {
            let e = output[0] - target;
            e * e
        }
        LossKind::Nll => {
            let p = softmax(output);
            -(p[target as usize].max(1e-300)).ln()
        }
    }
}

/// Mean loss over the dataset — F_k(w).
pub fn mean_loss(params: &ModelParams, data: &Dataset, loss: LossKind) -> f64 {
    let n = data.len() as f64;
    data.features
        .iter()
        .zip(&data.targets)
        .map(|(x, &y)| per_sample_loss(&params.forward(x), y, loss))
        .sum::<f64>()
        / n
}

/// Gradient of the mean loss by reverse-mode accumulation over all samples.
pub fn mean_loss_gradient(params: &ModelParams, data: &Dataset, loss: LossKind) -> Vec<f64> {
    let arch = &params.arch;
    let layers = arch.n_layers();
    let mut grad = vec![0.0; params.theta.len()];
    let inv_n = 1.0 / data.len() as f64;

    // Layer offsets into the flat vector.
    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0;
    for w in arch.dims.windows(2) {
        offsets.push(off);
        off += w[0] * w[1] + w[1];
    }

    for (x, &y) in data.features.iter().zip(&data.targets) {
        // Forward, keeping each layer's post-activation.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for (l, w) in arch.dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let off = offsets[l];
            let prev = &acts[l];
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &params.theta[off + o * fan_in..off + (o + 1) * fan_in];
                let mut s = params.theta[off + fan_in * fan_out + o];
                for (ai, wi) in prev.iter().zip(row) {
                    s += ai * wi;
                }
                z[o] = s;
            }
            if l + 1 < layers {
                z = z.iter().map(|v| v.tanh()).collect();
            }
            acts.push(z);
        }

        // dL/d(output preactivation).
        let out = &acts[layers];
        let mut delta: Vec<f64> = match loss {
            LossKind::Mse => vec![2.0 * (out[0] - y)],
            LossKind::Nll => {
                let mut p = softmax(out);
                p[y as usize] -= 1.0;
                p
            }
        };

        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (arch.dims[l], arch.dims[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..fan_out {
                let d = delta[o] * inv_n;
                let gw = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, a) in gw.iter_mut().zip(prev) {
                    *g += d * a;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let mut next = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &params.theta[off + o * fan_in..off + (o + 1) * fan_in];
                    for (ni, wi) in next.iter_mut().zip(row) {
                        *ni += delta[o] * wi;
                    }
                }
                // Activations are tanh; derivative from the stored value.
                for (ni, a) in next.iter_mut().zip(prev) {
                    *ni *= 1.0 - a * a;
                }
                delta = next;
            }
        }
    }
    grad
}

/// Exactly `tau` full-batch gradient-descent steps on the mean loss.
pub fn local_train(
    params: &ModelParams,
    data: &Dataset,
    tau: usize,
    eta: f64,
    loss: LossKind,
) -> Result<ModelParams> {
    if data.is_empty() {
        return Err(SimError::Domain("cannot train on an empty dataset".into()));
    }
    if tau == 0 {
        return Err(SimError::Domain("tau must be >= 1".into()));
    }
    if eta < 0.0 {
        return Err(SimError::Domain("eta must be nonnegative".into()));
    }
    let mut out = params.clone();
    for epoch in 1..=tau {
        let g = mean_loss_gradient(&out, data, loss);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SimError::TrainingDiverged { epoch });
        }
        for (t, gi) in out.theta.iter_mut().zip(&g) {
            *t -= eta * gi;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eval {
    pub loss: f64,
    /// Accuracy for classification, R² for regression.
    pub metric: f64,
}

pub fn evaluate(params: &ModelParams, data: &Dataset, loss: LossKind) -> Eval {
    let mean = mean_loss(params, data, loss);
    let metric = match loss {
        LossKind::Mse => {
            let n = data.len() as f64;
            let ybar = data.targets.iter().sum::<f64>() / n;
            let ss_tot: f64 = data.targets.iter().map(|y| (y - ybar).powi(2)).sum();
            let ss_res: f64 = data
                .features
                .iter()
                .zip(&data.targets)
                .map(|(x, &y)| (params.forward(x)[0] - y).powi(2))
                .sum();
            if ss_tot <= 0.0 {
                if ss_res <= 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - ss_res / ss_tot
            }
        }
        LossKind::Nll => {
            let correct = data
                .features
                .iter()
                .zip(&data.targets)
                .filter(|(x, &y)| {
                    let out = params.forward(x);
                    let argmax = out
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    argmax == y as usize
                })
                .count();
            correct as f64 / data.len() as f64
        }
    };
    Eval { loss: mean, metric }
}

/// Loss kind implied by the dataset's task.
pub fn loss_for(task: Task) -> LossKind {
    match task {
        Task::Regression => LossKind::Mse,
        Task::Classification { .. } => LossKind::Nll,
    }
}

/// Central finite-difference gradient of the mean loss; test oracle.
pub fn finite_difference_gradient(
    params: &ModelParams,
    data: &Dataset,
    loss: LossKind,
    h: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; params.theta.len()];
    let mut probe = params.clone();
    for i in 0..g.len() {
        let orig = probe.theta[i];
        probe.theta[i] = orig + h;
        let plus = mean_loss(&probe, data, loss);
        probe.theta[i] = orig - h;
        let minus = mean_loss(&probe, data, loss);
        probe.theta[i] = orig;
        g[i] = (plus - minus) / (2.0 * h);
    }
    g
}
