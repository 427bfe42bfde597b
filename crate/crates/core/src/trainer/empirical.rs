use rand::seq::SliceRandom;

use crate::envs::{task_rng, Dataset};
use crate::error::{Error, Result};
use crate::popmath::{pairwise_spread, variance_with_weights, Lambda, Objective, PenaltyKind};

use super::model::{Forward, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    Sgd,
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam,
}

impl StepRule {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(StepRule::Sgd),
            "adam" => Ok(StepRule::Adam),
            other => Err(Error::Config(format!(
                "unknown step rule '{other}' (expected sgd or adam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalConfig {
    pub epochs: usize,
    /// Per-environment batch size; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    /// Steps trained with the penalty weight capped at 1 before the full λ applies.
    pub anneal_steps: usize,
    pub step_rule: StepRule,
    /// Coefficient of `‖θ‖²` added to the summed risk.
    pub weight_decay: f64,
}

impl Default for EmpiricalConfig {
    fn default() -> Self {
        EmpiricalConfig {
            epochs: 100,
            batch_size: None,
            learning_rate: 0.1,
            seed: 0,
            anneal_steps: 0,
            step_rule: StepRule::Sgd,
            weight_decay: 0.0,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryPoint {
    pub step: usize,
    pub objective: f64,
    pub mean_risk: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<HistoryPoint>,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub risk: f64,
    pub accuracy: f64,
}

/// Mean square loss and sign accuracy; an output of exactly 0 counts as a wrong prediction.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fwd = model.forward(&data.x1, &data.x2);
    let n = data.len() as f64;
    let risk = fwd
        .outputs
        .iter()
        .zip(&data.y)
        .map(|(f, y)| 0.5 * (f - y).powi(2))
        .sum::<f64>()
        / n;
    let correct = fwd
        .outputs
        .iter()
        .zip(&data.y)
        .filter(|(f, y)| **f * **y > 0.0)
        .count();
    Ok(Evaluation {
        risk,
        accuracy: correct as f64 / n,
    })
}

struct EnvBatch {
    fwd: Forward,
    y: Vec<f64>,
}

/// Penalty value, then per-environment `∂L/∂f` and optional `∂L/∂features`.
type PenaltySeeds = (f64, Vec<Vec<f64>>, Vec<Option<Vec<f64>>>);

/// Per-environment seeds `∂L/∂f` and `∂L/∂features` for the penalty of one step.
fn penalty_seeds(kind: PenaltyKind, batches: &[EnvBatch]) -> Result<PenaltySeeds> {
    let m = batches.len();
    let mut seed_out: Vec<Vec<f64>> = batches.iter().map(|b| vec![0.0; b.y.len()]).collect();
    let mut seed_feat: Vec<Option<Vec<f64>>> = vec![None; m];
    let value = match kind {
        PenaltyKind::Icorr => {
            let mut rho = Vec::with_capacity(m);
            let mut ybar = Vec::with_capacity(m);
            for b in batches {
                let n = b.y.len() as f64;
                let fbar = b.fwd.outputs.iter().sum::<f64>() / n;
                rho.push(
                    b.fwd
                        .outputs
                        .iter()
                        .zip(&b.y)
                        .map(|(f, y)| (f - fbar) * y)
                        .sum::<f64>()
                        / n,
                );
                ybar.push(b.y.iter().sum::<f64>() / n);
            }
            let (var, dv) = variance_with_weights(&rho);
            for (e, b) in batches.iter().enumerate() {
                let n = b.y.len() as f64;
                for (s, y) in seed_out[e].iter_mut().zip(&b.y) {
                    *s = dv[e] * (y - ybar[e]) / n;
                }
            }
            var
        }
        PenaltyKind::Irmv1 => {
            let mut total = 0.0;
            for (e, b) in batches.iter().enumerate() {
                let n = b.y.len() as f64;
                let dg = b
                    .fwd
                    .outputs
                    .iter()
                    .zip(&b.y)
                    .map(|(f, y)| (f - y) * f)
                    .sum::<f64>()
                    / n;
                total += dg * dg;
                for ((s, f), y) in seed_out[e].iter_mut().zip(&b.fwd.outputs).zip(&b.y) {
                    *s = 2.0 * dg * (2.0 * f - y) / n;
                }
            }
            total
        }
        PenaltyKind::Vrex => {
            let risks: Vec<f64> = batches
                .iter()
                .map(|b| {
                    b.fwd
                        .outputs
                        .iter()
                        .zip(&b.y)
                        .map(|(f, y)| 0.5 * (f - y).powi(2))
                        .sum::<f64>()
                        / b.y.len() as f64
                })
                .collect();
            let (var, dv) = variance_with_weights(&risks);
            for (e, b) in batches.iter().enumerate() {
                let n = b.y.len() as f64;
                for ((s, f), y) in seed_out[e].iter_mut().zip(&b.fwd.outputs).zip(&b.y) {
                    *s = dv[e] * (f - y) / n;
                }
            }
            var
        }
        PenaltyKind::Iga => {
            let grads: Vec<Vec<f64>> = batches
                .iter()
                .map(|b| {
                    let d = b.fwd.feature_dim;
                    let n = b.y.len() as f64;
                    let mut g = vec![0.0; d];
                    for (i, (f, y)) in b.fwd.outputs.iter().zip(&b.y).enumerate() {
                        for (k, gk) in g.iter_mut().enumerate() {
                            *gk += (f - y) * b.fwd.features[i * d + k] / n;
                        }
                    }
                    g
                })
                .collect();
            let (value, dg) = pairwise_spread(&grads);
            for (e, b) in batches.iter().enumerate() {
                let d = b.fwd.feature_dim;
                let n = b.y.len() as f64;
                let mut sf = vec![0.0; b.fwd.features.len()];
                for (i, (f, y)) in b.fwd.outputs.iter().zip(&b.y).enumerate() {
                    let feats = &b.fwd.features[i * d..(i + 1) * d];
                    seed_out[e][i] = dg[e].iter().zip(feats).map(|(a, h)| a * h).sum::<f64>() / n;
                    for k in 0..d {
                        sf[i * d + k] = dg[e][k] * (f - y) / n;
                    }
                }
                seed_feat[e] = Some(sf);
            }
            value
        }
        PenaltyKind::Fishr => {
            let mut vars = Vec::with_capacity(m);
            let mut means = Vec::with_capacity(m);
            for b in batches {
                let d = b.fwd.feature_dim;
                let n = b.y.len() as f64;
                let mut mean = vec![0.0; d];
                let mut second = vec![0.0; d];
                for (i, (f, y)) in b.fwd.outputs.iter().zip(&b.y).enumerate() {
                    for k in 0..d {
                        let g = (f - y) * b.fwd.features[i * d + k];
                        mean[k] += g / n;
                        second[k] += g * g / n;
                    }
                }
                vars.push(
                    second
                        .iter()
                        .zip(&mean)
                        .map(|(s, mu)| s - mu * mu)
                        .collect::<Vec<f64>>(),
                );
                means.push(mean);
            }
            let (value, dv) = pairwise_spread(&vars);
            for (e, b) in batches.iter().enumerate() {
                let d = b.fwd.feature_dim;
                let n = b.y.len() as f64;
                let mut sf = vec![0.0; b.fwd.features.len()];
                for (i, (f, y)) in b.fwd.outputs.iter().zip(&b.y).enumerate() {
                    let mut so = 0.0;
                    for k in 0..d {
                        let h = b.fwd.features[i * d + k];
                        let g = (f - y) * h;
                        let dg = dv[e][k] * 2.0 * (g - means[e][k]) / n;
                        so += dg * h;
                        sf[i * d + k] = dg * (f - y);
                    }
                    seed_out[e][i] = so;
                }
                seed_feat[e] = Some(sf);
            }
            value
        }
        PenaltyKind::IbErm => {
            let mut total = 0.0;
            for (e, b) in batches.iter().enumerate() {
                for label in [-1.0, 1.0] {
                    let idx: Vec<usize> = (0..b.y.len()).filter(|&i| b.y[i] == label).collect();
                    if idx.len() < 2 {
                        continue;
                    }
                    let n = idx.len() as f64;
                    let mean = idx.iter().map(|&i| b.fwd.outputs[i]).sum::<f64>() / n;
                    total += idx
                        .iter()
                        .map(|&i| (b.fwd.outputs[i] - mean).powi(2))
                        .sum::<f64>()
                        / n;
                    for &i in &idx {
                        seed_out[e][i] = 2.0 * (b.fwd.outputs[i] - mean) / n;
                    }
                }
            }
            total
        }
    };
    Ok((value, seed_out, seed_feat))
}

/// Mini-batch (or full-batch) descent on `(Σ_e R_e + c·‖θ‖² + λ·P) / (1 + λ)` with every
/// penalty estimated from the current per-environment batches.
pub fn train_empirical(
    datasets: &[Dataset],
    model: Model,
    objective: &Objective,
    cfg: &EmpiricalConfig,
) -> Result<TrainedModel> {
    if datasets.len() < 2 {
        return Err(Error::TooFewEnvironments {
            needed: 2,
            got: datasets.len(),
        });
    }
    let lambda = match objective.lambda {
        Lambda::Finite(l) => l,
        Lambda::Infinite => return Err(Error::InfiniteLambda),
    };
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(format!(
            "learning rate {} must be > 0",
            cfg.learning_rate
        )));
    }
    if !(cfg.weight_decay >= 0.0) {
        return Err(Error::Config(format!(
            "weight decay {} must be >= 0",
            cfg.weight_decay
        )));
    }
    let n_min = datasets.iter().map(Dataset::len).min().unwrap_or(0);
    if n_min == 0 {
        return Err(Error::EmptyDataset);
    }
    let batch = cfg.batch_size.unwrap_or(n_min).min(n_min);
    if batch < 2 && lambda > 0.0 {
        return Err(Error::BatchTooSmall(batch));
    }
    let full_batch = batch == n_min && datasets.iter().all(|d| d.len() == n_min);
    let steps_per_epoch = (n_min / batch).max(1);

    let mut model = model;
    let mut adam = Adam::new(model.params().len());
    let mut rng = task_rng(cfg.seed, 1);
    let mut orders: Vec<Vec<usize>> = datasets.iter().map(|d| (0..d.len()).collect()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        if !full_batch {
            for order in orders.iter_mut() {
                order.shuffle(&mut rng);
            }
        }
        for k in 0..steps_per_epoch {
            let batches: Vec<EnvBatch> = datasets
                .iter()
                .zip(&orders)
                .map(|(d, order)| {
                    if full_batch {
                        return EnvBatch {
                            fwd: model.forward(&d.x1, &d.x2),
                            y: d.y.clone(),
                        };
                    }
                    let idx = &order[k * batch..(k + 1) * batch];
                    let x1: Vec<f64> = idx.iter().map(|&i| d.x1[i]).collect();
                    let x2: Vec<f64> = idx.iter().map(|&i| d.x2[i]).collect();
                    EnvBatch {
                        fwd: model.forward(&x1, &x2),
                        y: idx.iter().map(|&i| d.y[i]).collect(),
                    }
                })
                .collect();
            let weight = if step < cfg.anneal_steps {
                lambda.min(1.0)
            } else {
                lambda
            };
            let scale = 1.0 / (1.0 + weight);
            let mut risk_sum = 0.0;
            let mut grad = vec![0.0; model.params().len()];
            let (penalty, pen_out, pen_feat) = if weight > 0.0 {
                penalty_seeds(objective.penalty, &batches)?
            } else {
                (0.0, Vec::new(), Vec::new())
            };
            for (e, b) in batches.iter().enumerate() {
                let n = b.y.len() as f64;
                risk_sum += b
                    .fwd
                    .outputs
                    .iter()
                    .zip(&b.y)
                    .map(|(f, y)| 0.5 * (f - y).powi(2))
                    .sum::<f64>()
                    / n;
                let mut seed: Vec<f64> = b
                    .fwd
                    .outputs
                    .iter()
                    .zip(&b.y)
                    .map(|(f, y)| (f - y) / n * scale)
                    .collect();
                let mut feat = None;
                if weight > 0.0 {
                    for (s, p) in seed.iter_mut().zip(&pen_out[e]) {
                        *s += weight * scale * p;
                    }
                    feat = pen_feat[e]
                        .as_ref()
                        .map(|v| v.iter().map(|p| weight * scale * p).collect::<Vec<f64>>());
                }
                for (g, d) in grad
                    .iter_mut()
                    .zip(model.backward(&b.fwd, &seed, feat.as_deref()))
                {
                    *g += d;
                }
            }
            let mut decay = 0.0;
            if cfg.weight_decay > 0.0 {
                decay = cfg.weight_decay * model.params().iter().map(|p| p * p).sum::<f64>();
                for (g, p) in grad.iter_mut().zip(model.params()) {
                    *g += 2.0 * cfg.weight_decay * p * scale;
                }
            }
            let value = (risk_sum + decay + weight * penalty) * scale;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("non-finite loss (risk {risk_sum}, penalty {penalty})"),
                });
            }
            match cfg.step_rule {
                StepRule::Sgd => {
                    for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                StepRule::Adam => adam.step(model.params_mut(), &grad, cfg.learning_rate),
            }
            step += 1;
            if k + 1 == steps_per_epoch {
                history.push(HistoryPoint {
                    step,
                    objective: value,
                    mean_risk: risk_sum / datasets.len() as f64,
                    penalty,
                });
            }
        }
    }
    Ok(TrainedModel {
        model,
        history,
        steps: step,
    })
}
