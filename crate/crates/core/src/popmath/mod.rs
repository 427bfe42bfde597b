//! Population risk, correlation and penalties of the linear model `f = w1·x1 + w2·x2`.
//!
//! Every penalty comes with an exact gradient. Cross-environment variances divide by the
//! number of environments.

mod gradient_stats;

pub use gradient_stats::GradientStats;

use std::fmt;
use std::str::FromStr;

use crate::envs::{empirical_moments, two_bit_moments, Dataset, EnvironmentSpec, Moments};
use crate::error::{Error, Result};

/// Sample size of the fixed-seed estimator backing the Fishr penalty.
pub const FISHR_MC_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearParams {
    pub w1: f64,
    pub w2: f64,
}

impl LinearParams {
    pub const ZERO: LinearParams = LinearParams { w1: 0.0, w2: 0.0 };

    pub fn new(w1: f64, w2: f64) -> Self {
        LinearParams { w1, w2 }
    }

    pub fn norm(&self) -> f64 {
        self.w1.hypot(self.w2)
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite() && self.w2.is_finite()
    }

    pub fn predict(&self, x1: f64, x2: f64) -> f64 {
        self.w1 * x1 + self.w2 * x2
    }

    /// Outputs at the four binary inputs `(1,1), (1,−1), (−1,1), (−1,−1)`.
    pub fn corners(&self) -> [f64; 4] {
        [
            self.predict(1.0, 1.0),
            self.predict(1.0, -1.0),
            self.predict(-1.0, 1.0),
            self.predict(-1.0, -1.0),
        ]
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.w1, self.w2]
    }
}

impl From<[f64; 2]> for LinearParams {
    fn from(w: [f64; 2]) -> Self {
        LinearParams { w1: w[0], w2: w[1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    Icorr,
    Irmv1,
    Vrex,
    Iga,
    Fishr,
    IbErm,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 6] = [
        PenaltyKind::Icorr,
        PenaltyKind::Irmv1,
        PenaltyKind::Vrex,
        PenaltyKind::Iga,
        PenaltyKind::Fishr,
        PenaltyKind::IbErm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Icorr => "icorr",
            PenaltyKind::Irmv1 => "irmv1",
            PenaltyKind::Vrex => "vrex",
            PenaltyKind::Iga => "iga",
            PenaltyKind::Fishr => "fishr",
            PenaltyKind::IbErm => "ib_erm",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL
            .iter()
            .map(|k| k.name())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown penalty '{s}'; valid names: {}",
                    Self::valid_names()
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Finite(f64),
    Infinite,
}

impl Lambda {
    pub fn new(value: f64) -> Result<Self> {
        if value == f64::INFINITY {
            Ok(Lambda::Infinite)
        } else if value >= 0.0 && value.is_finite() {
            Ok(Lambda::Finite(value))
        } else {
            Err(Error::Config(format!("lambda {value} must be >= 0")))
        }
    }

    /// `2^log2`, with −1 standing for λ = 0.
    pub fn from_log2(log2: f64) -> Result<Self> {
        if log2 == -1.0 {
            Ok(Lambda::Finite(0.0))
        } else if log2.is_finite() {
            Self::new(log2.exp2())
        } else {
            Err(Error::Config(format!("log2 lambda {log2} must be finite")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub penalty: PenaltyKind,
    pub lambda: Lambda,
}

impl Objective {
    pub fn new(penalty: PenaltyKind, lambda: f64) -> Result<Self> {
        Ok(Objective {
            penalty,
            lambda: Lambda::new(lambda)?,
        })
    }
}

/// Population summary of one environment. Gradient statistics are only needed by Fishr.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationEnv {
    pub moments: Moments,
    pub grad_stats: Option<GradientStats>,
}

impl From<Moments> for PopulationEnv {
    fn from(moments: Moments) -> Self {
        PopulationEnv {
            moments,
            grad_stats: None,
        }
    }
}

impl PopulationEnv {
    /// Exact moments, no gradient statistics.
    pub fn exact(env: &EnvironmentSpec) -> Result<Self> {
        Ok(two_bit_moments(env)?.into())
    }

    /// Exact moments plus fixed-seed gradient statistics from `n` samples.
    pub fn with_gradient_stats(env: &EnvironmentSpec, n: usize, seed: u64) -> Result<Self> {
        let mut pe = Self::exact(env)?;
        pe.grad_stats = Some(GradientStats::monte_carlo(env, n, seed)?);
        Ok(pe)
    }

    /// Plug-in moments and gradient statistics of a dataset.
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        Ok(PopulationEnv {
            moments: empirical_moments(data)?,
            grad_stats: Some(GradientStats::estimate(data)?),
        })
    }
}

pub fn population_risk(m: &Moments, w: &LinearParams) -> f64 {
    0.5 * (w.w1 * w.w1 * m.m11 + w.w2 * w.w2 * m.m22 + 2.0 * w.w1 * w.w2 * m.m12
        - 2.0 * w.w1 * m.m1y
        - 2.0 * w.w2 * m.m2y
        + m.myy)
}

pub fn risk_gradient(m: &Moments, w: &LinearParams) -> [f64; 2] {
    [
        w.w1 * m.m11 + w.w2 * m.m12 - m.m1y,
        w.w2 * m.m22 + w.w1 * m.m12 - m.m2y,
    ]
}

/// `E[(f − E f)·y]`, the centered correlation.
pub fn population_correlation(m: &Moments, w: &LinearParams) -> f64 {
    w.w1 * (m.m1y - m.m1 * m.my) + w.w2 * (m.m2y - m.m2 * m.my)
}

/// `E[f·y]`; equal to the centered form whenever `E[y] = 0`.
pub fn population_correlation_uncentered(m: &Moments, w: &LinearParams) -> f64 {
    w.w1 * m.m1y + w.w2 * m.m2y
}

/// `E[(f − y)·f]`, the derivative of the risk along a scalar multiplier of `f` at 1.
pub fn population_dummy_gradient(m: &Moments, w: &LinearParams) -> f64 {
    w.w1 * w.w1 * m.m11 + 2.0 * w.w1 * w.w2 * m.m12 + w.w2 * w.w2 * m.m22
        - w.w1 * m.m1y
        - w.w2 * m.m2y
}

fn dummy_gradient_gradient(m: &Moments, w: &LinearParams) -> [f64; 2] {
    [
        2.0 * w.w1 * m.m11 + 2.0 * w.w2 * m.m12 - m.m1y,
        2.0 * w.w2 * m.m22 + 2.0 * w.w1 * m.m12 - m.m2y,
    ]
}

/// Matrix `Σ_x − c cᵀ / Var(y)` whose quadratic form is the label-conditional variance of `f`
/// summed over both labels (balanced binary labels).
fn conditional_covariance(m: &Moments) -> [[f64; 2]; 2] {
    let var_y = m.myy - m.my * m.my;
    let c = [m.m1y - m.m1 * m.my, m.m2y - m.m2 * m.my];
    let s = [
        [m.m11 - m.m1 * m.m1, m.m12 - m.m1 * m.m2],
        [m.m12 - m.m1 * m.m2, m.m22 - m.m2 * m.m2],
    ];
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for k in 0..2 {
            out[r][k] = 2.0 * (s[r][k] - c[r] * c[k] / var_y);
        }
    }
    out
}

/// `Σ_{y=±1} Var(f | y)` in one environment.
pub fn conditional_variance_sum(m: &Moments, w: &LinearParams) -> f64 {
    let c = conditional_covariance(m);
    w.w1 * w.w1 * c[0][0] + 2.0 * w.w1 * w.w2 * c[0][1] + w.w2 * w.w2 * c[1][1]
}

/// Population variance of scalars and its gradient with respect to each scalar.
pub(crate) fn variance_with_weights(values: &[f64]) -> (f64, Vec<f64>) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    (var, values.iter().map(|v| 2.0 * (v - mean) / m).collect())
}

/// Mean over environment pairs of `‖v_i − v_j‖²`, i.e. `2m/(m−1)` times the mean squared
/// deviation from the cross-environment mean, with its gradient per vector.
pub(crate) fn pairwise_spread<V: AsRef<[f64]>>(vectors: &[V]) -> (f64, Vec<Vec<f64>>) {
    let m = vectors.len() as f64;
    let dim = vectors.first().map_or(0, |v| v.as_ref().len());
    let mut mean = vec![0.0; dim];
    for v in vectors {
        for (acc, x) in mean.iter_mut().zip(v.as_ref()) {
            *acc += x / m;
        }
    }
    let scale = 2.0 * m / (m - 1.0);
    let mut msd = 0.0;
    let grads = vectors
        .iter()
        .map(|v| {
            v.as_ref()
                .iter()
                .zip(&mean)
                .map(|(x, c)| {
                    msd += (x - c).powi(2) / m;
                    scale * 2.0 * (x - c) / m
                })
                .collect()
        })
        .collect();
    (scale * msd, grads)
}

fn require_envs(envs: &[PopulationEnv]) -> Result<()> {
    if envs.len() < 2 {
        return Err(Error::TooFewEnvironments {
            needed: 2,
            got: envs.len(),
        });
    }
    Ok(())
}

/// Penalty value and its exact gradient with respect to `(w1, w2)`.
pub fn penalty_with_gradient(
    kind: PenaltyKind,
    envs: &[PopulationEnv],
    w: &LinearParams,
) -> Result<(f64, [f64; 2])> {
    require_envs(envs)?;
    let mut grad = [0.0; 2];
    let value = match kind {
        PenaltyKind::Icorr => {
            let rho: Vec<f64> = envs
                .iter()
                .map(|e| population_correlation(&e.moments, w))
                .collect();
            let (var, dv) = variance_with_weights(&rho);
            for (e, d) in envs.iter().zip(dv) {
                let m = &e.moments;
                grad[0] += d * (m.m1y - m.m1 * m.my);
                grad[1] += d * (m.m2y - m.m2 * m.my);
            }
            var
        }
        PenaltyKind::Vrex => {
            let risks: Vec<f64> = envs
                .iter()
                .map(|e| population_risk(&e.moments, w))
                .collect();
            let (var, dv) = variance_with_weights(&risks);
            for (e, d) in envs.iter().zip(dv) {
                let g = risk_gradient(&e.moments, w);
                grad[0] += d * g[0];
                grad[1] += d * g[1];
            }
            var
        }
        PenaltyKind::Irmv1 => {
            let mut total = 0.0;
            for e in envs {
                let dg = population_dummy_gradient(&e.moments, w);
                let ddg = dummy_gradient_gradient(&e.moments, w);
                total += dg * dg;
                grad[0] += 2.0 * dg * ddg[0];
                grad[1] += 2.0 * dg * ddg[1];
            }
            total
        }
        PenaltyKind::Iga => {
            let grads: Vec<[f64; 2]> = envs.iter().map(|e| risk_gradient(&e.moments, w)).collect();
            let (value, dg) = pairwise_spread(&grads);
            for (e, d) in envs.iter().zip(dg) {
                let m = &e.moments;
                grad[0] += d[0] * m.m11 + d[1] * m.m12;
                grad[1] += d[0] * m.m12 + d[1] * m.m22;
            }
            value
        }
        PenaltyKind::Fishr => {
            let mut vars = Vec::with_capacity(envs.len());
            let mut jacs = Vec::with_capacity(envs.len());
            for e in envs {
                let stats = e.grad_stats.as_ref().ok_or(Error::MissingGradientStats)?;
                let (v, j) = stats.variances(w.as_array());
                vars.push(v);
                jacs.push(j);
            }
            let (value, dv) = pairwise_spread(&vars);
            for (jac, d) in jacs.iter().zip(dv) {
                for p in 0..2 {
                    grad[p] += d[0] * jac[0][p] + d[1] * jac[1][p];
                }
            }
            value
        }
        PenaltyKind::IbErm => {
            let mut total = 0.0;
            for e in envs {
                let c = conditional_covariance(&e.moments);
                total += conditional_variance_sum(&e.moments, w);
                grad[0] += 2.0 * (c[0][0] * w.w1 + c[0][1] * w.w2);
                grad[1] += 2.0 * (c[1][0] * w.w1 + c[1][1] * w.w2);
            }
            total
        }
    };
    Ok((value, grad))
}

pub fn penalty_value(kind: PenaltyKind, envs: &[PopulationEnv], w: &LinearParams) -> Result<f64> {
    penalty_with_gradient(kind, envs, w).map(|(v, _)| v)
}

pub fn penalty_gradient(
    kind: PenaltyKind,
    envs: &[PopulationEnv],
    w: &LinearParams,
) -> Result<[f64; 2]> {
    penalty_with_gradient(kind, envs, w).map(|(_, g)| g)
}

pub fn total_risk(envs: &[PopulationEnv], w: &LinearParams) -> f64 {
    envs.iter().map(|e| population_risk(&e.moments, w)).sum()
}

pub fn total_risk_gradient(envs: &[PopulationEnv], w: &LinearParams) -> [f64; 2] {
    envs.iter().fold([0.0; 2], |acc, e| {
        let g = risk_gradient(&e.moments, w);
        [acc[0] + g[0], acc[1] + g[1]]
    })
}

/// Exact minimizer of the summed risks: solves the summed 2×2 normal equations.
pub fn erm_solution(envs: &[PopulationEnv]) -> Result<LinearParams> {
    if envs.is_empty() {
        return Err(Error::TooFewEnvironments { needed: 1, got: 0 });
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for e in envs {
        let m = &e.moments;
        a11 += m.m11;
        a12 += m.m12;
        a22 += m.m22;
        b1 += m.m1y;
        b2 += m.m2y;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-14 * (a11 * a22).abs().max(1.0) {
        return Err(Error::DegeneratePair(
            "summed second-moment matrix is singular".into(),
        ));
    }
    Ok(LinearParams::new(
        (a22 * b1 - a12 * b2) / det,
        (a11 * b2 - a12 * b1) / det,
    ))
}
