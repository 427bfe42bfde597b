use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

use super::{rademacher, task_rng, NoiseSpec};

/// Law of each hidden invariant coordinate. Both choices have mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvariantLaw {
    Rademacher,
    Gaussian,
}

impl InvariantLaw {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rademacher" => Ok(InvariantLaw::Rademacher),
            "gaussian" | "normal" => Ok(InvariantLaw::Gaussian),
            other => Err(Error::InvalidSem(format!(
                "unknown invariant law '{other}'"
            ))),
        }
    }

    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            InvariantLaw::Rademacher => rademacher(rng, 0.5),
            InvariantLaw::Gaussian => StandardNormal.sample(rng),
        }
    }
}

/// Per-environment part of the structural model. Each noise law is drawn independently
/// per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemEnvironment {
    pub spurious_flip: f64,
    pub inv_noise: NoiseSpec,
    pub spurious_noise: NoiseSpec,
}

/// Anti-causal generator: `y = γᵀx̂_inv + η_y`, `x̂_s = y·Rad(β_e)` per coordinate and
/// observed `x = S·(x̂_inv + η_inv; x̂_s + η_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemConfig {
    pub d_inv: usize,
    pub d_s: usize,
    pub gamma: Vec<f64>,
    pub inv_law: InvariantLaw,
    pub label_noise_var: f64,
    pub environments: Vec<SemEnvironment>,
    mixing: DMatrix<f64>,
    readout: DMatrix<f64>,
}

impl SemConfig {
    pub fn new(
        gamma: Vec<f64>,
        d_s: usize,
        inv_law: InvariantLaw,
        label_noise_var: f64,
        environments: Vec<SemEnvironment>,
        mixing: DMatrix<f64>,
    ) -> Result<Self> {
        let d_inv = gamma.len();
        if d_inv == 0 {
            return Err(Error::InvalidSem(
                "gamma must have at least one entry".into(),
            ));
        }
        if gamma.iter().any(|g| !g.is_finite()) || gamma.iter().all(|g| *g == 0.0) {
            return Err(Error::InvalidSem("gamma must be finite and nonzero".into()));
        }
        if !(label_noise_var >= 0.0) || !label_noise_var.is_finite() {
            return Err(Error::InvalidSem(format!(
                "label noise variance {label_noise_var} must be >= 0"
            )));
        }
        let d = d_inv + d_s;
        if mixing.nrows() != d || mixing.ncols() != d {
            return Err(Error::InvalidSem(format!(
                "mixing matrix is {}x{}, expected {d}x{d}",
                mixing.nrows(),
                mixing.ncols()
            )));
        }
        let sv = mixing.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-12 * smax.max(1.0)) {
            return Err(Error::InvalidSem("mixing matrix is not invertible".into()));
        }
        let inverse = mixing
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidSem("mixing matrix is not invertible".into()))?;
        for env in &environments {
            if !(0.0..=1.0).contains(&env.spurious_flip) {
                return Err(Error::InvalidSem(format!(
                    "spurious flip {} not in [0, 1]",
                    env.spurious_flip
                )));
            }
            env.inv_noise.validate()?;
            env.spurious_noise.validate()?;
        }
        let readout = inverse.rows(0, d_inv).into_owned();
        Ok(SemConfig {
            d_inv,
            d_s,
            gamma,
            inv_law,
            label_noise_var,
            environments,
            mixing,
            readout,
        })
    }

    pub fn dim(&self) -> usize {
        self.d_inv + self.d_s
    }

    pub fn mixing(&self) -> &DMatrix<f64> {
        &self.mixing
    }

    /// Top `d_inv` rows of `S⁻¹`, which recover the noisy invariant block from `x`.
    pub fn readout(&self) -> &DMatrix<f64> {
        &self.readout
    }

    /// Weights `θ` of the oracle predictor `f(x) = γᵀS̃x = θᵀx`.
    pub fn oracle_weights(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        for (r, g) in self.gamma.iter().enumerate() {
            for (c, t) in theta.iter_mut().enumerate() {
                *t += g * self.readout[(r, c)];
            }
        }
        theta
    }

    /// `Var(γᵀx̂_inv)`; hidden coordinates are independent with unit variance.
    pub fn invariant_signal_variance(&self) -> f64 {
        self.gamma.iter().map(|g| g * g).sum()
    }

    pub fn gamma_sum(&self) -> f64 {
        self.gamma.iter().sum()
    }
}

/// Random `d×d` matrix `I + G/(2√d)` with standard normal `G`, redrawn until its
/// condition number is at most 10.
pub fn well_conditioned_mixing(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = task_rng(seed, u64::MAX);
    let scale = 0.5 / (d as f64).sqrt();
    loop {
        let m = DMatrix::from_fn(d, d, |r, c| {
            let g: f64 = StandardNormal.sample(&mut rng);
            if r == c {
                1.0 + scale * g
            } else {
                scale * g
            }
        });
        let sv = m.clone().singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() <= 10.0 {
            return m;
        }
    }
}

/// Observed rows plus hidden quantities for oracle checks. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SemSample {
    pub dim: usize,
    pub d_inv: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub hidden_inv: Vec<f64>,
    pub inv_noise: Vec<f64>,
}

impl SemSample {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn hidden_row(&self, i: usize) -> &[f64] {
        &self.hidden_inv[i * self.d_inv..(i + 1) * self.d_inv]
    }

    pub fn noise_row(&self, i: usize) -> &[f64] {
        &self.inv_noise[i * self.d_inv..(i + 1) * self.d_inv]
    }
}

pub fn sem_generate(cfg: &SemConfig, env_index: usize, n: usize, seed: u64) -> Result<SemSample> {
    let env = cfg.environments.get(env_index).ok_or_else(|| {
        Error::InvalidSem(format!(
            "environment {env_index} out of range ({} defined)",
            cfg.environments.len()
        ))
    })?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = cfg.dim();
    let label_noise = Normal::new(0.0, cfg.label_noise_var.sqrt()).expect("validated variance");
    let mut rng = task_rng(seed, env_index as u64);
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut hidden_inv = Vec::with_capacity(n * cfg.d_inv);
    let mut inv_noise = Vec::with_capacity(n * cfg.d_inv);
    let mut latent = vec![0.0; d];
    for _ in 0..n {
        let mut label = 0.0;
        for (k, g) in cfg.gamma.iter().enumerate() {
            let h = cfg.inv_law.sample(&mut rng);
            let eta = env.inv_noise.sample(&mut rng);
            hidden_inv.push(h);
            inv_noise.push(eta);
            latent[k] = h + eta;
            label += g * h;
        }
        if cfg.label_noise_var > 0.0 {
            label += label_noise.sample(&mut rng);
        }
        for slot in latent.iter_mut().skip(cfg.d_inv) {
            *slot = label * rademacher(&mut rng, env.spurious_flip)
                + env.spurious_noise.sample(&mut rng);
        }
        for r in 0..d {
            let mut acc = 0.0;
            for (c, l) in latent.iter().enumerate() {
                acc += cfg.mixing[(r, c)] * l;
            }
            x.push(acc);
        }
        y.push(label);
    }
    Ok(SemSample {
        dim: d,
        d_inv: cfg.d_inv,
        x,
        y,
        hidden_inv,
        inv_noise,
    })
}
