use std::io::Write;

use crate::error::{Error, Result};
use crate::output::fmt_sig;

use super::{rademacher, task_rng, NoiseKind, NoiseSpec};

/// One two-bit environment: label flip rate `alpha`, spurious flip rate `beta` and additive noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvironmentSpec {
    pub alpha: f64,
    pub beta: f64,
    pub noise: NoiseSpec,
}

impl EnvironmentSpec {
    pub fn new(alpha: f64, beta: f64, noise: NoiseSpec) -> Result<Self> {
        for (name, p) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidEnvironment(format!(
                    "{name} = {p} is not in [0, 1]"
                )));
            }
        }
        noise.validate()?;
        Ok(EnvironmentSpec { alpha, beta, noise })
    }

    pub fn clean(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, NoiseSpec::NONE)
    }

    /// Correlation of the invariant bit with the label, `1 − 2α`.
    pub fn invariant_coef(&self) -> f64 {
        1.0 - 2.0 * self.alpha
    }

    /// Correlation of the spurious bit with the label, `1 − 2β`.
    pub fn spurious_coef(&self) -> f64 {
        1.0 - 2.0 * self.beta
    }

    pub fn with_noise(&self, noise: NoiseSpec) -> Self {
        EnvironmentSpec { noise, ..*self }
    }
}

/// Second moments of `(x1, x2, y)` plus first moments.
///
/// `my` is `E[y]`; it is exactly zero for the two-bit process and kept so that centered
/// statistics have an explicit code path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub m11: f64,
    pub m22: f64,
    pub m12: f64,
    pub m1y: f64,
    pub m2y: f64,
    pub m1: f64,
    pub m2: f64,
    pub myy: f64,
    pub my: f64,
}

/// Exact population moments for noise kinds with a closed form.
pub fn two_bit_moments(env: &EnvironmentSpec) -> Result<Moments> {
    let (mean, var) = match env.noise.kind {
        NoiseKind::None => (0.0, 0.0),
        NoiseKind::Gaussian => (env.noise.mean, env.noise.variance()),
        other => return Err(Error::NoClosedForm(other.name())),
    };
    let a = env.invariant_coef();
    let b = env.spurious_coef();
    let shared = mean * mean + var;
    Ok(Moments {
        m11: 1.0 + shared,
        m22: 1.0 + shared,
        m12: a * b + shared,
        m1y: a,
        m2y: b,
        m1: mean,
        m2: mean,
        myy: 1.0,
        my: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub spec: EnvironmentSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub y: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn from_columns(x1: Vec<f64>, x2: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x1.len() != x2.len() || x1.len() != y.len() {
            return Err(Error::InvalidEnvironment(format!(
                "column lengths differ: {}, {}, {}",
                x1.len(),
                x2.len(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|v| **v != 1.0 && **v != -1.0) {
            return Err(Error::InvalidEnvironment(format!("label {bad} is not ±1")));
        }
        Ok(Dataset {
            x1,
            x2,
            y,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Stacks two datasets; provenance is dropped because the result mixes sources.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let join = |a: &[f64], b: &[f64]| a.iter().chain(b).copied().collect::<Vec<_>>();
        Dataset {
            x1: join(&self.x1, &other.x1),
            x2: join(&self.x2, &other.x2),
            y: join(&self.y, &other.y),
            provenance: None,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "x2", "y"])?;
        for i in 0..self.len() {
            w.write_record([fmt_sig(self.x1[i]), fmt_sig(self.x2[i]), fmt_sig(self.y[i])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws `n` samples: `x̂1 ~ Rad(0.5)`, `y = x̂1·Rad(α)`, `x̂2 = y·Rad(β)`, and one shared
/// noise draw added to both observed features.
pub fn sample_two_bit(env: &EnvironmentSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    env.noise.validate()?;
    let mut rng = task_rng(seed, 0);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let inv = rademacher(&mut rng, 0.5);
        let label = inv * rademacher(&mut rng, env.alpha);
        let spur = label * rademacher(&mut rng, env.beta);
        let eta = env.noise.sample(&mut rng);
        x1.push(inv + eta);
        x2.push(spur + eta);
        y.push(label);
    }
    Ok(Dataset {
        x1,
        x2,
        y,
        provenance: Some(Provenance { spec: *env, seed }),
    })
}

/// Plug-in sample averages of every moment field.
pub fn empirical_moments(data: &Dataset) -> Result<Moments> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len() as f64;
    let mut acc = [0.0f64; 9];
    for i in 0..data.len() {
        let (x1, x2, y) = (data.x1[i], data.x2[i], data.y[i]);
        acc[0] += x1 * x1;
        acc[1] += x2 * x2;
        acc[2] += x1 * x2;
        acc[3] += x1 * y;
        acc[4] += x2 * y;
        acc[5] += x1;
        acc[6] += x2;
        acc[7] += y * y;
        acc[8] += y;
    }
    let [m11, m22, m12, m1y, m2y, m1, m2, myy, my] = acc.map(|s| s / n);
    Ok(Moments {
        m11,
        m22,
        m12,
        m1y,
        m2y,
        m1,
        m2,
        myy,
        my,
    })
}
