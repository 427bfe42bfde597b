//! Reference computations by direct enumeration of the eight `(x̂1, x̂2, y)` atoms of the
//! two-bit process, with the shared Gaussian noise integrated analytically.

#![allow(dead_code)]

use icorr::envs::{EnvironmentSpec, NoiseSpec};

pub struct Atom {
    pub x1: f64,
    pub x2: f64,
    pub y: f64,
    pub p: f64,
}

pub fn atoms(alpha: f64, beta: f64) -> Vec<Atom> {
    let mut out = Vec::with_capacity(8);
    for x1 in [1.0, -1.0] {
        for flip_y in [false, true] {
            for flip_x2 in [false, true] {
                let y = if flip_y { -x1 } else { x1 };
                let x2 = if flip_x2 { -y } else { y };
                let p = 0.5
                    * if flip_y { alpha } else { 1.0 - alpha }
                    * if flip_x2 { beta } else { 1.0 - beta };
                out.push(Atom { x1, x2, y, p });
            }
        }
    }
    out
}

/// `½E[(w·x − y)²]` where `x = x̂ + η(1, 1)` with `η` of the given mean and variance.
pub fn risk(alpha: f64, beta: f64, mean: f64, var: f64, w: [f64; 2]) -> f64 {
    let s = w[0] + w[1];
    atoms(alpha, beta)
        .iter()
        .map(|a| {
            let d = w[0] * a.x1 + w[1] * a.x2 - a.y + s * mean;
            a.p * 0.5 * (d * d + s * s * var)
        })
        .sum()
}

/// `E[(f − E f)·y]` for `f = w·x`.
pub fn centered_correlation(alpha: f64, beta: f64, mean: f64, w: [f64; 2]) -> f64 {
    let at = atoms(alpha, beta);
    let f = |a: &Atom| w[0] * a.x1 + w[1] * a.x2 + (w[0] + w[1]) * mean;
    let ef: f64 = at.iter().map(|a| a.p * f(a)).sum();
    at.iter().map(|a| a.p * (f(a) - ef) * a.y).sum()
}

/// `E[(f − y)·f]`, the derivative of the risk of `v·f` at `v = 1`.
pub fn dummy_gradient(alpha: f64, beta: f64, mean: f64, var: f64, w: [f64; 2]) -> f64 {
    let s = w[0] + w[1];
    atoms(alpha, beta)
        .iter()
        .map(|a| {
            let f = w[0] * a.x1 + w[1] * a.x2 + s * mean;
            a.p * ((f - a.y) * f + s * s * var)
        })
        .sum()
}

pub fn env(alpha: f64, beta: f64, mean: f64, var: f64) -> EnvironmentSpec {
    let noise = if mean == 0.0 && var == 0.0 {
        NoiseSpec::NONE
    } else {
        NoiseSpec::gaussian_var(mean, var).unwrap()
    };
    EnvironmentSpec::new(alpha, beta, noise).unwrap()
}

pub fn clean_pair() -> Vec<EnvironmentSpec> {
    vec![env(0.1, 0.2, 0.0, 0.0), env(0.1, 0.25, 0.0, 0.0)]
}

pub fn noisy_pair() -> Vec<EnvironmentSpec> {
    vec![env(0.1, 0.2, 0.2, 0.01), env(0.1, 0.25, 0.1, 0.02)]
}

pub fn flipped_eval() -> Vec<EnvironmentSpec> {
    [0.2, 0.25, 0.7, 0.9]
        .iter()
        .map(|&b| env(0.1, b, 0.0, 0.0))
        .collect()
}

/// Mean of `values` and the standard error of that mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
