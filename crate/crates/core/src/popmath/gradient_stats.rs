use crate::envs::{sample_two_bit, Dataset, EnvironmentSpec};
use crate::error::{Error, Result};

/// Sufficient statistics for the per-coordinate variance of per-sample square-loss gradients
/// `(w·x − y)·x_j` of a linear model.
///
/// With `z = (x1, x2, y)` and `u = (w1, w2, −1)` the gradient coordinate is `uᵀz·x_j`, so its
/// mean is `uᵀc_j` and its second moment `uᵀQ_j u`, where `c_j = E[z x_j]` and
/// `Q_j = E[z zᵀ x_j²]`. Both are plain sample averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStats {
    pub cross: [[f64; 3]; 2],
    pub quartic: [[[f64; 3]; 3]; 2],
    pub n: usize,
}

impl GradientStats {
    #[allow(clippy::needless_range_loop)]
    pub fn estimate(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut cross = [[0.0; 3]; 2];
        let mut quartic = [[[0.0; 3]; 3]; 2];
        for i in 0..data.len() {
            let z = [data.x1[i], data.x2[i], data.y[i]];
            for j in 0..2 {
                let xj = z[j];
                let xj2 = xj * xj;
                for k in 0..3 {
                    cross[j][k] += z[k] * xj;
                    for l in k..3 {
                        quartic[j][k][l] += z[k] * z[l] * xj2;
                    }
                }
            }
        }
        let n = data.len() as f64;
        for j in 0..2 {
            for k in 0..3 {
                cross[j][k] /= n;
                for l in k..3 {
                    quartic[j][k][l] /= n;
                    quartic[j][l][k] = quartic[j][k][l];
                }
            }
        }
        Ok(GradientStats {
            cross,
            quartic,
            n: data.len(),
        })
    }

    /// Fixed-seed Monte-Carlo estimate from `n` fresh samples of `env`.
    pub fn monte_carlo(env: &EnvironmentSpec, n: usize, seed: u64) -> Result<Self> {
        Self::estimate(&sample_two_bit(env, n, seed)?)
    }

    /// Per-coordinate gradient variances and their Jacobian with respect to `(w1, w2)`.
    pub fn variances(&self, w: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let u = [w[0], w[1], -1.0];
        let mut var = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mean: f64 = (0..3).map(|k| u[k] * self.cross[j][k]).sum();
            let mut qu = [0.0; 3];
            for (k, slot) in qu.iter_mut().enumerate() {
                *slot = (0..3).map(|l| self.quartic[j][k][l] * u[l]).sum();
            }
            let second: f64 = (0..3).map(|k| u[k] * qu[k]).sum();
            var[j] = second - mean * mean;
            for p in 0..2 {
                jac[j][p] = 2.0 * qu[p] - 2.0 * mean * self.cross[j][p];
            }
        }
        (var, jac)
    }
}
