use rand_distr::{Distribution, Normal};

use crate::envs::task_rng;
use crate::error::{Error, Result};
use crate::popmath::LinearParams;

/// Fully connected rectifier network; the last layer is linear with one output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            widths: vec![2, 16, 16, 1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    /// `f = w1·x1 + w2·x2`, no bias.
    Linear,
    Mlp(Vec<usize>),
}

/// A model with all trainable parameters in one flat vector.
///
/// MLP layout per layer: weights `out × in` row-major, then `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: Vec<f64>,
}

/// Cached activations of one batch.
///
/// `features` holds, per sample, the input of the final linear layer followed by a constant 1
/// for MLPs (the bias input); for the linear model it is `(x1, x2)`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub outputs: Vec<f64>,
    pub features: Vec<f64>,
    pub feature_dim: usize,
    activations: Vec<Vec<f64>>,
    inputs: Vec<[f64; 2]>,
}

impl Model {
    pub fn linear(w: LinearParams) -> Self {
        Model {
            arch: Architecture::Linear,
            params: vec![w.w1, w.w2],
        }
    }

    /// He-initialized weights and zero biases.
    pub fn mlp(spec: &MlpSpec) -> Result<Self> {
        let w = &spec.widths;
        if w.len() < 2 || w[0] != 2 || *w.last().unwrap() != 1 || w.contains(&0) {
            return Err(Error::Config(format!(
                "MLP widths {w:?} must start at 2, end at 1 and be positive"
            )));
        }
        let mut rng = task_rng(spec.seed, 0);
        let mut params = Vec::new();
        for pair in w.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            params.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Model {
            arch: Architecture::Mlp(w.clone()),
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn linear_params(&self) -> Option<LinearParams> {
        match self.arch {
            Architecture::Linear => Some(LinearParams::new(self.params[0], self.params[1])),
            Architecture::Mlp(_) => None,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match &self.arch {
            Architecture::Linear => 2,
            Architecture::Mlp(w) => w[w.len() - 2] + 1,
        }
    }

    pub fn predict(&self, x1: f64, x2: f64) -> f64 {
        self.forward(&[x1], &[x2]).outputs[0]
    }

    pub fn forward(&self, x1: &[f64], x2: &[f64]) -> Forward {
        let inputs: Vec<[f64; 2]> = x1.iter().zip(x2).map(|(a, b)| [*a, *b]).collect();
        let n = inputs.len();
        match &self.arch {
            Architecture::Linear => {
                let outputs = inputs
                    .iter()
                    .map(|x| self.params[0] * x[0] + self.params[1] * x[1])
                    .collect();
                let features = inputs.iter().flat_map(|x| *x).collect();
                Forward {
                    outputs,
                    features,
                    feature_dim: 2,
                    activations: Vec::new(),
                    inputs,
                }
            }
            Architecture::Mlp(widths) => {
                let mut activations: Vec<Vec<f64>> = vec![inputs.iter().flat_map(|x| *x).collect()];
                let mut offset = 0;
                let n_layers = widths.len() - 1;
                for l in 0..n_layers {
                    let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                    let weights = &self.params[offset..offset + fan_in * fan_out];
                    let bias = &self.params
                        [offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
                    offset += fan_in * fan_out + fan_out;
                    let mut next = vec![0.0; n * fan_out];
                    for row in next.chunks_exact_mut(fan_out) {
                        row.copy_from_slice(bias);
                    }
                    // next (n × out) += prev (n × in) · weightsᵀ
                    gemm(
                        n,
                        fan_in,
                        fan_out,
                        &activations[l],
                        (fan_in, 1),
                        weights,
                        (1, fan_in),
                        1.0,
                        &mut next,
                    );
                    if l + 1 < n_layers {
                        for z in next.iter_mut() {
                            *z = z.max(0.0);
                        }
                    }
                    activations.push(next);
                }
                let outputs = activations.pop().expect("output layer");
                let hidden = activations.last().expect("hidden layer");
                let h = widths[n_layers - 1];
                let mut features = Vec::with_capacity(n * (h + 1));
                for i in 0..n {
                    features.extend_from_slice(&hidden[i * h..(i + 1) * h]);
                    features.push(1.0);
                }
                Forward {
                    outputs,
                    features,
                    feature_dim: h + 1,
                    activations,
                    inputs,
                }
            }
        }
    }

    /// Reverse accumulation from per-sample seeds `∂L/∂f` and optional `∂L/∂features`.
    ///
    /// Feature seeds only reach parameters below the final layer, so they have no effect on
    /// the linear model; the constant bias feature's seed is ignored.
    pub fn backward(
        &self,
        fwd: &Forward,
        seed_out: &[f64],
        seed_features: Option<&[f64]>,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let n = fwd.outputs.len();
        match &self.arch {
            Architecture::Linear => {
                for (x, s) in fwd.inputs.iter().zip(seed_out) {
                    grad[0] += s * x[0];
                    grad[1] += s * x[1];
                }
            }
            Architecture::Mlp(widths) => {
                let n_layers = widths.len() - 1;
                let mut offsets = Vec::with_capacity(n_layers);
                let mut off = 0;
                for l in 0..n_layers {
                    offsets.push(off);
                    off += widths[l] * widths[l + 1] + widths[l + 1];
                }
                let mut delta: Vec<f64> = seed_out.to_vec();
                for l in (0..n_layers).rev() {
                    let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                    let base = offsets[l];
                    let a_in = &fwd.activations[l];
                    // weight grad (out × in) += deltaᵀ (out × n) · a_in (n × in)
                    gemm(
                        fan_out,
                        n,
                        fan_in,
                        &delta,
                        (1, fan_out),
                        a_in,
                        (fan_in, 1),
                        1.0,
                        &mut grad[base..base + fan_in * fan_out],
                    );
                    let bias_grad =
                        &mut grad[base + fan_in * fan_out..base + fan_in * fan_out + fan_out];
                    for row in delta.chunks_exact(fan_out) {
                        for (g, d) in bias_grad.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                    if l == 0 {
                        break;
                    }
                    let weights = &self.params[base..base + fan_in * fan_out];
                    let mut prev = vec![0.0; n * fan_in];
                    // prev (n × in) = delta (n × out) · weights (out × in)
                    gemm(
                        n,
                        fan_out,
                        fan_in,
                        &delta,
                        (fan_out, 1),
                        weights,
                        (fan_in, 1),
                        0.0,
                        &mut prev,
                    );
                    if l == n_layers - 1 {
                        if let Some(seed) = seed_features {
                            let dim = fan_in + 1;
                            for i in 0..n {
                                for k in 0..fan_in {
                                    prev[i * fan_in + k] += seed[i * dim + k];
                                }
                            }
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(a_in) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        grad
    }
}

/// Row-major `c (m × n) = beta·c + a (m × k) · b (k × n)` with `(row, column)` strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() == m * n);
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
