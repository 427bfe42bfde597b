use crate::error::{Error, Result};
use crate::popmath::{
    penalty_with_gradient, total_risk, total_risk_gradient, Lambda, LinearParams, Objective,
    PopulationEnv,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Fixed-step full-batch gradient descent.
    GradientDescent,
    /// Damped Newton: finite-difference Hessian of the analytic gradient, shifted to be
    /// positive definite, with Armijo backtracking.
    Newton,
}

impl Optimizer {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gd" | "gradient_descent" => Ok(Optimizer::GradientDescent),
            "newton" => Ok(Optimizer::Newton),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected gd or newton)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub grad_tol: f64,
    pub init: LinearParams,
    pub warm_start: bool,
    pub optimizer: Optimizer,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.1,
            max_steps: 2000,
            grad_tol: 1e-10,
            init: LinearParams::new(0.1, 0.1),
            warm_start: false,
            optimizer: Optimizer::Newton,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config(format!(
                "grad_tol {} must be > 0",
                self.grad_tol
            )));
        }
        if !self.init.is_finite() {
            return Err(Error::Config("init must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub params: LinearParams,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: LinearParams,
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
    pub steps: usize,
    pub grad_norm: f64,
}

/// `(Σ_e R_e + λ·P) / (1 + λ)` and its gradient.
///
/// Dividing by `1 + λ` keeps the objective and the gradient tolerance on the same scale
/// across the whole λ grid; minimizers are unchanged.
pub fn normalized_objective(
    envs: &[PopulationEnv],
    objective: &Objective,
    w: &LinearParams,
) -> Result<(f64, [f64; 2])> {
    let lambda = match objective.lambda {
        Lambda::Finite(l) => l,
        Lambda::Infinite => return Err(Error::InfiniteLambda),
    };
    let risk = total_risk(envs, w);
    let rg = total_risk_gradient(envs, w);
    let (pen, pg) = if lambda > 0.0 {
        penalty_with_gradient(objective.penalty, envs, w)?
    } else {
        (0.0, [0.0; 2])
    };
    let scale = 1.0 / (1.0 + lambda);
    Ok((
        (risk + lambda * pen) * scale,
        [
            (rg[0] + lambda * pg[0]) * scale,
            (rg[1] + lambda * pg[1]) * scale,
        ],
    ))
}

fn norm(g: [f64; 2]) -> f64 {
    g[0].hypot(g[1])
}

fn hessian(envs: &[PopulationEnv], objective: &Objective, w: [f64; 2]) -> Result<[[f64; 2]; 2]> {
    let mut h = [[0.0; 2]; 2];
    for j in 0..2 {
        let step = 1e-5 * w[j].abs().max(1.0);
        let mut hi = w;
        let mut lo = w;
        hi[j] += step;
        lo[j] -= step;
        let (_, gh) = normalized_objective(envs, objective, &hi.into())?;
        let (_, gl) = normalized_objective(envs, objective, &lo.into())?;
        for i in 0..2 {
            h[i][j] = (gh[i] - gl[i]) / (2.0 * step);
        }
    }
    let off = 0.5 * (h[0][1] + h[1][0]);
    h[0][1] = off;
    h[1][0] = off;
    Ok(h)
}

/// Newton direction with the Hessian shifted until positive definite.
fn newton_direction(h: [[f64; 2]; 2], g: [f64; 2]) -> [f64; 2] {
    let tr = h[0][0] + h[1][1];
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let (lo, hi) = (0.5 * tr - disc, 0.5 * tr + disc);
    let floor = 1e-10 * hi.abs().max(1.0);
    let shift = if lo < floor { floor - lo } else { 0.0 };
    let a = h[0][0] + shift;
    let d = h[1][1] + shift;
    let b = h[0][1];
    let det = a * d - b * b;
    let dir = [-(d * g[0] - b * g[1]) / det, -(-b * g[0] + a * g[1]) / det];
    if dir[0].is_finite() && dir[1].is_finite() && dir[0] * g[0] + dir[1] * g[1] < 0.0 {
        dir
    } else {
        [-g[0], -g[1]]
    }
}

/// Minimizes the normalized objective from `cfg.init`.
pub fn train_population(
    envs: &[PopulationEnv],
    objective: &Objective,
    cfg: &OptimConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if envs.len() < 2 {
        return Err(Error::TooFewEnvironments {
            needed: 2,
            got: envs.len(),
        });
    }
    if objective.lambda == Lambda::Infinite {
        return Err(Error::InfiniteLambda);
    }
    let eval = |w: [f64; 2]| normalized_objective(envs, objective, &w.into());
    let mut w = cfg.init.as_array();
    let mut trajectory = Vec::new();
    let mut converged = false;
    let mut steps = 0;
    let (mut value, mut grad) = eval(w)?;
    loop {
        if !value.is_finite() || !grad[0].is_finite() || !grad[1].is_finite() {
            return Err(Error::Diverged {
                step: steps,
                detail: format!("objective {value} at w = {w:?}"),
            });
        }
        trajectory.push(TrajectoryPoint {
            step: steps,
            params: w.into(),
            objective: value,
            grad_norm: norm(grad),
        });
        if norm(grad) < cfg.grad_tol {
            converged = true;
            break;
        }
        if steps >= cfg.max_steps {
            break;
        }
        steps += 1;
        match cfg.optimizer {
            Optimizer::GradientDescent => {
                w = [
                    w[0] - cfg.learning_rate * grad[0],
                    w[1] - cfg.learning_rate * grad[1],
                ];
                if !(w[0].is_finite() && w[1].is_finite()) {
                    return Err(Error::Diverged {
                        step: steps,
                        detail: "non-finite parameters".into(),
                    });
                }
                (value, grad) = eval(w)?;
            }
            Optimizer::Newton => {
                let dir = newton_direction(hessian(envs, objective, w)?, grad);
                let slope = dir[0] * grad[0] + dir[1] * grad[1];
                let mut t = 1.0;
                let mut accepted = None;
                for _ in 0..60 {
                    let cand = [w[0] + t * dir[0], w[1] + t * dir[1]];
                    let (v, g) = eval(cand)?;
                    if v.is_finite() && v <= value + 1e-4 * t * slope {
                        accepted = Some((cand, v, g));
                        break;
                    }
                    t *= 0.5;
                }
                match accepted {
                    Some((cand, v, g)) => {
                        w = cand;
                        value = v;
                        grad = g;
                    }
                    None => break,
                }
            }
        }
    }
    Ok(TrainOutcome {
        params: w.into(),
        grad_norm: norm(grad),
        trajectory,
        converged,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvironmentSpec, NoiseSpec};
    use crate::popmath::{erm_solution, PenaltyKind};

    fn clean_envs() -> Vec<PopulationEnv> {
        [(0.1, 0.2), (0.1, 0.25)]
            .iter()
            .map(|&(a, b)| PopulationEnv::exact(&EnvironmentSpec::clean(a, b).unwrap()).unwrap())
            .collect()
    }

    fn noisy_envs() -> Vec<PopulationEnv> {
        [(0.2, 0.2, 0.01), (0.25, 0.1, 0.02)]
            .iter()
            .map(|&(b, m, v)| {
                PopulationEnv::exact(
                    &EnvironmentSpec::new(0.1, b, NoiseSpec::gaussian_var(m, v).unwrap()).unwrap(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn erm_limit_with_both_optimizers() {
        let envs = clean_envs();
        let target = erm_solution(&envs).unwrap();
        for optimizer in [Optimizer::Newton, Optimizer::GradientDescent] {
            let cfg = OptimConfig {
                optimizer,
                max_steps: 20_000,
                ..Default::default()
            };
            let out = train_population(
                &envs,
                &Objective::new(PenaltyKind::Irmv1, 0.0).unwrap(),
                &cfg,
            )
            .unwrap();
            assert!(out.converged, "{optimizer:?}");
            assert!(
                (out.params.w1 - target.w1).abs() < 1e-4
                    && (out.params.w2 - target.w2).abs() < 1e-4
            );
            assert!((out.params.w1 - 0.6920).abs() < 1e-4 && (out.params.w2 - 0.2455).abs() < 1e-4);
        }
    }

    #[test]
    fn icorr_large_lambda_kills_spurious_weight() {
        let out = train_population(
            &noisy_envs(),
            &Objective::new(PenaltyKind::Icorr, 2f64.powi(20)).unwrap(),
            &OptimConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!(out.params.w2.abs() < 1e-3);
        assert!((out.params.w1 - 1.6 / 2.08).abs() < 1e-2);
    }

    #[test]
    fn rejects_infinite_lambda_and_single_env() {
        let cfg = OptimConfig::default();
        let inf = Objective::new(PenaltyKind::Vrex, f64::INFINITY).unwrap();
        assert!(matches!(
            train_population(&clean_envs(), &inf, &cfg),
            Err(Error::InfiniteLambda)
        ));
        let one = &clean_envs()[..1];
        assert!(
            train_population(one, &Objective::new(PenaltyKind::Vrex, 1.0).unwrap(), &cfg).is_err()
        );
    }

    #[test]
    fn divergence_reports_step() {
        let cfg = OptimConfig {
            optimizer: Optimizer::GradientDescent,
            learning_rate: 50.0,
            ..Default::default()
        };
        let err = train_population(
            &clean_envs(),
            &Objective::new(PenaltyKind::Irmv1, 0.0).unwrap(),
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { step, .. } if step > 0));
    }

    #[test]
    fn trajectory_is_recorded() {
        let cfg = OptimConfig {
            optimizer: Optimizer::GradientDescent,
            max_steps: 5,
            ..Default::default()
        };
        let out = train_population(
            &clean_envs(),
            &Objective::new(PenaltyKind::Vrex, 1.0).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.trajectory.len(), 6);
        assert!(!out.converged);
        assert_eq!(out.trajectory[0].params, cfg.init);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig {
            grad_tol: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            max_steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            learning_rate: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert_eq!(Optimizer::parse("gd").unwrap(), Optimizer::GradientDescent);
    }
}
