mod common;

use common::{clean_pair, env, noisy_pair};
use icorr::envs::{derive_seed, sample_two_bit, Dataset, EnvironmentSpec};
use icorr::popmath::{LinearParams, Objective, PenaltyKind, PopulationEnv};
use icorr::trainer::{
    default_grid, evaluate, lambda_sweep, normalized_objective, train_empirical, train_population,
    EmpiricalConfig, MlpSpec, Model, OptimConfig, Optimizer, StepRule, SweepRecord,
};

fn exact(specs: &[EnvironmentSpec]) -> Vec<PopulationEnv> {
    specs
        .iter()
        .map(|s| PopulationEnv::exact(s).unwrap())
        .collect()
}

fn sampled(specs: &[EnvironmentSpec], n: usize, seed: u64) -> Vec<Dataset> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| sample_two_bit(s, n, derive_seed(seed, i as u64)).unwrap())
        .collect()
}

fn sweep(pair: &[EnvironmentSpec], kind: PenaltyKind, warm: bool) -> Vec<SweepRecord> {
    let cfg = OptimConfig {
        warm_start: warm,
        ..OptimConfig::default()
    };
    lambda_sweep(&exact(pair), kind, &default_grid(), &cfg).unwrap()
}

fn g_minus_plus(r: &SweepRecord) -> f64 {
    r.corners[2]
}

#[test]
fn converged_points_are_stationary() {
    let cases = [
        (PenaltyKind::Icorr, 4.0f64, clean_pair()),
        (PenaltyKind::Icorr, 20.0f64, noisy_pair()),
        (PenaltyKind::Vrex, 10.0f64, noisy_pair()),
        (PenaltyKind::Irmv1, 6.0, clean_pair()),
        (PenaltyKind::Irmv1, 12.0, noisy_pair()),
        (PenaltyKind::Iga, 7.0f64, noisy_pair()),
        (PenaltyKind::IbErm, 3.0f64, clean_pair()),
    ];
    for optimizer in [Optimizer::Newton, Optimizer::GradientDescent] {
        for (kind, log2, pair) in &cases {
            let envs = exact(pair);
            let obj = Objective::new(*kind, log2.exp2()).unwrap();
            let cfg = OptimConfig {
                optimizer,
                max_steps: 20_000,
                ..OptimConfig::default()
            };
            let out = train_population(&envs, &obj, &cfg).unwrap();
            assert!(out.trajectory.iter().all(|p| p.objective.is_finite()));
            if !out.converged {
                assert_eq!(
                    optimizer,
                    Optimizer::GradientDescent,
                    "{kind} 2^{log2} did not converge with Newton"
                );
                continue;
            }
            let (_, g) = normalized_objective(&envs, &obj, &out.params).unwrap();
            assert!(g[0].hypot(g[1]) < cfg.grad_tol);
            let h = 1e-6;
            for j in 0..2 {
                let mut hi = out.params.as_array();
                let mut lo = hi;
                hi[j] += h;
                lo[j] -= h;
                let fd = (normalized_objective(&envs, &obj, &hi.into()).unwrap().0
                    - normalized_objective(&envs, &obj, &lo.into()).unwrap().0)
                    / (2.0 * h);
                // Both sides are ~0 at a stationary point; the floor absorbs cancellation error.
                let scale = g[j].abs().max(fd.abs()).max(1e-4);
                assert!(
                    (fd - g[j]).abs() / scale < 1e-4,
                    "{kind} 2^{log2}: fd {fd} vs {}",
                    g[j]
                );
            }
        }
    }
}

#[test]
fn reference_points() {
    let cfg = OptimConfig::default();
    let erm = train_population(
        &exact(&clean_pair()),
        &Objective::new(PenaltyKind::Icorr, 0.0).unwrap(),
        &cfg,
    )
    .unwrap();
    assert!(
        (erm.params.w1 - 0.6920).abs() < 1e-4 && (erm.params.w2 - 0.2455).abs() < 1e-4,
        "{:?}",
        erm.params
    );
    let icorr = train_population(
        &exact(&clean_pair()),
        &Objective::new(PenaltyKind::Icorr, 4096.0).unwrap(),
        &cfg,
    )
    .unwrap();
    assert!(
        icorr.params.w2 > 0.0 && (icorr.params.w1 - 0.8).abs() < 1e-2,
        "{:?}",
        icorr.params
    );
    let irm = train_population(
        &exact(&noisy_pair()),
        &Objective::new(PenaltyKind::Irmv1, 2f64.powi(30)).unwrap(),
        &cfg,
    )
    .unwrap();
    assert!(irm.params.norm() < 1e-2, "{:?}", irm.params);
}

/// With two environments the ICorr objective is quadratic:
/// `Σ_e R_e + λ·(w2·(b1 − b2)/2)²`, whose stationary point solves
/// `(Σ_e M_e + ½λ·d dᵀ)·w = Σ_e c_e` with `d = (0, b1 − b2)`.
fn icorr_quadratic_minimizer(betas: [f64; 2], lambda: f64) -> [f64; 2] {
    let (mut h, mut c) = ([[0.0; 2]; 2], [0.0; 2]);
    for beta in betas {
        for a in common::atoms(0.1, beta) {
            let x = [a.x1, a.x2];
            for r in 0..2 {
                for k in 0..2 {
                    h[r][k] += a.p * x[r] * x[k];
                }
                c[r] += a.p * x[r] * a.y;
            }
        }
    }
    let b = betas.map(|beta| 1.0 - 2.0 * beta);
    h[1][1] += 0.5 * lambda * (b[0] - b[1]).powi(2);
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    [
        (h[1][1] * c[0] - h[0][1] * c[1]) / det,
        (h[0][0] * c[1] - h[1][0] * c[0]) / det,
    ]
}

#[test]
fn icorr_finite_lambda_matches_quadratic_minimizer() {
    let envs = exact(&clean_pair());
    for log2 in [0, 6, 12, 16, 20] {
        let lambda = 2f64.powi(log2);
        let out = train_population(
            &envs,
            &Objective::new(PenaltyKind::Icorr, lambda).unwrap(),
            &OptimConfig::default(),
        )
        .unwrap();
        let w = icorr_quadratic_minimizer([0.2, 0.25], lambda);
        assert!(
            (out.params.w1 - w[0]).abs() < 1e-6 && (out.params.w2 - w[1]).abs() < 1e-6,
            "2^{log2}: {:?} vs {w:?}",
            out.params
        );
    }
    let w12 = icorr_quadratic_minimizer([0.2, 0.25], 4096.0);
    assert!(
        (w12[0] - 0.792113).abs() < 1e-6 && (w12[1] - 0.017924).abs() < 1e-6,
        "{w12:?}"
    );
    assert!(icorr_quadratic_minimizer([0.2, 0.25], 2f64.powi(17))[1] < 1e-3);
}

/// Cold starts from (0.1, 0.1) fall into the zero solution of IRMv1 once λ is large enough,
/// while the warm path stays on the branch it started on. Before the branches separate the
/// two must agree; once the gap exceeds 0.1 it must stay open.
#[test]
fn warm_and_cold_sweeps_agree_away_from_the_irmv1_jump() {
    for pair in [clean_pair(), noisy_pair()] {
        for kind in [
            PenaltyKind::Icorr,
            PenaltyKind::Vrex,
            PenaltyKind::Irmv1,
            PenaltyKind::IbErm,
        ] {
            let cold = sweep(&pair, kind, false);
            let warm = sweep(&pair, kind, true);
            let (mut separated, mut jumped) = (false, false);
            for (c, w) in cold.iter().zip(&warm) {
                if !(c.converged && w.converged) {
                    continue;
                }
                let gap = (c.total_risk() - w.total_risk()).abs();
                if kind == PenaltyKind::Irmv1 && (separated || gap >= 1e-3) {
                    separated = true;
                    if jumped {
                        assert!(
                            gap > 0.1,
                            "{kind} 2^{}: branches rejoined (gap {gap})",
                            c.log2_lambda
                        );
                    }
                    jumped |= gap > 0.1;
                    continue;
                }
                assert!(
                    gap < 1e-3,
                    "{kind} 2^{}: cold {} vs warm {}",
                    c.log2_lambda,
                    c.total_risk(),
                    w.total_risk()
                );
            }
            assert_eq!(jumped, kind == PenaltyKind::Irmv1, "{kind}");
        }
    }
}

#[test]
fn clean_irmv1_corner_trends() {
    let warm = sweep(&clean_pair(), PenaltyKind::Irmv1, true);
    let window: Vec<&SweepRecord> = warm
        .iter()
        .filter(|r| (0.0..=14.0).contains(&r.log2_lambda))
        .collect();
    assert_eq!(window.len(), 15);
    for pair in window.windows(2) {
        assert!(
            g_minus_plus(pair[1]) >= g_minus_plus(pair[0]) - 1e-3,
            "g(-1,1) fell at 2^{}",
            pair[1].log2_lambda
        );
        assert!(
            pair[1].corners[1] <= pair[0].corners[1] + 1e-3,
            "g(1,-1) rose at 2^{}",
            pair[1].log2_lambda
        );
    }
    let rise = g_minus_plus(window[14]) - g_minus_plus(window[0]);
    assert!(rise > 0.1, "{rise}");
}

/// Plug-in moments make the population trainer minimize the full-batch empirical objective
/// of the linear model exactly, so its distance to the population minimizer is pure sampling
/// error.
#[test]
fn empirical_linear_solution_converges_at_root_n() {
    let obj = Objective::new(PenaltyKind::Icorr, 16.0).unwrap();
    let cfg = OptimConfig::default();
    let target = train_population(&exact(&noisy_pair()), &obj, &cfg)
        .unwrap()
        .params;
    let sizes = [10_000usize, 100_000, 1_000_000];
    let mut log_err = Vec::new();
    for &n in &sizes {
        let errs: Vec<f64> = (0..8)
            .map(|s| {
                let pop: Vec<PopulationEnv> = sampled(&noisy_pair(), n, 500 + s)
                    .iter()
                    .map(|d| PopulationEnv::from_dataset(d).unwrap())
                    .collect();
                let w = train_population(&pop, &obj, &cfg).unwrap().params;
                (w.w1 - target.w1).hypot(w.w2 - target.w2)
            })
            .collect();
        let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        if n == 1_000_000 {
            assert!(rms < 0.01, "{rms}");
        }
        log_err.push(rms.ln());
    }
    let xs: Vec<f64> = sizes.iter().map(|n| (*n as f64).ln()).collect();
    let (mx, my) = (
        xs.iter().sum::<f64>() / 3.0,
        log_err.iter().sum::<f64>() / 3.0,
    );
    let slope = xs
        .iter()
        .zip(&log_err)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((-0.7..=-0.3).contains(&slope), "slope {slope}");
}

#[test]
fn linear_descent_reaches_the_plug_in_minimizer() {
    let data = sampled(&noisy_pair(), 20_000, 9);
    let obj = Objective::new(PenaltyKind::Icorr, 16.0).unwrap();
    let pop: Vec<PopulationEnv> = data
        .iter()
        .map(|d| PopulationEnv::from_dataset(d).unwrap())
        .collect();
    let target = train_population(&pop, &obj, &OptimConfig::default())
        .unwrap()
        .params;
    let cfg = EmpiricalConfig {
        epochs: 3000,
        learning_rate: 0.5,
        ..EmpiricalConfig::default()
    };
    let trained = train_empirical(&data, Model::linear(LinearParams::ZERO), &obj, &cfg).unwrap();
    let w = trained.model.linear_params().unwrap();
    assert!(
        (w.w1 - target.w1).abs() < 1e-3 && (w.w2 - target.w2).abs() < 1e-3,
        "{w:?} vs {target:?}"
    );
}

fn mlp_config(seed: u64) -> EmpiricalConfig {
    EmpiricalConfig {
        epochs: 300,
        batch_size: None,
        learning_rate: 0.006,
        seed,
        anneal_steps: 50,
        step_rule: StepRule::Adam,
        weight_decay: 0.1,
    }
}

#[test]
fn mlp_icorr_on_clean_pair_keeps_the_invariant_feature() {
    let train = sampled(&clean_pair(), 2000, 40);
    let test = sample_two_bit(&env(0.1, 0.9, 0.0, 0.0), 10_000, 41).unwrap();
    let model = Model::mlp(&MlpSpec {
        widths: vec![2, 16, 16, 1],
        seed: 42,
    })
    .unwrap();
    let obj = Objective::new(PenaltyKind::Icorr, 1e4).unwrap();
    let trained = train_empirical(&train, model, &obj, &mlp_config(43)).unwrap();
    let acc = evaluate(&trained.model, &test).unwrap().accuracy;
    assert!(acc > 0.8, "flipped-spurious accuracy {acc}");
}

#[test]
fn adam_and_weight_decay() {
    let train = sampled(&noisy_pair(), 500, 50);
    let model = Model::mlp(&MlpSpec {
        widths: vec![2, 8, 8, 1],
        seed: 51,
    })
    .unwrap();
    let obj = Objective::new(PenaltyKind::Vrex, 10.0).unwrap();
    let run = |wd: f64| {
        train_empirical(
            &train,
            model.clone(),
            &obj,
            &EmpiricalConfig {
                weight_decay: wd,
                ..mlp_config(52)
            },
        )
        .unwrap()
    };
    let (a, b) = (run(0.1), run(0.1));
    assert_eq!(a.model, b.model);
    let first = a.history.first().unwrap().objective;
    let last = a.history.last().unwrap().objective;
    assert!(last < first, "{first} -> {last}");
    let sq = |m: &Model| m.params().iter().map(|p| p * p).sum::<f64>();
    assert!(sq(&run(1.0).model) < sq(&run(0.0).model));
    assert!(train_empirical(
        &train,
        model,
        &obj,
        &EmpiricalConfig {
            weight_decay: -1.0,
            ..mlp_config(52)
        }
    )
    .is_err());
}
