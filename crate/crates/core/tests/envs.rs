mod common;

use common::{env, mean_se};
use icorr::envs::{
    derive_seed, empirical_moments, sample_two_bit, sem_generate, two_bit_moments,
    well_conditioned_mixing, EnvironmentSpec, InvariantLaw, NoiseSpec, SemConfig, SemEnvironment,
};
use proptest::prelude::*;

fn check_within_five_se(spec: &EnvironmentSpec, n: usize, seed: u64) {
    let exact = two_bit_moments(spec).unwrap();
    let d = sample_two_bit(spec, n, seed).unwrap();
    let est = empirical_moments(&d).unwrap();
    let columns: [(&str, f64, f64, Vec<f64>); 9] = [
        (
            "m11",
            exact.m11,
            est.m11,
            d.x1.iter().map(|x| x * x).collect(),
        ),
        (
            "m22",
            exact.m22,
            est.m22,
            d.x2.iter().map(|x| x * x).collect(),
        ),
        (
            "m12",
            exact.m12,
            est.m12,
            d.x1.iter().zip(&d.x2).map(|(a, b)| a * b).collect(),
        ),
        (
            "m1y",
            exact.m1y,
            est.m1y,
            d.x1.iter().zip(&d.y).map(|(a, b)| a * b).collect(),
        ),
        (
            "m2y",
            exact.m2y,
            est.m2y,
            d.x2.iter().zip(&d.y).map(|(a, b)| a * b).collect(),
        ),
        ("m1", exact.m1, est.m1, d.x1.clone()),
        ("m2", exact.m2, est.m2, d.x2.clone()),
        (
            "myy",
            exact.myy,
            est.myy,
            d.y.iter().map(|y| y * y).collect(),
        ),
        ("my", exact.my, est.my, d.y.clone()),
    ];
    for (name, exact, est, values) in columns {
        let (mean, se) = mean_se(&values);
        assert!(
            (mean - est).abs() < 1e-9,
            "{name}: estimator disagrees with the column mean"
        );
        let bound = 5.0 * se.max(1e-12);
        assert!(
            (est - exact).abs() <= bound,
            "{spec:?} {name}: {est} vs {exact} (5 SE = {bound})"
        );
    }
}

#[test]
fn sampled_moments_within_five_standard_errors() {
    let specs = [
        env(0.1, 0.2, 0.0, 0.0),
        env(0.1, 0.25, 0.1, 0.02),
        env(0.25, 0.1, 0.0, 0.5),
        env(0.4, 0.7, -0.3, 0.2),
        env(0.1, 0.9, 0.2, 0.01),
    ];
    for (i, s) in specs.iter().enumerate() {
        check_within_five_se(s, 200_000, derive_seed(5, i as u64));
    }
}

#[test]
fn cross_moment_at_one_million_samples() {
    let spec = env(0.1, 0.2, 0.2, 0.01);
    let d = sample_two_bit(&spec, 1_000_000, 99).unwrap();
    let products: Vec<f64> = d.x1.iter().zip(&d.x2).map(|(a, b)| a * b).collect();
    let (mean, se) = mean_se(&products);
    assert!((mean - 0.53).abs() <= 4.0 * se, "E[x1 x2] = {mean} ± {se}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_moments_match_enumeration(
        alpha in 0.0..=1.0f64, beta in 0.0..=1.0f64, mean in -1.0..1.0f64, var in 0.0..1.0f64,
    ) {
        let m = two_bit_moments(&env(alpha, beta, mean, var)).unwrap();
        let at = common::atoms(alpha, beta);
        let e = |f: &dyn Fn(&common::Atom) -> f64| at.iter().map(|a| a.p * f(a)).sum::<f64>();
        let second = mean * mean + var;
        prop_assert!((m.m11 - (e(&|a| a.x1 * a.x1) + second)).abs() < 1e-12);
        prop_assert!((m.m22 - (e(&|a| a.x2 * a.x2) + second)).abs() < 1e-12);
        prop_assert!((m.m12 - (e(&|a| a.x1 * a.x2) + second)).abs() < 1e-12);
        prop_assert!((m.m1y - e(&|a| a.x1 * a.y)).abs() < 1e-12);
        prop_assert!((m.m2y - e(&|a| a.x2 * a.y)).abs() < 1e-12);
        prop_assert!((m.m1 - mean).abs() < 1e-12 && (m.m2 - mean).abs() < 1e-12);
        prop_assert!((m.myy - 1.0).abs() < 1e-12 && m.my.abs() < 1e-12);
    }

    #[test]
    fn no_noise_equals_degenerate_gaussian(alpha in 0.0..=1.0f64, beta in 0.0..=1.0f64) {
        let none = two_bit_moments(&EnvironmentSpec::new(alpha, beta, NoiseSpec::NONE).unwrap()).unwrap();
        let zero = two_bit_moments(&EnvironmentSpec::new(alpha, beta, NoiseSpec::gaussian(0.0, 0.0).unwrap()).unwrap()).unwrap();
        prop_assert_eq!(none, zero);
    }
}

#[test]
fn sampling_is_schedule_independent() {
    let spec = env(0.1, 0.25, 0.1, 0.02);
    let sequential: Vec<_> = (0..4)
        .map(|i| sample_two_bit(&spec, 1000, derive_seed(3, i)).unwrap())
        .collect();
    let threaded: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4)
            .rev()
            .map(|i| s.spawn(move || (i, sample_two_bit(&spec, 1000, derive_seed(3, i)).unwrap())))
            .collect();
        let mut out: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        out.sort_by_key(|(i, _)| *i);
        out.into_iter().map(|(_, d)| d).collect()
    });
    assert_eq!(sequential, threaded);
}

#[test]
fn sampler_only_noise_kinds_still_sample() {
    for noise in [
        NoiseSpec::uniform(0.1, 0.1).unwrap(),
        NoiseSpec::poisson_centered(0.0, 0.1).unwrap(),
    ] {
        let spec = EnvironmentSpec::new(0.1, 0.2, noise).unwrap();
        assert!(two_bit_moments(&spec).is_err());
        let d = sample_two_bit(&spec, 100_000, 8).unwrap();
        let m = empirical_moments(&d).unwrap();
        assert!(
            (m.m1y - 0.8).abs() < 0.01,
            "noise independent of the label keeps E[x1 y] = 1 − 2α"
        );
    }
}

fn sem_correlation_spread(n: usize, seed: u64) -> f64 {
    let envs = vec![
        SemEnvironment {
            spurious_flip: 0.1,
            inv_noise: NoiseSpec::gaussian_var(0.2, 0.05).unwrap(),
            spurious_noise: NoiseSpec::NONE,
        },
        SemEnvironment {
            spurious_flip: 0.8,
            inv_noise: NoiseSpec::gaussian_var(0.0, 0.2).unwrap(),
            spurious_noise: NoiseSpec::gaussian_var(0.3, 0.1).unwrap(),
        },
    ];
    let cfg = SemConfig::new(
        vec![0.8],
        1,
        InvariantLaw::Rademacher,
        0.1,
        envs,
        well_conditioned_mixing(2, 4),
    )
    .unwrap();
    let theta = cfg.oracle_weights();
    let rho: Vec<f64> = (0..2)
        .map(|e| {
            let s = sem_generate(&cfg, e, n, seed).unwrap();
            let f: Vec<f64> = (0..n)
                .map(|i| s.row(i).iter().zip(&theta).map(|(x, t)| x * t).sum())
                .collect();
            let fbar = f.iter().sum::<f64>() / n as f64;
            f.iter().zip(&s.y).map(|(f, y)| (f - fbar) * y).sum::<f64>() / n as f64
        })
        .collect();
    (rho[0] - rho[1]).powi(2) / 4.0
}

#[test]
fn sem_correlation_spread_shrinks_with_n() {
    let small: f64 = (0..5).map(|s| sem_correlation_spread(2_000, s)).sum();
    let large: f64 = (0..5).map(|s| sem_correlation_spread(200_000, s)).sum();
    assert!(
        large < small / 10.0,
        "spread {small} at n=2e3 vs {large} at n=2e5"
    );
}
