//! The computations behind each subcommand, free of file and terminal I/O.

use icorr::config::{EmpiricalSection, EnvsSection, OptimSection, SemSection};
use icorr::envs::{derive_seed, sample_two_bit, EnvironmentSpec};
use icorr::oracle::{matches_printed, reproduce_risk_table, Method, RiskTable};
use icorr::output::{csv_bytes, fmt_sig};
use icorr::popmath::{Lambda, LinearParams, Objective, PenaltyKind, PopulationEnv};
use icorr::trainer::{
    evaluate, lambda_sweep, train_empirical, train_population, EmpiricalConfig, MlpSpec, Model,
    SweepRecord,
};
use icorr::verify::{
    check_appendix_c, check_corollary_gradient, check_corollary_risk_variance, check_theorem1,
    random_sem_family, CheckReport, Verdict,
};
use icorr::Result;
use rayon::prelude::*;

use crate::reference::{
    PrintedColumn, EMPIRICAL_MARGIN, TABLE1_LEFT, TABLE1_RIGHT, TABLE_A1, TABLE_A2_LEFT,
    TABLE_A2_RIGHT, TRAINED_CELL_TOLERANCE,
};

/// One table cell compared with its printed value.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCheck {
    pub method: String,
    pub row: usize,
    pub value: f64,
    pub printed: &'static str,
    /// Absolute tolerance for optimized cells; `None` means a match at printed precision.
    pub tolerance: Option<f64>,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct TableReport {
    pub name: &'static str,
    pub table: RiskTable,
    pub checks: Vec<CellCheck>,
}

impl TableReport {
    fn new(
        name: &'static str,
        table: RiskTable,
        reference: &[PrintedColumn],
        trained: &[&str],
    ) -> Self {
        let mut checks = Vec::new();
        for (method, printed) in reference {
            let tolerance = trained.contains(method).then_some(TRAINED_CELL_TOLERANCE);
            for (row, value) in table
                .risks_for(method)
                .into_iter()
                .enumerate()
                .take(printed.len())
            {
                let ok = match tolerance {
                    Some(tol) => printed[row]
                        .parse::<f64>()
                        .is_ok_and(|p| (value - p).abs() <= tol),
                    None => matches_printed(value, printed[row]),
                };
                checks.push(CellCheck {
                    method: method.to_string(),
                    row,
                    value,
                    printed: printed[row],
                    tolerance,
                    ok,
                });
            }
        }
        TableReport {
            name,
            table,
            checks,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &CellCheck> {
        self.checks.iter().filter(|c| !c.ok)
    }

    pub fn checks_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &[
                "table",
                "method",
                "row",
                "value",
                "printed",
                "tolerance",
                "match",
            ],
            self.checks.iter().map(|c| {
                vec![
                    self.name.to_string(),
                    c.method.clone(),
                    c.row.to_string(),
                    fmt_sig(c.value),
                    c.printed.to_string(),
                    c.tolerance.map_or("printed".to_string(), fmt_sig),
                    c.ok.to_string(),
                ]
            }),
        )
    }
}

fn main_methods() -> Vec<Method> {
    vec![
        Method::Oracle,
        Method::Erm,
        Method::Constrained(PenaltyKind::Irmv1),
        Method::Constrained(PenaltyKind::Vrex),
        Method::Constrained(PenaltyKind::Icorr),
    ]
}

/// Closed-form tables for the clean (left) and noisy (right) training pairs.
pub fn table1(envs: &EnvsSection) -> Result<[TableReport; 2]> {
    let methods = main_methods();
    let left = reproduce_risk_table(&methods, &envs.train_clean, &envs.eval)?;
    let right = reproduce_risk_table(&methods, &envs.train_noisy, &envs.eval)?;
    Ok([
        TableReport::new("table1_left", left, TABLE1_LEFT, &[]),
        TableReport::new("table1_right", right, TABLE1_RIGHT, &[]),
    ])
}

/// Population environments for training `kind`; the gradient-variance penalty gets a
/// fixed-seed sample of per-sample gradient statistics.
pub fn population_envs(
    kind: PenaltyKind,
    train: &[EnvironmentSpec],
    optim: &OptimSection,
) -> Result<Vec<PopulationEnv>> {
    train
        .iter()
        .enumerate()
        .map(|(i, env)| {
            if kind == PenaltyKind::Fishr {
                PopulationEnv::with_gradient_stats(
                    env,
                    optim.fishr_samples,
                    derive_seed(optim.fishr_seed, i as u64),
                )
            } else {
                PopulationEnv::exact(env)
            }
        })
        .collect()
}

/// Weights found by the population optimizer at `λ = 2^log2_lambda`.
pub fn trained_params(
    kind: PenaltyKind,
    log2_lambda: f64,
    train: &[EnvironmentSpec],
    optim: &OptimSection,
) -> Result<LinearParams> {
    let envs = population_envs(kind, train, optim)?;
    let objective = Objective {
        penalty: kind,
        lambda: Lambda::from_log2(log2_lambda)?,
    };
    Ok(train_population(&envs, &objective, &optim.optim)?.params)
}

/// The gradient-penalty table (closed-form and optimized cells) and the noisy-evaluation
/// tables.
pub fn tables_appendix(envs: &EnvsSection, optim: &OptimSection) -> Result<[TableReport; 3]> {
    let train = &envs.train_noisy;
    let (iga, fishr) = rayon::join(
        || trained_params(PenaltyKind::Iga, 7.0, train, optim),
        || trained_params(PenaltyKind::Fishr, 4.0, train, optim),
    );
    let a1_methods = vec![
        Method::Oracle,
        Method::Constrained(PenaltyKind::Iga),
        Method::Fixed {
            label: "iga_2^7".into(),
            params: iga?,
        },
        Method::Constrained(PenaltyKind::Fishr),
        Method::Fixed {
            label: "fishr_2^4".into(),
            params: fishr?,
        },
        Method::Constrained(PenaltyKind::IbErm),
    ];
    let a1 = reproduce_risk_table(&a1_methods, train, &envs.eval)?;
    let methods = main_methods();
    let left = reproduce_risk_table(&methods, train, &envs.eval_a2_left)?;
    let right = reproduce_risk_table(&methods, train, &envs.eval_a2_right)?;
    Ok([
        TableReport::new("table_a1", a1, TABLE_A1, &["iga_2^7", "fishr_2^4"]),
        TableReport::new("table_a2_left", left, TABLE_A2_LEFT, &[]),
        TableReport::new("table_a2_right", right, TABLE_A2_RIGHT, &[]),
    ])
}

pub fn sweep(
    kind: PenaltyKind,
    train: &[EnvironmentSpec],
    grid: &[f64],
    optim: &OptimSection,
) -> Result<Vec<SweepRecord>> {
    let envs = population_envs(kind, train, optim)?;
    lambda_sweep(&envs, kind, grid, &optim.optim)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalRun {
    pub method: PenaltyKind,
    pub replicate: usize,
    pub seed: u64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub method: PenaltyKind,
    pub best: f64,
    pub worst: f64,
    pub mean: f64,
}

/// Trains every method on every replicate. Within a replicate all methods see the same
/// data and the same initial network.
pub fn empirical(sec: &EmpiricalSection) -> Result<Vec<EmpiricalRun>> {
    let jobs: Vec<(usize, PenaltyKind)> = (0..sec.seeds)
        .flat_map(|r| sec.methods.iter().map(move |m| (r, *m)))
        .collect();
    jobs.par_iter()
        .map(|&(replicate, method)| empirical_run(sec, replicate, method))
        .collect()
}

fn empirical_run(
    sec: &EmpiricalSection,
    replicate: usize,
    method: PenaltyKind,
) -> Result<EmpiricalRun> {
    let seed = derive_seed(sec.seed, replicate as u64);
    let train: Vec<_> = sec
        .train
        .iter()
        .enumerate()
        .map(|(i, env)| sample_two_bit(env, sec.n_train, derive_seed(seed, i as u64)))
        .collect::<Result<_>>()?;
    let test = sample_two_bit(&sec.test, sec.n_test, derive_seed(seed, 1 << 20))?;
    let model = Model::mlp(&MlpSpec {
        widths: sec.mlp.widths.clone(),
        seed: derive_seed(seed, 2 << 20),
    })?;
    let cfg = EmpiricalConfig {
        epochs: sec.epochs,
        batch_size: sec.batch_size,
        learning_rate: sec.learning_rate,
        seed: derive_seed(seed, 3 << 20),
        anneal_steps: sec.anneal_steps,
        step_rule: sec.step_rule,
        weight_decay: sec.weight_decay,
    };
    let trained = train_empirical(&train, model, &Objective::new(method, sec.lambda)?, &cfg)?;
    let pooled = train
        .iter()
        .skip(1)
        .fold(train[0].clone(), |acc, d| acc.concat(d));
    let train_eval = evaluate(&trained.model, &pooled)?;
    let test_eval = evaluate(&trained.model, &test)?;
    Ok(EmpiricalRun {
        method,
        replicate,
        seed,
        train_accuracy: train_eval.accuracy,
        test_accuracy: test_eval.accuracy,
        test_risk: test_eval.risk,
    })
}

/// Best, worst and mean test accuracy per method, in configuration order.
pub fn summarize(methods: &[PenaltyKind], runs: &[EmpiricalRun]) -> Vec<MethodSummary> {
    methods
        .iter()
        .filter_map(|&method| {
            let acc: Vec<f64> = runs
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.test_accuracy)
                .collect();
            if acc.is_empty() {
                return None;
            }
            Some(MethodSummary {
                method,
                best: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                worst: acc.iter().copied().fold(f64::INFINITY, f64::min),
                mean: acc.iter().sum::<f64>() / acc.len() as f64,
            })
        })
        .collect()
}

/// Shortfalls of ICorr's mean accuracy against every other method, by the required margin.
/// Empty when the ordering holds or ICorr is not among the methods.
pub fn directional_shortfalls(summaries: &[MethodSummary]) -> Vec<String> {
    let Some(icorr) = summaries.iter().find(|s| s.method == PenaltyKind::Icorr) else {
        return Vec::new();
    };
    summaries
        .iter()
        .filter(|s| s.method != PenaltyKind::Icorr && icorr.mean - s.mean < EMPIRICAL_MARGIN)
        .map(|s| {
            format!(
                "icorr mean accuracy {} does not exceed {} mean {} by {}",
                fmt_sig(icorr.mean),
                s.method,
                fmt_sig(s.mean),
                fmt_sig(EMPIRICAL_MARGIN)
            )
        })
        .collect()
}

pub fn empirical_runs_csv(runs: &[EmpiricalRun]) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            "method",
            "replicate",
            "seed",
            "train_accuracy",
            "test_accuracy",
            "test_risk",
        ],
        runs.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                fmt_sig(r.train_accuracy),
                fmt_sig(r.test_accuracy),
                fmt_sig(r.test_risk),
            ]
        }),
    )
}

pub fn empirical_summary_csv(summaries: &[MethodSummary]) -> Result<Vec<u8>> {
    csv_bytes(
        &["method", "best", "worst", "mean"],
        summaries.iter().map(|s| {
            vec![
                s.method.to_string(),
                fmt_sig(s.best),
                fmt_sig(s.worst),
                fmt_sig(s.mean),
            ]
        }),
    )
}

/// Every causal check: the theorem on the configured model and on a randomized family,
/// then the corollary witnesses on the configured model.
pub fn verify(sec: &SemSection) -> Result<Vec<CheckReport>> {
    let cfg = &sec.sem;
    let family = random_sem_family(sec.random_family, derive_seed(sec.seed, 1));
    let mut reports = vec![check_theorem1(
        cfg,
        sec.n,
        sec.reps,
        derive_seed(sec.seed, 2),
    )?];
    let family_reports = family
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let mut r = check_theorem1(c, sec.n, sec.reps, derive_seed(sec.seed, 100 + k as u64))?;
            r.check = format!("theorem1_random_{k}");
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    reports.extend(family_reports);
    for env in 0..cfg.environments.len() {
        reports.push(check_corollary_gradient(
            cfg,
            env,
            sec.n,
            derive_seed(sec.seed, 200 + env as u64),
        )?);
    }
    let pair = (0, 1);
    reports.push(check_corollary_risk_variance(
        cfg,
        pair,
        sec.n,
        derive_seed(sec.seed, 300),
    )?);
    for (i, kind) in [PenaltyKind::Iga, PenaltyKind::Fishr, PenaltyKind::IbErm]
        .into_iter()
        .enumerate()
    {
        reports.push(check_appendix_c(
            kind,
            cfg,
            pair,
            sec.n,
            derive_seed(sec.seed, 400 + i as u64),
        )?);
    }
    Ok(reports)
}

/// Whether every non-vacuous check was confirmed.
pub fn verify_passed(reports: &[CheckReport]) -> bool {
    reports
        .iter()
        .all(|r| r.vacuous || r.verdict == Verdict::Confirmed)
}
