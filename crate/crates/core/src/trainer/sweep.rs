use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::output::{csv_bytes, fmt_sig};
use crate::popmath::{
    population_risk, Lambda, LinearParams, Objective, PenaltyKind, PopulationEnv,
};

use super::population::{train_population, OptimConfig};

/// One trained point of a λ-sweep. `log2_lambda = −1` stands for λ = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub penalty: PenaltyKind,
    pub log2_lambda: f64,
    pub params: LinearParams,
    pub corners: [f64; 4],
    pub env_risks: Vec<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

impl SweepRecord {
    pub fn total_risk(&self) -> f64 {
        self.env_risks.iter().sum()
    }
}

/// Integers −1, 0, …, 30.
pub fn default_grid() -> Vec<f64> {
    (-1..=30).map(f64::from).collect()
}

/// Parses a comma-separated grid; `a..b` expands to the integers from `a` to `b` inclusive.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let mut grid = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let parse = |s: &str| {
                s.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::InvalidGrid(format!("'{part}': {e}")))
            };
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo > hi {
                return Err(Error::InvalidGrid(format!("empty range '{part}'")));
            }
            grid.extend((lo..=hi).map(|v| v as f64));
        } else {
            grid.push(
                part.parse::<f64>()
                    .map_err(|e| Error::InvalidGrid(format!("'{part}': {e}")))?,
            );
        }
    }
    validate_grid(&grid)?;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("grid is empty".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidGrid("grid values must be finite".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("grid must be strictly ascending".into()));
    }
    if grid.iter().skip(1).any(|g| *g == -1.0) {
        return Err(Error::InvalidGrid(
            "the λ = 0 sentinel −1 is only allowed first".into(),
        ));
    }
    Ok(())
}

fn train_point(
    envs: &[PopulationEnv],
    kind: PenaltyKind,
    log2: f64,
    cfg: &OptimConfig,
    init: LinearParams,
) -> SweepRecord {
    let result = Lambda::from_log2(log2)
        .map(|lambda| Objective {
            penalty: kind,
            lambda,
        })
        .and_then(|obj| train_population(envs, &obj, &OptimConfig { init, ..*cfg }));
    match result {
        Ok(out) => SweepRecord {
            penalty: kind,
            log2_lambda: log2,
            params: out.params,
            corners: out.params.corners(),
            env_risks: envs
                .iter()
                .map(|e| population_risk(&e.moments, &out.params))
                .collect(),
            converged: out.converged,
            error: None,
        },
        Err(e) => SweepRecord {
            penalty: kind,
            log2_lambda: log2,
            params: LinearParams::new(f64::NAN, f64::NAN),
            corners: [f64::NAN; 4],
            env_risks: vec![f64::NAN; envs.len()],
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Trains at every grid point. Cold starts run in parallel; warm starts chain each point
/// from the previous solution.
pub fn lambda_sweep(
    envs: &[PopulationEnv],
    kind: PenaltyKind,
    log2_grid: &[f64],
    cfg: &OptimConfig,
) -> Result<Vec<SweepRecord>> {
    validate_grid(log2_grid)?;
    cfg.validate()?;
    if envs.len() < 2 {
        return Err(Error::TooFewEnvironments {
            needed: 2,
            got: envs.len(),
        });
    }
    if !cfg.warm_start {
        return Ok(log2_grid
            .par_iter()
            .map(|&g| train_point(envs, kind, g, cfg, cfg.init))
            .collect());
    }
    let mut records = Vec::with_capacity(log2_grid.len());
    let mut init = cfg.init;
    for &g in log2_grid {
        let rec = train_point(envs, kind, g, cfg, init);
        init = if rec.error.is_none() {
            rec.params
        } else {
            cfg.init
        };
        records.push(rec);
    }
    Ok(records)
}

/// Sweep CSV: `penalty,log2_lambda,w1,w2,g_pp,g_pm,g_mp,g_mm,risk_e1,…,converged`.
pub fn sweep_csv(records: &[SweepRecord]) -> Result<Vec<u8>> {
    let n_env = records.iter().map(|r| r.env_risks.len()).max().unwrap_or(2);
    let mut header: Vec<String> = [
        "penalty",
        "log2_lambda",
        "w1",
        "w2",
        "g_pp",
        "g_pm",
        "g_mp",
        "g_mm",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=n_env).map(|i| format!("risk_e{i}")));
    header.push("converged".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(
        &header_refs,
        records.iter().map(|r| {
            let mut row = vec![
                r.penalty.name().to_string(),
                fmt_sig(r.log2_lambda),
                fmt_sig(r.params.w1),
                fmt_sig(r.params.w2),
            ];
            row.extend(r.corners.iter().map(|c| fmt_sig(*c)));
            row.extend(
                (0..n_env).map(|i| r.env_risks.get(i).map_or(String::new(), |v| fmt_sig(*v))),
            );
            row.push(r.converged.to_string());
            row
        }),
    )
}
