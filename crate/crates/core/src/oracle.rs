//! Closed-form solution sets of the hard-constrained (λ = ∞) problems on two-bit
//! environment pairs, selection by training risk, and population risk tables.

use std::fmt;

use crate::envs::{two_bit_moments, EnvironmentSpec, NoiseKind};
use crate::error::{Error, Result};
use crate::output::{csv_bytes, fmt_sig};
use crate::popmath::{
    erm_solution, penalty_value, population_correlation, population_dummy_gradient,
    population_risk, total_risk, LinearParams, PenaltyKind, PopulationEnv,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    W1,
    W2,
}

/// A line of solutions: one coordinate pinned to `value`, the other free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Family {
    pub fixed: Coordinate,
    pub value: f64,
}

impl Family {
    pub fn point(&self, free: f64) -> LinearParams {
        match self.fixed {
            Coordinate::W1 => LinearParams::new(self.value, free),
            Coordinate::W2 => LinearParams::new(free, self.value),
        }
    }

    /// Exact minimizer of the summed risks along the line.
    pub fn minimizer(&self, envs: &[PopulationEnv]) -> LinearParams {
        let (mut m11, mut m22, mut m12, mut m1y, mut m2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for e in envs {
            let m = &e.moments;
            m11 += m.m11;
            m22 += m.m22;
            m12 += m.m12;
            m1y += m.m1y;
            m2y += m.m2y;
        }
        match self.fixed {
            Coordinate::W2 => self.point((m1y - self.value * m12) / m11),
            Coordinate::W1 => self.point((m2y - self.value * m12) / m22),
        }
    }

    pub fn contains(&self, w: &LinearParams, tol: f64) -> bool {
        let pinned = match self.fixed {
            Coordinate::W1 => w.w1,
            Coordinate::W2 => w.w2,
        };
        (pinned - self.value).abs() <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolutionSet {
    pub isolated: Vec<LinearParams>,
    pub families: Vec<Family>,
}

impl SolutionSet {
    pub fn points(points: Vec<LinearParams>) -> Self {
        SolutionSet {
            isolated: points,
            families: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.isolated.is_empty() && self.families.is_empty()
    }

    pub fn contains(&self, w: &LinearParams, tol: f64) -> bool {
        self.isolated
            .iter()
            .any(|p| (p.w1 - w.w1).abs() <= tol && (p.w2 - w.w2).abs() <= tol)
            || self.families.iter().any(|f| f.contains(w, tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairCase {
    Clean,
    Noisy,
}

/// Validates a training pair and returns its case with exact population summaries.
pub fn classify_pair(envs: &[EnvironmentSpec]) -> Result<(PairCase, Vec<PopulationEnv>)> {
    if envs.len() != 2 {
        return Err(Error::DegeneratePair(format!(
            "closed forms need exactly two environments, got {}",
            envs.len()
        )));
    }
    let (e1, e2) = (&envs[0], &envs[1]);
    if (e1.alpha - e2.alpha).abs() > 1e-12 {
        return Err(Error::DegeneratePair(format!(
            "alpha differs ({} vs {})",
            e1.alpha, e2.alpha
        )));
    }
    if (e1.beta - e2.beta).abs() <= 1e-12 {
        return Err(Error::DegeneratePair(format!(
            "both environments have beta = {}",
            e1.beta
        )));
    }
    let pop = vec![PopulationEnv::exact(e1)?, PopulationEnv::exact(e2)?];
    let power = |e: &EnvironmentSpec| match e.noise.kind {
        NoiseKind::None => 0.0,
        _ => e.noise.mean * e.noise.mean + e.noise.variance(),
    };
    let (s1, s2) = (power(e1), power(e2));
    if s1 == 0.0 && s2 == 0.0 {
        Ok((PairCase::Clean, pop))
    } else if (s1 - s2).abs() > 1e-12 {
        Ok((PairCase::Noisy, pop))
    } else {
        Err(Error::NotDerived {
            kind: "any",
            case: "equal-noise",
        })
    }
}

pub fn irmv1_solution_set(envs: &[EnvironmentSpec]) -> Result<SolutionSet> {
    let (case, _) = classify_pair(envs)?;
    if case == PairCase::Noisy {
        return Ok(SolutionSet::points(vec![LinearParams::ZERO]));
    }
    let a = envs[0].invariant_coef();
    let mut pts = vec![LinearParams::ZERO, LinearParams::new(a, 0.0)];
    if a * a > 0.5 {
        let w1 = 1.0 / (2.0 * a);
        let w2 = (0.5 - 1.0 / (4.0 * a * a)).sqrt();
        pts.push(LinearParams::new(w1, w2));
        pts.push(LinearParams::new(w1, -w2));
    }
    Ok(SolutionSet::points(pts))
}

pub fn vrex_solution_set(envs: &[EnvironmentSpec]) -> Result<SolutionSet> {
    let (case, _) = classify_pair(envs)?;
    if case == PairCase::Noisy {
        return Ok(SolutionSet::points(vec![LinearParams::ZERO]));
    }
    let a = envs[0].invariant_coef();
    let mut families = vec![Family {
        fixed: Coordinate::W2,
        value: 0.0,
    }];
    if a != 0.0 {
        families.insert(
            0,
            Family {
                fixed: Coordinate::W1,
                value: 1.0 / a,
            },
        );
    }
    Ok(SolutionSet {
        isolated: Vec::new(),
        families,
    })
}

pub fn icorr_solution_set(envs: &[EnvironmentSpec]) -> Result<SolutionSet> {
    classify_pair(envs)?;
    Ok(SolutionSet {
        isolated: Vec::new(),
        families: vec![Family {
            fixed: Coordinate::W2,
            value: 0.0,
        }],
    })
}

/// IGA, Fishr and IB-ERM sets for a noisy pair; each collapses to the zero predictor.
pub fn degenerate_solution_sets(
    envs: &[EnvironmentSpec],
) -> Result<Vec<(PenaltyKind, SolutionSet)>> {
    let (case, _) = classify_pair(envs)?;
    if case == PairCase::Clean {
        return Err(Error::NotDerived {
            kind: "iga/fishr/ib_erm",
            case: "clean",
        });
    }
    Ok([PenaltyKind::Iga, PenaltyKind::Fishr, PenaltyKind::IbErm]
        .into_iter()
        .map(|k| (k, SolutionSet::points(vec![LinearParams::ZERO])))
        .collect())
}

pub fn solution_set(kind: PenaltyKind, envs: &[EnvironmentSpec]) -> Result<SolutionSet> {
    match kind {
        PenaltyKind::Irmv1 => irmv1_solution_set(envs),
        PenaltyKind::Vrex => vrex_solution_set(envs),
        PenaltyKind::Icorr => icorr_solution_set(envs),
        PenaltyKind::Iga | PenaltyKind::Fishr | PenaltyKind::IbErm => {
            let (case, _) = classify_pair(envs)?;
            if case == PairCase::Clean {
                return Err(Error::NotDerived {
                    kind: kind.name(),
                    case: "clean",
                });
            }
            Ok(SolutionSet::points(vec![LinearParams::ZERO]))
        }
    }
}

/// How far `w` is from satisfying the hard constraint of `kind`.
pub fn constraint_residual(
    kind: PenaltyKind,
    envs: &[PopulationEnv],
    w: &LinearParams,
) -> Result<f64> {
    let spread = |f: &dyn Fn(&PopulationEnv) -> f64| {
        let vals: Vec<f64> = envs.iter().map(f).collect();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    Ok(match kind {
        PenaltyKind::Irmv1 => envs
            .iter()
            .map(|e| population_dummy_gradient(&e.moments, w).abs())
            .fold(0.0, f64::max),
        PenaltyKind::Vrex => spread(&|e| population_risk(&e.moments, w)),
        PenaltyKind::Icorr => spread(&|e| population_correlation(&e.moments, w)),
        _ => penalty_value(kind, envs, w)?.sqrt(),
    })
}

/// Member of `set` with the smallest summed training risk; ties go to the smaller norm,
/// then the smaller `w2`.
pub fn select_min_training_risk(set: &SolutionSet, envs: &[PopulationEnv]) -> Result<LinearParams> {
    let candidates = set
        .isolated
        .iter()
        .copied()
        .chain(set.families.iter().map(|f| f.minimizer(envs)));
    let mut best: Option<(f64, LinearParams)> = None;
    for w in candidates {
        let r = total_risk(envs, &w);
        let better = match best {
            None => true,
            Some((br, bw)) => {
                if (r - br).abs() > 1e-12 {
                    r < br
                } else if (w.norm() - bw.norm()).abs() > 1e-12 {
                    w.norm() < bw.norm()
                } else {
                    w.w2 < bw.w2
                }
            }
        };
        if better {
            best = Some((r, w));
        }
    }
    best.map(|(_, w)| w).ok_or(Error::EmptySolutionSet)
}

/// Numerically located common zeros of both environments' dummy gradients, found by
/// Newton iterations from a grid of starts. Used to audit the closed-form sets.
pub fn irmv1_roots_numeric(envs: &[PopulationEnv]) -> Vec<LinearParams> {
    assert_eq!(envs.len(), 2, "root search works on environment pairs");
    let field = |w: [f64; 2]| {
        let p = LinearParams::from(w);
        [
            population_dummy_gradient(&envs[0].moments, &p),
            population_dummy_gradient(&envs[1].moments, &p),
        ]
    };
    let jac = |w: [f64; 2]| {
        let mut j = [[0.0; 2]; 2];
        for (r, e) in envs.iter().enumerate() {
            let m = &e.moments;
            j[r][0] = 2.0 * w[0] * m.m11 + 2.0 * w[1] * m.m12 - m.m1y;
            j[r][1] = 2.0 * w[1] * m.m22 + 2.0 * w[0] * m.m12 - m.m2y;
        }
        j
    };
    let mut roots: Vec<LinearParams> = Vec::new();
    for i in 0..13 {
        for k in 0..13 {
            let mut w = [-1.5 + 0.25 * i as f64, -1.5 + 0.25 * k as f64];
            for _ in 0..100 {
                let f = field(w);
                let j = jac(w);
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                if det.abs() < 1e-14 {
                    break;
                }
                w[0] -= (j[1][1] * f[0] - j[0][1] * f[1]) / det;
                w[1] -= (-j[1][0] * f[0] + j[0][0] * f[1]) / det;
                if !(w[0].is_finite() && w[1].is_finite()) {
                    break;
                }
            }
            let f = field(w);
            if w[0].is_finite() && f[0].abs() < 1e-12 && f[1].abs() < 1e-12 {
                let p = LinearParams::from(w);
                if !roots
                    .iter()
                    .any(|r| (r.w1 - p.w1).abs() < 1e-7 && (r.w2 - p.w2).abs() < 1e-7)
                {
                    roots.push(p);
                }
            }
        }
    }
    roots.sort_by(|a, b| a.w1.total_cmp(&b.w1).then(a.w2.total_cmp(&b.w2)));
    roots
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Oracle,
    Erm,
    Constrained(PenaltyKind),
    Fixed { label: String, params: LinearParams },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Oracle => "oracle".into(),
            Method::Erm => "erm".into(),
            Method::Constrained(k) => format!("{}_inf", k.name()),
            Method::Fixed { label, .. } => label.clone(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "oracle" => Ok(Method::Oracle),
            "erm" => Ok(Method::Erm),
            _ => {
                let base = t.strip_suffix("_inf").unwrap_or(&t);
                Ok(Method::Constrained(base.parse()?))
            }
        }
    }

    /// Weights this method selects on the training pair.
    pub fn solve(&self, train: &[EnvironmentSpec]) -> Result<LinearParams> {
        match self {
            Method::Fixed { params, .. } => Ok(*params),
            Method::Erm => {
                let pop = train
                    .iter()
                    .map(PopulationEnv::exact)
                    .collect::<Result<Vec<_>>>()?;
                erm_solution(&pop)
            }
            Method::Oracle => {
                let pop = train
                    .iter()
                    .map(PopulationEnv::exact)
                    .collect::<Result<Vec<_>>>()?;
                Ok(Family {
                    fixed: Coordinate::W2,
                    value: 0.0,
                }
                .minimizer(&pop))
            }
            Method::Constrained(kind) => {
                let set = solution_set(*kind, train)?;
                let (_, pop) = classify_pair(train)?;
                select_min_training_risk(&set, &pop)
            }
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub method: String,
    pub env: EnvironmentSpec,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RiskTable {
    pub rows: Vec<RiskRow>,
}

impl RiskTable {
    pub fn risks_for(&self, method: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| r.risk)
            .collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(
            &["method", "alpha", "beta", "noise_mean", "noise_var", "risk"],
            self.rows.iter().map(|r| {
                vec![
                    r.method.clone(),
                    fmt_sig(r.env.alpha),
                    fmt_sig(r.env.beta),
                    fmt_sig(r.env.noise.mean),
                    fmt_sig(r.env.noise.variance()),
                    fmt_sig(r.risk),
                ]
            }),
        )
    }
}

/// Population risk of each method's selected weights on every evaluation environment.
pub fn reproduce_risk_table(
    methods: &[Method],
    train: &[EnvironmentSpec],
    eval: &[EnvironmentSpec],
) -> Result<RiskTable> {
    let mut rows = Vec::with_capacity(methods.len() * eval.len());
    for method in methods {
        let w = method.solve(train)?;
        for env in eval {
            let risk = population_risk(&two_bit_moments(env)?, &w);
            rows.push(RiskRow {
                method: method.label(),
                env: *env,
                risk,
            });
        }
    }
    Ok(RiskTable { rows })
}

/// Whether `value` rounds to the printed figure `printed` at its number of decimals.
pub fn matches_printed(value: f64, printed: &str) -> bool {
    let Ok(target) = printed.trim().parse::<f64>() else {
        return false;
    };
    let decimals = printed.trim().split('.').nth(1).map_or(0, str::len) as i32;
    (value - target).abs() <= 0.5 * 10f64.powi(-decimals) + 1e-12
}
