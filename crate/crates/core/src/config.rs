//! Line-oriented experiment configuration: `[section]` headers and `key = value` lines.
//!
//! `#` starts a comment. A user file is laid over the built-in defaults key by key, so it
//! only needs the keys it changes.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::envs::{
    well_conditioned_mixing, EnvironmentSpec, InvariantLaw, NoiseSpec, SemConfig, SemEnvironment,
};
use crate::error::{Error, Result};
use crate::popmath::{LinearParams, PenaltyKind};
use crate::trainer::{parse_grid, MlpSpec, OptimConfig, Optimizer, StepRule};

pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.ini");

/// Raw `section -> key -> value` map; sections and keys are kept sorted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut current: Option<String> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                let name = name.trim().to_ascii_lowercase();
                raw.sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let section = current.as_ref().ok_or_else(|| {
                Error::Config(format!("line {}: key outside of any section", lineno + 1))
            })?;
            raw.sections
                .get_mut(section)
                .expect("section inserted on header")
                .insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
        }
        Ok(raw)
    }

    pub fn overlay(&mut self, other: &RawConfig) {
        for (name, keys) in &other.sections {
            let target = self.sections.entry(name.clone()).or_default();
            for (k, v) in keys {
                target.insert(k.clone(), v.clone());
            }
        }
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_ascii_lowercase())
            .or_default()
            .insert(key.to_ascii_lowercase(), value.into());
    }

    /// Canonical text form: sections and keys in sorted order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, keys) in &self.sections {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in keys {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(String::as_str)
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| Error::Config(format!("missing [{section}] {key}")))
    }

    fn number<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(section, key)?;
        v.parse()
            .map_err(|e| Error::Config(format!("[{section}] {key} = '{v}': {e}")))
    }

    fn flag(&self, section: &str, key: &str) -> Result<bool> {
        match self.require(section, key)?.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(Error::Config(format!(
                "[{section}] {key} = '{other}' is not a boolean"
            ))),
        }
    }

    fn numbers(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        let v = self.require(section, key)?;
        split_top_level(v, ',')
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("[{section}] {key}: '{s}': {e}")))
            })
            .collect()
    }

    fn env_list(&self, section: &str, key: &str) -> Result<Vec<EnvironmentSpec>> {
        let list = parse_env_list(self.require(section, key)?)
            .map_err(|e| Error::Config(format!("[{section}] {key}: {e}")))?;
        if list.is_empty() {
            return Err(Error::Config(format!(
                "[{section}] {key} lists no environments"
            )));
        }
        Ok(list)
    }
}

/// Splits on `sep` outside parentheses, trimming pieces and dropping empty ones.
fn split_top_level(text: &str, sep: char) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if c == sep && depth == 0 {
            parts.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    parts.push(cur);
    parts
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

fn tuple_fields(text: &str) -> Result<Vec<String>> {
    let t = text.trim();
    let inner = t
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Config(format!("expected a parenthesized tuple, got '{t}'")))?;
    Ok(split_top_level(inner, ','))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::Config(format!("'{s}': {e}")))
}

/// Parses `(alpha, beta, noise)`; the noise field may be omitted for clean environments.
pub fn parse_env(text: &str) -> Result<EnvironmentSpec> {
    let f = tuple_fields(text)?;
    if f.len() != 2 && f.len() != 3 {
        return Err(Error::Config(format!(
            "environment '{text}' needs (alpha, beta[, noise])"
        )));
    }
    let noise = if f.len() == 3 {
        f[2].parse::<NoiseSpec>()?
    } else {
        NoiseSpec::NONE
    };
    EnvironmentSpec::new(parse_f64(&f[0])?, parse_f64(&f[1])?, noise)
}

pub fn parse_env_list(text: &str) -> Result<Vec<EnvironmentSpec>> {
    split_top_level(text, ';')
        .iter()
        .map(|s| parse_env(s))
        .collect()
}

/// Parses `(spurious_flip, invariant_noise, spurious_noise)`.
pub fn parse_sem_env(text: &str) -> Result<SemEnvironment> {
    let f = tuple_fields(text)?;
    if f.len() != 3 {
        return Err(Error::Config(format!(
            "SEM environment '{text}' needs (flip, inv_noise, spurious_noise)"
        )));
    }
    Ok(SemEnvironment {
        spurious_flip: parse_f64(&f[0])?,
        inv_noise: f[1].parse()?,
        spurious_noise: f[2].parse()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvsSection {
    pub train_clean: Vec<EnvironmentSpec>,
    pub train_noisy: Vec<EnvironmentSpec>,
    pub eval: Vec<EnvironmentSpec>,
    pub eval_a2_left: Vec<EnvironmentSpec>,
    pub eval_a2_right: Vec<EnvironmentSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    pub train_noisy: bool,
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimSection {
    pub optim: OptimConfig,
    pub fishr_samples: usize,
    pub fishr_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemSection {
    pub sem: SemConfig,
    pub n: usize,
    pub reps: usize,
    pub random_family: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSection {
    pub train: Vec<EnvironmentSpec>,
    pub test: EnvironmentSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: usize,
    pub seed: u64,
    pub methods: Vec<PenaltyKind>,
    pub lambda: f64,
    pub mlp: MlpSpec,
    pub epochs: usize,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub anneal_steps: usize,
    pub step_rule: StepRule,
    pub weight_decay: f64,
}

/// Fully typed configuration. Sections parse lazily so that a command only fails on the
/// sections it actually uses.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
}

impl ExperimentConfig {
    pub fn from_defaults() -> Self {
        ExperimentConfig {
            raw: RawConfig::parse(DEFAULT_CONFIG).expect("built-in config parses"),
        }
    }

    /// Defaults overlaid with the keys in `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::from_defaults();
        cfg.raw.overlay(&RawConfig::parse(text)?);
        Ok(cfg)
    }

    pub fn envs(&self) -> Result<EnvsSection> {
        let r = &self.raw;
        Ok(EnvsSection {
            train_clean: r.env_list("envs", "train_clean")?,
            train_noisy: r.env_list("envs", "train_noisy")?,
            eval: r.env_list("envs", "eval")?,
            eval_a2_left: r.env_list("envs", "eval_a2_left")?,
            eval_a2_right: r.env_list("envs", "eval_a2_right")?,
        })
    }

    pub fn sweep(&self) -> Result<SweepSection> {
        let r = &self.raw;
        let train_noisy = match r.require("sweep", "train")?.to_ascii_lowercase().as_str() {
            "noisy" => true,
            "clean" => false,
            other => {
                return Err(Error::Config(format!(
                    "[sweep] train = '{other}' (expected clean or noisy)"
                )))
            }
        };
        Ok(SweepSection {
            grid: parse_grid(r.require("sweep", "grid")?)?,
            train_noisy,
            warm_start: r.flag("sweep", "warm_start")?,
        })
    }

    pub fn optim(&self) -> Result<OptimSection> {
        let r = &self.raw;
        let init = r.numbers("optim", "init")?;
        if init.len() != 2 {
            return Err(Error::Config("[optim] init needs two numbers".into()));
        }
        let optim = OptimConfig {
            learning_rate: r.number("optim", "learning_rate")?,
            max_steps: r.number("optim", "max_steps")?,
            grad_tol: r.number("optim", "grad_tol")?,
            init: LinearParams::new(init[0], init[1]),
            warm_start: r.flag("sweep", "warm_start")?,
            optimizer: Optimizer::parse(r.require("optim", "optimizer")?)?,
        };
        optim.validate()?;
        let fishr_samples: usize = r.number("optim", "fishr_samples")?;
        if fishr_samples < 2 {
            return Err(Error::Config("[optim] fishr_samples must be >= 2".into()));
        }
        Ok(OptimSection {
            optim,
            fishr_samples,
            fishr_seed: r.number("optim", "fishr_seed")?,
        })
    }

    pub fn sem(&self) -> Result<SemSection> {
        let r = &self.raw;
        let gamma = r.numbers("sem", "gamma")?;
        let d_s: usize = r.number("sem", "d_s")?;
        let d = gamma.len() + d_s;
        let mixing = match r.require("sem", "mixing")?.to_ascii_lowercase().as_str() {
            "identity" => DMatrix::identity(d, d),
            "random" => well_conditioned_mixing(d, r.number("sem", "mixing_seed")?),
            other => {
                return Err(Error::Config(format!(
                    "[sem] mixing = '{other}' (expected identity or random)"
                )))
            }
        };
        let environments = split_top_level(r.require("sem", "envs")?, ';')
            .iter()
            .map(|s| parse_sem_env(s))
            .collect::<Result<Vec<_>>>()?;
        let sem = SemConfig::new(
            gamma,
            d_s,
            InvariantLaw::parse(r.require("sem", "inv_law")?)?,
            r.number("sem", "label_noise_var")?,
            environments,
            mixing,
        )?;
        let n: usize = r.number("sem", "n")?;
        if n < 2 {
            return Err(Error::Config("[sem] n must be >= 2".into()));
        }
        Ok(SemSection {
            sem,
            n,
            reps: r.number::<usize>("sem", "reps")?.max(1),
            random_family: r.number("sem", "random_family")?,
            seed: r.number("sem", "seed")?,
        })
    }

    pub fn empirical(&self) -> Result<EmpiricalSection> {
        let r = &self.raw;
        let test = r.env_list("empirical", "test")?;
        if test.len() != 1 {
            return Err(Error::Config(
                "[empirical] test must list exactly one environment".into(),
            ));
        }
        let methods = split_top_level(r.require("empirical", "methods")?, ',')
            .iter()
            .map(|m| m.parse::<PenaltyKind>())
            .collect::<Result<Vec<_>>>()?;
        let widths = r
            .numbers("empirical", "widths")?
            .into_iter()
            .map(|w| {
                if w >= 1.0 && w.fract() == 0.0 {
                    Ok(w as usize)
                } else {
                    Err(Error::Config(format!("bad width {w}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let batch_size = match r
            .require("empirical", "batch_size")?
            .to_ascii_lowercase()
            .as_str()
        {
            "full" | "none" => None,
            _ => Some(r.number("empirical", "batch_size")?),
        };
        let n_train: usize = r.number("empirical", "n_train")?;
        let n_test: usize = r.number("empirical", "n_test")?;
        if n_train == 0 || n_test == 0 {
            return Err(Error::Config(
                "[empirical] n_train and n_test must be positive".into(),
            ));
        }
        let lambda: f64 = r.number("empirical", "lambda")?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "[empirical] lambda {lambda} must be finite and >= 0"
            )));
        }
        Ok(EmpiricalSection {
            train: r.env_list("empirical", "train")?,
            test: test[0],
            n_train,
            n_test,
            seeds: r.number("empirical", "seeds")?,
            seed: r.number("empirical", "seed")?,
            methods,
            lambda,
            mlp: MlpSpec { widths, seed: 0 },
            epochs: r.number("empirical", "epochs")?,
            batch_size,
            learning_rate: r.number("empirical", "learning_rate")?,
            anneal_steps: r.number("empirical", "anneal_steps")?,
            step_rule: StepRule::parse(r.require("empirical", "step_rule")?)?,
            weight_decay: r.number("empirical", "weight_decay")?,
        })
    }
}
