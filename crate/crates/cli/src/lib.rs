//! Command-line harness: config-driven experiments that write CSV/SVG artifacts and a
//! JSON run manifest.
//!
//! Exit codes: 0 when every check passes, 1 on usage or configuration errors, 2 when a
//! computed result disagrees with its reference.

pub mod experiments;
pub mod reference;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use icorr::config::ExperimentConfig;
use icorr::output::atomic_write;
use icorr::popmath::PenaltyKind;
use icorr::trainer::{parse_grid, sweep_csv, sweep_svg};
use icorr::verify::reports_csv;
use serde::Serialize;

use experiments::{
    directional_shortfalls, empirical_runs_csv, empirical_summary_csv, summarize, verify_passed,
    TableReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "icorr",
    version,
    about = "Invariance-penalty experiments on synthetic multi-environment data"
)]
pub struct Cli {
    /// Configuration file; keys override the built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Also write SVG plots where available.
    #[arg(long, global = true)]
    pub svg: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form risk tables for the clean and noisy training pairs.
    Table1,
    /// Gradient-penalty and noisy-evaluation risk tables.
    TablesAppendix,
    /// Population λ-sweep of one penalty.
    Sweep {
        #[arg(long)]
        penalty: String,
        /// log2 λ grid, e.g. "-1, 0..30"; -1 stands for λ = 0.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Start each grid point from the previous solution.
        #[arg(long)]
        warm_start: bool,
        /// Training pair: clean or noisy.
        #[arg(long)]
        train: Option<String>,
    },
    /// Network training over several seeds, scored on the flipped-correlation environment.
    Empirical,
    /// Monte-Carlo checks of the invariance theorem and its corollaries.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Table1 => "table1",
            Command::TablesAppendix => "tables-appendix",
            Command::Sweep { .. } => "sweep",
            Command::Empirical => "empirical",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: String,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
    pub exit_code: i32,
    pub messages: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

struct Run {
    out: PathBuf,
    outputs: Vec<String>,
    messages: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

impl Run {
    fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        atomic_write(&self.out.join(name), bytes).with_context(|| format!("writing {name}"))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn say(&mut self, line: String) {
        println!("{line}");
        self.messages.push(line);
    }

    fn warn(&mut self, line: String) {
        eprintln!("{line}");
        self.messages.push(line);
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let start = Instant::now();
    let mut run = Run {
        out: cli.out.clone(),
        outputs: Vec::new(),
        messages: Vec::new(),
        seeds: BTreeMap::new(),
    };
    let mut snapshot = String::new();
    let code = match execute(&cli, &mut run, &mut snapshot) {
        Ok(code) => code,
        Err(e) => {
            run.warn(format!("error: {e:#}"));
            EXIT_USAGE
        }
    };
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        args: args
            .iter()
            .skip(1)
            .map(|a| a.to_string_lossy().into_owned())
            .collect(),
        config: snapshot,
        seeds: run.seeds.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: run.outputs.clone(),
        duration_seconds: start.elapsed().as_secs_f64(),
        exit_code: code,
        messages: run.messages.clone(),
    };
    let written = serde_json::to_vec_pretty(&manifest)
        .map_err(anyhow::Error::from)
        .and_then(|bytes| Ok(atomic_write(&run.out.join(MANIFEST_FILE), &bytes)?));
    if let Err(e) = written {
        eprintln!("error: writing {MANIFEST_FILE}: {e:#}");
        return if code == EXIT_OK { EXIT_USAGE } else { code };
    }
    code
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::from_defaults()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(ExperimentConfig::from_text(&text)?)
        }
    }
}

fn execute(cli: &Cli, run: &mut Run, snapshot: &mut String) -> anyhow::Result<i32> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        for (section, key) in [
            ("empirical", "seed"),
            ("sem", "seed"),
            ("optim", "fishr_seed"),
        ] {
            cfg.raw.set(section, key, seed.to_string());
        }
    }
    *snapshot = cfg.raw.to_text();
    match &cli.command {
        Command::Table1 => {
            let tables = experiments::table1(&cfg.envs()?)?;
            write_tables(run, &tables)
        }
        Command::TablesAppendix => {
            let envs = cfg.envs()?;
            let optim = cfg.optim()?;
            run.seeds.insert("fishr_seed".into(), optim.fishr_seed);
            let tables = experiments::tables_appendix(&envs, &optim)?;
            write_tables(run, &tables)
        }
        Command::Sweep {
            penalty,
            grid,
            warm_start,
            train,
        } => {
            let kind: PenaltyKind = penalty.parse()?;
            let envs = cfg.envs()?;
            let sweep_cfg = cfg.sweep()?;
            let mut optim = cfg.optim()?;
            optim.optim.warm_start |= *warm_start;
            let grid = match grid {
                Some(g) => parse_grid(g)?,
                None => sweep_cfg.grid,
            };
            let noisy = match train.as_deref().map(str::to_ascii_lowercase).as_deref() {
                None => sweep_cfg.train_noisy,
                Some("noisy") => true,
                Some("clean") => false,
                Some(other) => bail!("--train '{other}' must be clean or noisy"),
            };
            if kind == PenaltyKind::Fishr {
                run.seeds.insert("fishr_seed".into(), optim.fishr_seed);
            }
            let pair = if noisy {
                &envs.train_noisy
            } else {
                &envs.train_clean
            };
            let records = experiments::sweep(kind, pair, &grid, &optim)?;
            let stem = format!(
                "sweep_{}_{}",
                kind.name(),
                if noisy { "noisy" } else { "clean" }
            );
            run.write(&format!("{stem}.csv"), &sweep_csv(&records)?)?;
            if cli.svg {
                let title = format!(
                    "{} on the {} pair",
                    kind.name(),
                    if noisy { "noisy" } else { "clean" }
                );
                run.write(
                    &format!("{stem}.svg"),
                    sweep_svg(&records, &title).as_bytes(),
                )?;
            }
            for r in records.iter().filter(|r| r.error.is_some() || !r.converged) {
                let why = r.error.clone().unwrap_or_else(|| "did not converge".into());
                run.warn(format!("warning: log2 λ = {}: {why}", r.log2_lambda));
            }
            run.say(format!(
                "{} grid points written to {stem}.csv",
                records.len()
            ));
            Ok(EXIT_OK)
        }
        Command::Empirical => {
            let sec = cfg.empirical()?;
            run.seeds.insert("empirical_seed".into(), sec.seed);
            let runs = experiments::empirical(&sec)?;
            let summaries = summarize(&sec.methods, &runs);
            run.write("empirical_runs.csv", &empirical_runs_csv(&runs)?)?;
            run.write("empirical_summary.csv", &empirical_summary_csv(&summaries)?)?;
            for s in &summaries {
                run.say(format!(
                    "{:<6} best {:.4} worst {:.4} mean {:.4}",
                    s.method.name(),
                    s.best,
                    s.worst,
                    s.mean
                ));
            }
            let shortfalls = directional_shortfalls(&summaries);
            for s in &shortfalls {
                run.warn(format!("mismatch: {s}"));
            }
            Ok(if shortfalls.is_empty() {
                EXIT_OK
            } else {
                EXIT_MISMATCH
            })
        }
        Command::Verify => {
            let sec = cfg.sem()?;
            run.seeds.insert("sem_seed".into(), sec.seed);
            let reports = experiments::verify(&sec)?;
            run.write("verify.csv", &reports_csv(&reports)?)?;
            let summary: String = reports.iter().map(|r| r.summary()).collect();
            run.write("verify_summary.txt", summary.as_bytes())?;
            for r in &reports {
                run.say(format!(
                    "[{}] {}{}",
                    r.verdict,
                    r.check,
                    if r.vacuous { " (vacuous)" } else { "" }
                ));
            }
            if reports.iter().any(|r| r.vacuous) {
                run.say(
                    "notice: some claims are vacuous for this configuration and were not tested"
                        .into(),
                );
            }
            Ok(if verify_passed(&reports) {
                EXIT_OK
            } else {
                EXIT_MISMATCH
            })
        }
    }
}

fn write_tables(run: &mut Run, tables: &[TableReport]) -> anyhow::Result<i32> {
    for t in tables {
        run.write(&format!("{}.csv", t.name), &t.table.to_csv()?)?;
        run.write(&format!("{}_checks.csv", t.name), &t.checks_csv()?)?;
        for c in t.mismatches() {
            let bound = c
                .tolerance
                .map_or("at printed precision".to_string(), |tol| {
                    format!("within ±{tol}")
                });
            run.warn(format!(
                "mismatch: {} {} row {}: computed {:.6}, printed {} ({bound})",
                t.name, c.method, c.row, c.value, c.printed
            ));
        }
        let matched = t.checks.len() - t.mismatches().count();
        run.say(format!(
            "{}: {matched}/{} cells match",
            t.name,
            t.checks.len()
        ));
    }
    Ok(if tables.iter().all(TableReport::passed) {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    })
}
