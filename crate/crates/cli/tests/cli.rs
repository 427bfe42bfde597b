use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn icorr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icorr"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn with_config(dir: &Path, text: &str, args: &[&str]) -> Output {
    let path = dir.join("test.ini");
    fs::write(&path, text).unwrap();
    let mut full = vec!["--config", path.to_str().unwrap()];
    full.extend_from_slice(args);
    icorr(dir, &full)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Rows of a CSV file as string vectors, header first.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn column(table: &[Vec<String>], name: &str) -> usize {
    table[0]
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name} in {:?}", table[0]))
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn table1_matches_and_lists_its_outputs() {
    let dir = TempDir::new().unwrap();
    let out = icorr(dir.path(), &["table1"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let right = rows(&dir.path().join("table1_right.csv"));
    let (method, risk) = (column(&right, "method"), column(&right, "risk"));
    let cells = |label: &str| -> Vec<f64> {
        right[1..]
            .iter()
            .filter(|r| r[method] == label)
            .map(|r| r[risk].parse().unwrap())
            .collect()
    };
    let icorr_cells = cells("icorr_inf");
    let vrex_cells = cells("vrex_inf");
    assert_eq!(icorr_cells.len(), 4);
    assert!(
        icorr_cells.iter().all(|r| format!("{r:.4}") == "0.1805"),
        "{icorr_cells:?}"
    );
    assert!(
        vrex_cells.iter().all(|r| format!("{r:.2}") == "0.50"),
        "{vrex_cells:?}"
    );

    let m = manifest(dir.path());
    assert_eq!(m["command"], "table1");
    assert_eq!(m["exit_code"], 0);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 4);
    for name in outputs {
        assert!(dir.path().join(name.as_str().unwrap()).is_file(), "{name}");
    }
    assert!(m["config"].as_str().unwrap().contains("[envs]"));
}

#[test]
fn empty_eval_list_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = with_config(dir.path(), "[envs]\neval =\n", &["table1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("eval"), "{}", stderr(&out));
    assert_eq!(manifest(dir.path())["exit_code"], 1);
}

#[test]
fn appendix_tables_report_their_mismatches() {
    let dir = TempDir::new().unwrap();
    let out = icorr(dir.path(), &["tables-appendix"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("mismatch: table_a1"),
        "{}",
        stderr(&out)
    );
    for name in [
        "table_a1.csv",
        "table_a2_left.csv",
        "table_a2_right.csv",
        "table_a1_checks.csv",
    ] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let left = rows(&dir.path().join("table_a2_left_checks.csv"));
    let ok = column(&left, "match");
    assert!(left[1..].iter().all(|r| r[ok] == "true"));
}

#[test]
fn unknown_penalty_lists_valid_names() {
    let dir = TempDir::new().unwrap();
    let out = icorr(dir.path(), &["sweep", "--penalty", "clove"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for name in ["icorr", "irmv1", "vrex", "iga", "fishr", "ib_erm"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn sentinel_grid_gives_one_erm_row() {
    let dir = TempDir::new().unwrap();
    let out = icorr(
        dir.path(),
        &[
            "sweep",
            "--penalty",
            "irmv1",
            "--grid",
            "-1",
            "--train",
            "clean",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let table = rows(&dir.path().join("sweep_irmv1_clean.csv"));
    assert_eq!(table.len(), 2);
    let (w1, w2) = (column(&table, "w1"), column(&table, "w2"));
    let w: (f64, f64) = (table[1][w1].parse().unwrap(), table[1][w2].parse().unwrap());
    assert!(
        (w.0 - 0.6920).abs() < 1e-3 && (w.1 - 0.2455).abs() < 1e-3,
        "{w:?}"
    );
}

fn terminal_row(dir: &Path, penalty: &str) -> (Vec<String>, Vec<String>) {
    let out = icorr(dir, &["sweep", "--penalty", penalty, "--svg"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stem = format!("sweep_{penalty}_noisy");
    assert!(dir.join(format!("{stem}.svg")).is_file());
    let table = rows(&dir.join(format!("{stem}.csv")));
    assert_eq!(table.len(), 33);
    (table[0].clone(), table.last().unwrap().clone())
}

fn field(row: &(Vec<String>, Vec<String>), name: &str) -> f64 {
    let i = row.0.iter().position(|h| h == name).unwrap();
    row.1[i].parse().unwrap()
}

#[test]
fn noisy_icorr_sweep_drops_the_spurious_feature() {
    let dir = TempDir::new().unwrap();
    let last = terminal_row(dir.path(), "icorr");
    assert!(field(&last, "w2").abs() < 1e-3, "{last:?}");
    assert!((field(&last, "w1") - 1.6 / 2.08).abs() < 1e-2, "{last:?}");
}

/// At large λ the noisy VREx sweep settles on the equal-risk curve, at a point whose risk is
/// far below the zero predictor's (which is 1 in each environment), rather than at zero.
#[test]
fn noisy_vrex_sweep_settles_on_the_equal_risk_curve() {
    let dir = TempDir::new().unwrap();
    let last = terminal_row(dir.path(), "vrex");
    let (r1, r2) = (field(&last, "risk_e1"), field(&last, "risk_e2"));
    assert!((r1 - r2).abs() < 1e-5, "{last:?}");
    assert!(r1 < 0.2, "{last:?}");
    assert!(
        (field(&last, "w1") - 0.7082).abs() < 1e-3 && (field(&last, "w2") - 0.1834).abs() < 1e-3,
        "{last:?}"
    );
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let smoke = "[empirical]\nseeds = 2\nn_train = 500\nn_test = 500\nepochs = 20\n";
    for dir in [&a, &b] {
        assert_eq!(icorr(dir.path(), &["table1"]).status.code(), Some(0));
        assert_eq!(
            icorr(
                dir.path(),
                &["sweep", "--penalty", "fishr", "--grid", "0..6"]
            )
            .status
            .code(),
            Some(0)
        );
        with_config(dir.path(), smoke, &["empirical"]);
    }
    let mut compared = 0;
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        if Path::new(&name).extension().is_some_and(|e| e == "csv") {
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap(),
                "{name:?}"
            );
            compared += 1;
        }
    }
    assert!(compared >= 7, "{compared}");
}

#[test]
fn seed_flag_changes_empirical_data() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let smoke =
        "[empirical]\nseeds = 1\nn_train = 300\nn_test = 300\nepochs = 5\nmethods = icorr\n";
    with_config(a.path(), smoke, &["empirical", "--seed", "1"]);
    with_config(b.path(), smoke, &["empirical", "--seed", "2"]);
    let runs = |d: &TempDir| fs::read(d.path().join("empirical_runs.csv")).unwrap();
    assert_ne!(runs(&a), runs(&b));
    assert_eq!(manifest(a.path())["seeds"]["empirical_seed"], 1);
}

#[test]
fn missing_dataset_sizes_are_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = with_config(dir.path(), "[empirical]\nn_train =\n", &["empirical"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("n_train"), "{}", stderr(&out));
}

#[test]
fn zero_noise_verify_is_vacuous_but_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = "[sem]\nenvs = (0.2, none, none); (0.7, none, none)\nn = 20000\nrandom_family = 2\n";
    let out = with_config(dir.path(), cfg, &["verify"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}{}",
        stdout(&out),
        stderr(&out)
    );
    assert!(stdout(&out).contains("notice"), "{}", stdout(&out));
    assert!(dir.path().join("verify.csv").is_file());
}

#[test]
fn zero_gamma_is_rejected_at_load() {
    let dir = TempDir::new().unwrap();
    let out = with_config(dir.path(), "[sem]\ngamma = 0\n", &["verify"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("verify.csv").exists());
}

#[test]
fn help_and_bad_flags() {
    let dir = TempDir::new().unwrap();
    let help = icorr(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("tables-appendix"));
    assert_eq!(
        icorr(dir.path(), &["table1", "--jobs", "0"]).status.code(),
        Some(1)
    );
    assert_eq!(
        icorr(
            dir.path(),
            &["sweep", "--penalty", "icorr", "--train", "dirty"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(icorr(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn in_process_entry_point_matches_the_binary() {
    let dir = TempDir::new().unwrap();
    let code = icorr_cli::run(["icorr", "table1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, icorr_cli::EXIT_OK);
    assert!(dir.path().join(icorr_cli::MANIFEST_FILE).is_file());
}
