use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_jumplab");

const MINIMAL: &str = r#"schema_version = 1

[experiment]
name = "uniqueness_gap_experiment"
x0 = 1.0
deltas = [0.0, 0.01]

[[models]]
name = "gbm"

[noise]
t_end = 1.0
base_step = 0.01

[seeds]
root = 0
count = 10
"#;

fn jumplab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn minimal_config_passes_and_writes_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", MINIMAL);
    let out = dir.path().join("out");
    let o = jumplab(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "uniqueness_gap_experiment.report.json",
            "uniqueness_gap_experiment.seeds.csv"
        ]
    );
    let csv = fs::read_to_string(out.join("uniqueness_gap_experiment.seeds.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("seed,statistic,value"));
}

#[test]
fn unknown_model_exits_3_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &MINIMAL.replace("\"gbm\"", "\"foo\""));
    let o = jumplab(&["run", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));
}

#[test]
fn unknown_experiment_exits_3_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &MINIMAL.replace("uniqueness_gap_experiment", "bar_experiment"),
    );
    let o = jumplab(&["run", &cfg]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bar_experiment"));
}

#[test]
fn missing_file_and_bad_schema_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&jumplab(&[
            "run",
            dir.path().join("nope.toml").to_str().unwrap()
        ])),
        3
    );
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &MINIMAL.replace("schema_version = 1", "schema_version = 9"),
    );
    assert_eq!(code(&jumplab(&["run", &cfg])), 3);
    let cfg = write_config(
        dir.path(),
        "d.toml",
        &MINIMAL.replace("count = 10", "count = 0"),
    );
    assert_eq!(code(&jumplab(&["run", &cfg])), 3);
}

#[test]
fn same_config_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", MINIMAL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        code(&jumplab(&["run", &cfg, "--out", a.to_str().unwrap()])),
        0
    );
    assert_eq!(
        code(&jumplab(&["run", &cfg, "--out", b.to_str().unwrap()])),
        0
    );
    for f in [
        "uniqueness_gap_experiment.report.json",
        "uniqueness_gap_experiment.seeds.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn rerun_from_report_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", MINIMAL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        code(&jumplab(&[
            "run",
            &cfg,
            "--out",
            a.to_str().unwrap(),
            "--seed-offset",
            "5"
        ])),
        0
    );
    let report = a.join("uniqueness_gap_experiment.report.json");
    assert_eq!(
        code(&jumplab(&[
            "run",
            report.to_str().unwrap(),
            "--out",
            b.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        fs::read(&report).unwrap(),
        fs::read(b.join("uniqueness_gap_experiment.report.json")).unwrap()
    );
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["seeds"][0], 5);
    assert_eq!(v["config"]["seeds"]["offset"], 5);
}

#[test]
fn dump_paths_writes_one_csv_per_seed_and_leg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", MINIMAL);
    let out = dir.path().join("out");
    assert_eq!(
        code(&jumplab(&[
            "run",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--dump-paths"
        ])),
        0
    );
    // One base leg plus one per δ.
    assert_eq!(fs::read_dir(out.join("paths")).unwrap().count(), 10 * 3);
    let csv =
        fs::read_to_string(out.join("paths/uniqueness_gap_experiment.seed0.leg0.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,X,is_atom,z,delta_X"));
    assert_eq!(csv.lines().count(), 1 + 101);
}

#[test]
fn failing_and_refused_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let swapped = r#"schema_version = 1
[experiment]
name = "comparison"
x0 = [0.0, 0.0]
negative_control = NC
[[models]]
name = "affine"
b0 = 3.0
s0 = 1.0
[[models]]
name = "affine"
s0 = 1.0
[noise]
t_end = 1.0
base_step = 0.001
[seeds]
root = 0
count = 5
"#;
    let fail = write_config(dir.path(), "f.toml", &swapped.replace("NC", "true"));
    assert_eq!(
        code(&jumplab(&[
            "run",
            &fail,
            "--out",
            dir.path().to_str().unwrap()
        ])),
        1
    );
    let refused = write_config(dir.path(), "r.toml", &swapped.replace("NC", "false"));
    assert_eq!(
        code(&jumplab(&[
            "run",
            &refused,
            "--out",
            dir.path().to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn list_outputs() {
    let o = jumplab(&["list", "experiments"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("comparison_experiment"));
    let o = jumplab(&["list", "models"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("spectrally_positive"));
    assert_eq!(code(&jumplab(&["list", "bogus"])), 3);
}

#[test]
fn output_stays_in_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("output = \"{}\"\n{MINIMAL}", dir.path().join("o").display()),
    );
    assert_eq!(code(&jumplab(&["run", &cfg])), 0);
    let mut top: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    top.sort();
    assert_eq!(top, ["c.toml", "o"]);
}
