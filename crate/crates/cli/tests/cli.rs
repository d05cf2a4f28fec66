use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str =
    "data.n_train = 300\ndata.n_test = 100\nschedule.rounds = 5\nschedule.warmup = 2\n";

fn plc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plc"))
        .args(args)
        .output()
        .unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&plc(&["--help"])), 0);
    assert_eq!(code(&plc(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&plc(&["frobnicate"])), 2);
    assert_eq!(code(&plc(&["run", "--seed", "minus"])), 2);
    assert_eq!(code(&plc(&["run", "--config", "/nonexistent/run.cfg"])), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let bad = write_config(dir.path(), "schedule.beta = -1\n");
    assert_eq!(code(&plc(&["run", "--config", &bad, "--out", out])), 2);
    let unknown = write_config(dir.path(), "model.depth = 3\n");
    assert_eq!(code(&plc(&["run", "--config", &unknown, "--out", out])), 2);
    assert_eq!(code(&plc(&["gen", "--jobs", "0", "--out", out])), 2);
}

#[test]
fn empty_training_set_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "data.n_train = 0\n");
    let output = plc(&["gen", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&output), 2);
    assert!(!out.exists());
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let garbage = dir.path().join("report.json");
    fs::write(&garbage, "{ not json").unwrap();
    let output = plc(&[
        "check-theory",
        "--report",
        garbage.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&output),
        3,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), SMALL);
    let output = plc(&[
        "run",
        "--config",
        &config,
        "--seed",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let rounds = fs::read_to_string(out.join("rounds.csv")).unwrap();
    let lines: Vec<&str> = rounds.lines().collect();
    assert_eq!(
        lines[0],
        "round,theta,T,flips,purity,train_acc,test_acc_bayes,residual_margin"
    );
    assert_eq!(lines.len(), 6);
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"command\": \"run\""));
    assert!(report.contains("\"seed\": \"4\""));
    assert!(out.join("train_corrected.csv").exists());
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        assert_eq!(
            code(&plc(&[
                "gen",
                "--config",
                &config,
                "--out",
                out.to_str().unwrap()
            ])),
            0
        );
    }
    for file in ["train.csv", "test.csv", "oracle.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(file)).unwrap(),
            fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn zero_level_corruption_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    let noisy = dir.path().join("noisy");
    let config = write_config(
        dir.path(),
        &format!("{SMALL}noise.kind = uniform\nnoise.level = 0\n"),
    );
    assert_eq!(
        code(&plc(&[
            "gen",
            "--config",
            &config,
            "--out",
            clean.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        code(&plc(&[
            "corrupt",
            "--config",
            &config,
            "--out",
            noisy.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        fs::read(clean.join("train.csv")).unwrap(),
        fs::read(noisy.join("train.csv")).unwrap()
    );
}

#[test]
fn check_theory_marks_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("standard");
    let theory = dir.path().join("theory");
    let config = write_config(dir.path(), SMALL);
    assert_eq!(
        code(&plc(&[
            "standard",
            "--config",
            &config,
            "--out",
            run.to_str().unwrap()
        ])),
        0
    );
    let report = run.join("report.json");
    let output = plc(&[
        "check-theory",
        "--report",
        report.to_str().unwrap(),
        "--out",
        theory.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let text = fs::read_to_string(theory.join("theory.json")).unwrap();
    assert!(text.contains("\"baseline\": true"));
}

#[test]
fn sweep_without_axes_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let config = write_config(dir.path(), SMALL);
    assert_eq!(
        code(&plc(&[
            "sweep",
            "--config",
            &config,
            "--out",
            out.to_str().unwrap()
        ])),
        0
    );
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn sweep_summary_matches_cell_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let config = write_config(
        dir.path(),
        &format!("{SMALL}sweep.schedule.beta = 0.1 | 0.3\nsweep.repeats = 2\n"),
    );
    let output = plc(&["sweep", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(
        code(&output),
        0,
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "cell,schedule.beta,runs,failures,final_purity_mean,final_purity_std,test_acc_bayes_mean,test_acc_bayes_std"
    );
    assert_eq!(lines.len(), 3);
    for (cell, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "2");
        let mut purities = Vec::new();
        for repeat in 0..2 {
            let rounds = out
                .join("cells")
                .join(format!("cell{cell:03}_rep{repeat:02}"))
                .join("rounds.csv");
            let text = fs::read_to_string(rounds).unwrap();
            let last = text.lines().last().unwrap();
            purities.push(last.split(',').nth(4).unwrap().parse::<f64>().unwrap());
        }
        let mean: f64 = fields[4].parse().unwrap();
        assert!((mean - (purities[0] + purities[1]) / 2.0).abs() < 1e-12);
    }
}
