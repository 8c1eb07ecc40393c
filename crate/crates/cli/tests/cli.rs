use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use favar_cli::manifest::{Manifest, StageStatus};
use favar_cli::{write_fixture, Stage, FIXTURE_CONFIG};
use tempfile::TempDir;

fn favar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_favar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 7).unwrap();
    let config = dir.path().join("config.toml");
    (dir, config)
}

fn with_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("edited.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_all(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run-all",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    favar(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_panel_is_a_config_error() {
    let (dir, _) = fixture();
    let config = with_config(dir.path(), &FIXTURE_CONFIG.replace("\"panel.csv\"", "\"absent.csv\""));
    let out = run_all(&config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("absent.csv"));
    assert!(!dir.path().join("out").join("manifest.json").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let (dir, _) = fixture();
    let config = with_config(dir.path(), &format!("{FIXTURE_CONFIG}\n[extra]\nkey = 1\n"));
    assert_eq!(run_all(&config, &dir.path().join("out"), &[]).status.code(), Some(2));
    let bad_level = run_all(
        &dir.path().join("config.toml"),
        &dir.path().join("out"),
        &["--level", "1.5"],
    );
    assert_eq!(bad_level.status.code(), Some(2));
}

#[test]
fn identification_failure_is_reported_by_stage() {
    let (dir, _) = fixture();
    let config = with_config(
        dir.path(),
        &FIXTURE_CONFIG.replace("draws = 200", "draws = 200\nmax_attempts = 10"),
    );
    let out_dir = dir.path().join("out");
    let out = run_all(&config, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(Stage::Identify.exit_code()), "{}", stderr(&out));
    assert_eq!(out.status.code(), Some(8));

    let manifest = Manifest::read(&out_dir).unwrap();
    assert_eq!(manifest.failed_stage, Some(Stage::Identify));
    assert_eq!(manifest.status(Stage::Estimate), StageStatus::Ok);
    assert_eq!(manifest.status(Stage::Identify), StageStatus::Failed);
    assert_eq!(manifest.status(Stage::Irf), StageStatus::NotRun);

    let report = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(report.contains("failed at stage `identify`"));
    assert!(report.contains("| identify | failed |"));
    assert!(report.contains("stage `fevd` did not run"));
    // Tables from stages that finished are still rendered.
    assert!(report.contains("## Granger causality tests\n\nF statistics"));
}

/// Replaces every token that contains a digit, so only the structure of the
/// text remains.
fn skeleton(text: &str) -> String {
    text.lines()
        .map(|line| {
            line.split(' ')
                .map(|tok| {
                    if tok.chars().any(|c| c.is_ascii_digit()) {
                        "#"
                    } else {
                        tok
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn seeds_change_numbers_but_not_structure() {
    let (dir, config) = fixture();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_all(&config, &a, &["--seed", "1"]).status.success());
    assert!(run_all(&config, &b, &["--seed", "2"]).status.success());
    let ra = std::fs::read_to_string(a.join("report.md")).unwrap();
    let rb = std::fs::read_to_string(b.join("report.md")).unwrap();
    assert_ne!(ra, rb);
    assert_eq!(skeleton(&ra), skeleton(&rb));
    // Sign-restriction draws depend on the seed; the data-only stages do not.
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "factors.csv"), read(&b, "factors.csv"));
    assert_eq!(read(&a, "granger_table.csv"), read(&b, "granger_table.csv"));
    assert_ne!(read(&a, "irf_draws_pit.csv"), read(&b, "irf_draws_pit.csv"));
}

#[test]
fn exogenous_tax_entry_skips_identification() {
    let (dir, config) = fixture();
    let out_dir = dir.path().join("out");
    let out = run_all(&config, &out_dir, &["--tax-entry", "exogenous"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = Manifest::read(&out_dir).unwrap();
    assert_eq!(manifest.status(Stage::Identify), StageStatus::Skipped);
    assert_eq!(manifest.status(Stage::Report), StageStatus::Ok);
    assert!(out_dir.join("irf_pit.csv").exists());
    let report = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(report.contains("_Not applicable: stage `identify` was skipped."));
}

#[test]
fn raw_factors_and_penalty_mode_run() {
    let (dir, config) = fixture();
    let out_dir = dir.path().join("out");
    let out = run_all(
        &config,
        &out_dir,
        &["--factor-source", "raw", "--mode", "penalty", "--bootstrap", "100"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = std::fs::read_to_string(out_dir.join("identification_summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.contains(",penalty,")));
}

#[test]
fn stage_subcommands_stop_at_their_stage() {
    let (dir, config) = fixture();
    let out_dir = dir.path().join("out");
    let args = [
        "factors",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ];
    let out = favar(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = Manifest::read(&out_dir).unwrap();
    assert_eq!(manifest.status(Stage::Factors), StageStatus::Ok);
    assert_eq!(manifest.status(Stage::Smooth), StageStatus::NotRun);
    assert!(out_dir.join("ic_table.csv").exists());
    assert!(!out_dir.join("var_model.json").exists());

    let report = favar(&["report", "--output-dir", out_dir.to_str().unwrap()]);
    assert!(report.status.success(), "{}", stderr(&report));
    let text = std::fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(text.contains("## Number of factors"));
    assert!(text.contains("stage `smooth` did not run"));
}

#[test]
fn collapsed_unconstrained_trend_fails_at_smooth() {
    // The fixture's second factor has no low-frequency movement, so its
    // unconstrained trend is a straight line.
    let (dir, _) = fixture();
    let config = with_config(
        dir.path(),
        &FIXTURE_CONFIG.replace("trend = \"hp\"", "trend = \"unconstrained\""),
    );
    let out = run_all(&config, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(Stage::Smooth.exit_code()));
    assert!(stderr(&out).contains("F2"), "{}", stderr(&out));
}

#[test]
fn report_on_an_empty_directory_fails_at_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = favar(&["report", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(Stage::Report.exit_code()));
}

#[test]
fn output_dir_does_not_change_the_config_hash() {
    let (dir, config) = fixture();
    let (a, b) = (dir.path().join("a"), dir.path().join("nested").join("b"));
    for d in [&a, &b] {
        let args = [
            "ingest",
            "--config",
            config.to_str().unwrap(),
            "--output-dir",
            d.to_str().unwrap(),
        ];
        assert!(favar(&args).status.success());
    }
    let (ma, mb) = (Manifest::read(&a).unwrap(), Manifest::read(&b).unwrap());
    assert_eq!(ma.config_hash, mb.config_hash);
    assert_eq!(ma.inputs, mb.inputs);
}

#[test]
fn synth_writes_a_runnable_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = favar(&["synth", "--dir", dir.path().to_str().unwrap(), "--seed", "11"]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["panel.csv", "events.csv", "federal_rates.csv", "config.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
