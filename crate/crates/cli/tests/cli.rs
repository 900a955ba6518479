use std::path::Path;
use std::process::{Command, Output};

fn vidsum(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidsum"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) {
    let o = vidsum(
        &["synth", "--out", "data", "--frames", "80", "--phases", "6", "--side", "24"],
        dir,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("config: "));
}

const CONFIG: &str = "data/vidsum.toml";
const VIDEO: &str = "data/video";
const TRANSCRIPT: &str = "data/transcript.srt";

#[test]
fn stage_by_stage_matches_one_shot_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);

    let o = vidsum(
        &["--config", CONFIG, "--run-dir", "whole", "run", "--video", VIDEO, "--transcript", TRANSCRIPT],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("extracted 80"), "{}", stdout(&o));

    let base = ["--config", CONFIG, "--run-dir", "steps"];
    let o = vidsum(&[&base[..], &["ingest", "--video", VIDEO, "--transcript", TRANSCRIPT]].concat(), d);
    assert!(o.status.success());
    for s in ["stage1", "stage2", "stage3", "score"] {
        let o = vidsum(&[&base[..], &[s]].concat(), d);
        assert!(o.status.success(), "{s}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["summary.txt", "scores.csv", "summary_tree.json"] {
        assert_eq!(
            std::fs::read(d.join("whole").join(f)).unwrap(),
            std::fs::read(d.join("steps").join(f)).unwrap(),
            "{f}"
        );
    }

    let o = vidsum(&[&base[..], &["eval"]].concat(), d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean_tau"), "{}", stdout(&o));
}

#[test]
fn out_of_order_stage_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = vidsum(&["--config", CONFIG, "stage2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage2"));
}

#[test]
fn ablation_flags_and_env_overrides_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = vidsum(
        &["--config", CONFIG, "--run-dir", "no2", "--skip-stage2", "run", "--video", VIDEO],
        d,
    );
    assert!(o.status.success());
    let labels = std::fs::read_to_string(d.join("no2/stage2.json")).unwrap();
    assert!(labels.contains("segment-0"));

    let o = Command::new(env!("CARGO_BIN_EXE_vidsum"))
        .args(["--config", CONFIG, "--run-dir", "env", "ingest", "--video", VIDEO])
        .env("VIDSUM_SEMANTICS_TAU", "0.5")
        .current_dir(d)
        .output()
        .unwrap();
    assert!(o.status.success());
    let run = std::fs::read_to_string(d.join("env/run.json")).unwrap();
    assert!(run.contains("\"tau\": 0.5"), "{run}");
}

#[test]
fn ablate_writes_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let o = vidsum(
        &["--config", CONFIG, "--run-dir", "abl", "ablate", "--video", VIDEO, "--transcript", TRANSCRIPT, "stage2:0.5,0.9", "no-stage1"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(d.join("abl/ablation_report.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(d.join("abl/no-stage1/summary.txt").is_file());
}

#[test]
fn ablate_without_settings_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let o = vidsum(&["--config", CONFIG, "ablate", "--video", VIDEO], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = vidsum(&["--config", CONFIG, "ablate", "--video", VIDEO, ","], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least one setting"));
}

#[test]
fn missing_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = vidsum(&["stage1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}
