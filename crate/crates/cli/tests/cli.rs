//! End-to-end runs of the `hsuga` binary on a small synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
# small synthetic run
[corpus]
synth_users = 200

[train]
epochs = 3

[eval]
seeds = 42
";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        let text = format!("{SMALL}\n[run]\nout_dir = {}\n", ws.runs().display());
        std::fs::write(ws.config(), text).unwrap();
        ws
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("small.conf")
    }

    fn runs(&self) -> PathBuf {
        self.dir.path().join("runs")
    }

    fn hsuga(&self, args: &[&str]) -> Output {
        let config = self.config();
        Command::new(env!("CARGO_BIN_EXE_hsuga"))
            .arg("--config")
            .arg(&config)
            .args(args)
            .env_remove("RUST_LOG")
            .output()
            .unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn digest_line(o: &Output) -> String {
    stdout(o).lines().find(|l| l.starts_with("digest ")).unwrap_or_default().to_string()
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn full_pipeline_smoke() {
    let ws = Workspace::new();
    let out = ws.hsuga(&["eval", "--auto"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    for group in ["overall", "tail_item", "head_item", "tail_user", "head_user"] {
        assert!(text.contains(group), "{text}");
    }
    let dirs = run_dirs(&ws.runs());
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].file_name().unwrap().to_string_lossy().ends_with("-seed42"));
    for f in ["corpus.tsv", "traces.tsv", "embeddings.txt", "neighbors.tsv", "checkpoint-42.txt", "report.tsv", "eval.done"] {
        assert!(dirs[0].join(f).exists(), "missing {f}");
    }
}

#[test]
fn missing_upstream_names_the_command() {
    let ws = Workspace::new();
    let out = ws.hsuga(&["train"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("run `group` first"), "{}", stderr(&out));

    let out = ws.hsuga(&["ingest"]);
    assert!(out.status.success());
    let out = ws.hsuga(&["embed"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("run `hsu` first"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_config_code() {
    let ws = Workspace::new();
    let bad = ws.dir.path().join("bad.conf");
    std::fs::write(&bad, "[gaa]\nno_such_key = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hsuga")).arg("--config").arg(&bad).arg("ingest").output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("no_such_key"), "{}", stderr(&out));

    for args in [
        &["--set", "gaa.alpha=abc", "ingest"][..],
        &["--set", "nosection", "ingest"][..],
        &["--ablation", "w/o-everything", "ingest"][..],
        &["--set", "gaa.percentile_tau=150", "ingest"][..],
    ] {
        let out = ws.hsuga(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn reruns_skip_and_force_reruns() {
    let ws = Workspace::new();
    let first = ws.hsuga(&["hsu", "--auto"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let again = ws.hsuga(&["hsu"]);
    assert!(stdout(&again).contains("hsu: up to date"), "{}", stdout(&again));
    assert_eq!(digest_line(&first), digest_line(&again));
    let forced = ws.hsuga(&["hsu", "--force"]);
    assert!(stdout(&forced).contains("hsu: done"));
    assert_eq!(digest_line(&first), digest_line(&forced));
}

#[test]
fn forcing_a_stage_invalidates_downstream() {
    let ws = Workspace::new();
    assert!(ws.hsuga(&["group", "--auto"]).status.success());
    assert!(ws.hsuga(&["embed", "--force"]).status.success());
    let dir = &run_dirs(&ws.runs())[0];
    assert!(dir.join("embed.done").exists());
    assert!(!dir.join("group.done").exists());
    let out = ws.hsuga(&["train"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn identical_config_gives_identical_digest() {
    let a = Workspace::new();
    let b = Workspace::new();
    let da = a.hsuga(&["eval", "--auto"]);
    let db = b.hsuga(&["eval", "--auto"]);
    assert!(da.status.success() && db.status.success());
    assert_eq!(digest_line(&da), digest_line(&db));
    let name = |w: &Workspace| run_dirs(&w.runs())[0].file_name().unwrap().to_owned();
    assert_eq!(name(&a), name(&b));
}

#[test]
fn seed_flag_and_overrides_change_run_dir() {
    let ws = Workspace::new();
    assert!(ws.hsuga(&["ingest", "--seed", "7"]).status.success());
    assert!(ws.hsuga(&["ingest", "--set", "gaa.alpha=0.5"]).status.success());
    let names: Vec<String> =
        run_dirs(&ws.runs()).iter().map(|d| d.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names.len(), 2);
    assert!(names.iter().any(|n| n.ends_with("-seed7")), "{names:?}");
}

#[test]
fn printed_config_round_trips() {
    let ws = Workspace::new();
    let out = ws.hsuga(&["ingest", "--print-config", "--ablation", "w/o-group-aware"]);
    assert!(out.status.success());
    let printed = stdout(&out);
    assert!(printed.contains("no_group_aware = true"), "{printed}");
    let copy = ws.dir.path().join("copy.conf");
    std::fs::write(&copy, &printed).unwrap();
    let again = Command::new(env!("CARGO_BIN_EXE_hsuga"))
        .arg("--config")
        .arg(&copy)
        .args(["ingest", "--print-config"])
        .output()
        .unwrap();
    assert_eq!(stdout(&again), printed);
}

#[test]
fn help_lists_every_ablation() {
    let out = Command::new(env!("CARGO_BIN_EXE_hsuga")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["w/o-add", "w/o-delete", "w/o-update", "w/o-retain", "w/o-interest-updater", "w/o-group-aware", "w/o-active-filter"] {
        assert!(text.contains(name), "{name} missing from help");
    }
    for cmd in ["ingest", "hsu", "embed", "group", "train", "eval", "sweep"] {
        assert!(text.contains(cmd));
    }
}

#[test]
fn sweep_emits_twelve_reports() {
    let ws = Workspace::new();
    let out = ws.hsuga(&["sweep", "--set", "train.epochs=1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("12 reports"), "{text}");
    for label in ["split=0.15 tau=25", "split=0.25 tau=75", "stage_len=13", "stage_len=7"] {
        assert!(text.contains(label), "{label} missing:\n{text}");
    }
    let summary = text.lines().last().unwrap().rsplit(' ').next().unwrap().to_string();
    let lines = std::fs::read_to_string(summary).unwrap();
    assert_eq!(lines.lines().filter(|l| l.contains("tail_user\tndcg@10")).count(), 12);
}
