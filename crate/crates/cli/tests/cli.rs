use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 9
out_dir = "from_config"

[synth]
n_subjects = 4
variants_per_subject = 2

[training]
stage1_iterations = 1
stage2_iterations = 1
batch_size = 8

[evaluation]
n_nonmated_per_image = 2
"#;

fn rfq(dir: &Path, args: &[&str], env_out: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rfq"));
    cmd.current_dir(dir).args(args).env_remove("RFQ_OUT");
    if let Some(v) = env_out {
        cmd.env("RFQ_OUT", v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synth_reports_counts_and_uses_config_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let o = rfq(dir.path(), &["--config", "run.toml", "synth"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("wrote 4 subjects, 12 images"), "{}", stdout(&o));
    assert!(dir.path().join("from_config/data/manifest.json").exists());
    assert!(dir.path().join("from_config/effective.toml").exists());
}

#[test]
fn out_flag_beats_environment_which_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();

    let o = rfq(dir.path(), &["--config", "run.toml", "synth"], Some("from_env"));
    assert!(o.status.success());
    assert!(dir.path().join("from_env/data/manifest.json").exists());
    assert!(!dir.path().join("from_config").exists());

    let o = rfq(dir.path(), &["--config", "run.toml", "--out", "from_flag", "synth"], Some("from_env"));
    assert!(o.status.success());
    assert!(dir.path().join("from_flag/data/manifest.json").exists());
}

#[test]
fn single_subject_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CONFIG.replace("n_subjects = 4", "n_subjects = 1");
    std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
    let o = rfq(dir.path(), &["--config", "run.toml", "synth"], None);
    assert!(o.status.success());
    assert!(stdout(&o).contains("warning: a single subject"));
}

#[test]
fn failures_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = rfq(dir.path(), &["--config", "missing.toml", "synth"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));

    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    let o = rfq(dir.path(), &["--config", "run.toml", "score"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));

    let o = rfq(dir.path(), &["erc", "--extra-scores", "nameonly"], None);
    assert!(!o.status.success());
}

#[test]
fn full_run_through_det() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
    for step in ["synth", "train", "score", "erc", "det"] {
        let o = rfq(dir.path(), &["--config", "run.toml", "--seed", "11", step], None);
        assert!(o.status.success(), "{step}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let out = dir.path().join("from_config");
    for f in ["scores/scores.csv", "erc/erc.csv", "erc/calibration.json", "det/det.csv", "det/eer.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let effective = std::fs::read_to_string(out.join("effective.toml")).unwrap();
    assert!(effective.contains("seed = 11"), "{effective}");
}
