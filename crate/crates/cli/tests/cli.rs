use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn varpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varpool"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_MODEL: [&str; 6] = ["--encoder-dims", "", "--attn-hidden", "8", "--head-dims", "8"];

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["synth", "--out", p(dir)];
    args.extend_from_slice(extra);
    varpool(&args)
}

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--manifest", p(manifest), "--out", p(out)];
    args.extend_from_slice(&SMALL_MODEL);
    args.extend_from_slice(extra);
    varpool(&args)
}

#[test]
fn synth_writes_one_bag_per_patient_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = synth(dir.path(), &["--patients", "100", "--dim", "16", "--beta", "2", "--seed", "7"]);
    assert!(o.status.success());
    assert_eq!(fs::read_dir(dir.path().join("bags")).unwrap().count(), 100);
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 101);
    assert!(stdout(&o).contains("oracle c-index"));
}

#[test]
fn no_signal_oracle_is_near_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let o = synth(dir.path(), &["--patients", "500", "--beta", "0", "--seed", "1"]);
    assert!(o.status.success());
    let line = stdout(&o).lines().find(|l| l.starts_with("oracle c-index")).unwrap().to_string();
    let c: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!((0.45..=0.55).contains(&c), "{line}");
}

#[test]
fn synth_reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let flags = ["--patients", "30", "--dim", "6", "--seed", "4"];
    assert!(synth(a.path(), &flags).status.success());
    assert!(synth(b.path(), &flags).status.success());
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "manifest.csv"), read(b.path(), "manifest.csv"));
    for entry in fs::read_dir(a.path().join("bags")).unwrap() {
        let name = entry.unwrap().file_name();
        let rel = Path::new("bags").join(&name);
        assert_eq!(read(a.path(), rel.to_str().unwrap()), read(b.path(), rel.to_str().unwrap()));
    }
}

#[test]
fn single_fold_single_epoch_gives_one_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(&dir.path().join("data"), &["--patients", "40", "--dim", "6"]).status.success());
    let out = dir.path().join("run");
    let o = train(&dir.path().join("data/manifest.csv"), &out, &["--folds", "1", "--epochs", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "fold,train_cindex,test_cindex");
    assert_eq!(lines.len(), 2);
    assert!(out.join("fold0.vpc").exists());
    assert!(stdout(&o).contains("test c-index x100"));
}

#[test]
fn cox_training_runs_and_reloads_through_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &["--patients", "40", "--dim", "6"]).status.success());
    let out = dir.path().join("run");
    let o = train(&data.join("manifest.csv"), &out, &["--folds", "2", "--epochs", "2", "--loss", "cox"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("config.txt")).unwrap().contains("loss=cox"));
    let risks = dir.path().join("risks.csv");
    let o = varpool(&[
        "eval",
        "--manifest",
        p(&data.join("manifest.csv")),
        "--checkpoint",
        p(&out.join("fold1.vpc")),
        "--out",
        p(&risks),
    ]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&risks).unwrap().lines().count(), 41);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &["--patients", "30", "--dim", "4"]).status.success());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "loss=cox\nepochs=1\nn_projections=3\n").unwrap();
    let out = dir.path().join("run");
    let o = train(
        &data.join("manifest.csv"),
        &out,
        &["--config", p(&cfg), "--folds", "1", "--k-projections", "5"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(saved.contains("loss=cox"));
    assert!(saved.contains("epochs=1"));
    assert!(saved.contains("n_projections=5"));

    fs::write(&cfg, "no_such_key=1\n").unwrap();
    let o = train(&data.join("manifest.csv"), &out, &["--config", p(&cfg), "--folds", "1"]);
    assert!(!o.status.success());
}

#[test]
fn deep_sets_interpretation_flags_attention_ranking_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &["--patients", "30", "--dim", "5"]).status.success());
    let out = dir.path().join("run");
    let o = train(
        &data.join("manifest.csv"),
        &out,
        &["--folds", "1", "--epochs", "1", "--model", "deep_sets", "--k-projections", "2"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = dir.path().join("report");
    let o = varpool(&[
        "interpret",
        "--manifest",
        p(&data.join("manifest.csv")),
        "--checkpoint",
        p(&out.join("fold0.vpc")),
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("attention ranking: unavailable"));
    assert!(report.join("summary.csv").exists());
    assert!(report.join("P0000_proj1.csv").exists());
}

#[test]
fn eval_with_mismatched_dimension_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &["--patients", "20", "--dim", "6"]).status.success());
    let out = dir.path().join("run");
    assert!(train(&data.join("manifest.csv"), &out, &["--folds", "1", "--epochs", "1"]).status.success());
    let o = varpool(&[
        "eval",
        "--synth",
        "--patients",
        "20",
        "--dim",
        "4",
        "--checkpoint",
        p(&out.join("fold0.vpc")),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension mismatch"));
}

#[test]
fn missing_inputs_fail_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = varpool(&["eval", "--manifest", p(&dir.path().join("none.csv")), "--checkpoint", "x.vpc"]);
    assert!(!o.status.success());
    // exactly one data source
    let o = varpool(&["train", "--synth", "--manifest", "m.csv", "--out", p(dir.path())]);
    assert!(!o.status.success());
}

#[test]
fn gradcheck_passes_and_prints_errors() {
    let o = varpool(&["gradcheck"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.contains("max rel error")).count(), 14);
    assert!(text.contains("14 of 14 configurations"));
}

#[test]
fn help_lists_defaults_for_every_subcommand() {
    for sub in ["synth", "train", "eval", "interpret", "gradcheck"] {
        let o = varpool(&[sub, "--help"]);
        assert!(o.status.success());
        assert!(stdout(&o).contains("[default:"), "{sub}");
    }
    let text = stdout(&varpool(&["train", "--help"]));
    for flag in [
        "--lr <LR>",
        "[default: 0.0002]",
        "--weight-decay",
        "--batch-size",
        "--k-projections",
        "--eta-eps",
        "[default: 30]",
        "[default: attn_mean]",
    ] {
        assert!(text.contains(flag), "missing {flag}");
    }
}
