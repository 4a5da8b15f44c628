use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "dataset = synthetic\ndomains = 2\nper_domain = 80\nhidden = 8\nlatent_dim = 3\nepochs = 2\nrepeats = 1\n";

fn cace(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cace"))
        .args(args)
        .current_dir(dir)
        .env("CACE_THREADS", "1")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bench_writes_tables_and_per_run_metrics() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    let o = cace(&["bench", "--config", "small.cfg", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    assert!(table.starts_with("target_domain,method,mean_acc,std_acc,repeats\n"));
    assert!(table.contains("avg,erm,") && table.contains("avg,contrastive-ace,"));
    for t in 0..2 {
        for m in ["erm", "contrastive-ace"] {
            let metrics = fs::read_to_string(out.join(format!("runs/target{t}/{m}/repeat0/metrics.csv"))).unwrap();
            assert!(metrics.starts_with("epoch,loss,"));
            assert_eq!(metrics.lines().count(), 4);
        }
    }
    assert!(out.join("runs.csv").exists() && out.join("manifest.txt").exists());
}

#[test]
fn missing_config_is_a_reported_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cace(&["bench", "--config", "nope.cfg", "--out", "out"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error: kind=io"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cace(&["bench", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: kind=usage"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), format!("{SMALL}rho = 2\n")).unwrap();
    let o = cace(
        &["train", "--config", "small.cfg", "--rho", "0", "--set", "epochs=1", "--out", "run"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let saved = fs::read_to_string(dir.path().join("run/config.cfg")).unwrap();
    assert!(saved.lines().any(|l| l == "rho = 0"), "{saved}");
    assert!(saved.lines().any(|l| l == "epochs = 1"), "{saved}");
    let metrics = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    // rho = 0 leaves the contrastive column at zero
    for line in metrics.lines().skip(1) {
        assert_eq!(line.split(',').nth(3), Some("0"));
    }
}

#[test]
fn train_eval_attribute_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    let p = dir.path();
    assert!(cace(&["gen-data", "--config", "small.cfg", "--out", "data"], p).status.success());
    let o = cace(&["train", "--config", "small.cfg", "--target", "1", "--out", "run"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("best_epoch="));

    let o = cace(
        &["eval", "--model", "run/model.json", "--data", "data/dataset.csv", "--domain", "1"],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let line = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(line.starts_with("accuracy=") && line.trim_end().ends_with("samples=80"), "{line}");

    let o = cace(
        &["attribute", "--model", "run/model.json", "--data", "data/dataset.csv", "--out", "ace.csv"],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ace = fs::read_to_string(p.join("ace.csv")).unwrap();
    assert!(ace.starts_with("sample_id,class,c1,c2,c3\n"));
    assert_eq!(ace.lines().count(), 161);

    let o = cace(&["eval", "--model", "run/model.json", "--data", "data/dataset.csv", "--domain", "7"], p);
    assert!(stderr(&o).starts_with("error: kind="), "{}", stderr(&o));
}
