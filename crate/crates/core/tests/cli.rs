use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quartercast"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn quartercast")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(
        &path,
        "n_drugs = 2\nn_quarters = 20\nepochs = 3\nbatch_size = 4\nconv = 3:8,5:8\nhidden = 8\n",
    )
    .unwrap();
    path
}

fn field(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(key)).then(|| it.next().unwrap().parse::<f64>().unwrap())
        })
        .unwrap_or_else(|| panic!("no {key} in {report}"))
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    ok(&["synth", "--config", p(&cfg), "--seed", "4", "--out", p(&a)]);
    ok(&["synth", "--config", p(&cfg), "--seed", "4", "--out", p(&b)]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("Drugname,Price,Date,Form,Company,Region,SalesVolume,Effectiveness,UserEvaluate"));
    assert_eq!(text.lines().count(), 1 + 2 * 20);
    let c = dir.path().join("c.csv");
    ok(&["synth", "--config", p(&cfg), "--seed", "5", "--out", p(&c)]);
    assert_ne!(text, std::fs::read_to_string(&c).unwrap());
}

#[test]
fn train_evaluate_predict_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("sales.csv");
    let model = dir.path().join("m.qcm");
    ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    for kind in ["cnn_lstm", "cnn", "lstm", "rnn"] {
        let stdout = ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&model), "--kind", kind]);
        assert!(stdout.contains(kind), "{stdout}");
        let history = std::fs::read_to_string(dir.path().join("m.qcm.history.csv")).unwrap();
        assert_eq!(history.lines().next(), Some("epoch,train_mse,val_mse"));
        assert_eq!(history.lines().count(), 4);
        assert!(dir.path().join("m.qcm.prep.json").exists());

        let report = ok(&["evaluate", "--data", p(&data), "--model", p(&model)]);
        let (mse, rmse) = (field(&report, "mse"), field(&report, "rmse"));
        assert!((rmse - mse.sqrt()).abs() <= 1e-12 * rmse.max(1.0), "{report}");
        // 20 quarters split 16/4, so two drugs give eight test targets.
        assert_eq!(field(&report, "n"), 8.0);

        let forecast = ok(&["predict", "--data", p(&data), "--model", p(&model)]);
        let lines: Vec<&str> = forecast.lines().collect();
        assert_eq!(lines[0], "drug,quarter,predicted");
        assert_eq!(lines.len(), 3);

        let curve = dir.path().join("curve.csv");
        ok(&["export-curve", "--data", p(&data), "--model", p(&model), "--out", p(&curve), "--drug", "Drug01"]);
        let rows = std::fs::read_to_string(&curve).unwrap();
        assert_eq!(rows.lines().next(), Some("quarter,actual,predicted"));
        assert_eq!(rows.lines().count(), 5);
    }
}

#[test]
fn training_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("sales.csv");
    ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    let mut outputs = Vec::new();
    for name in ["one.qcm", "two.qcm"] {
        let model = dir.path().join(name);
        ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&model), "--seed", "11"]);
        let report = ok(&["evaluate", "--data", p(&data), "--model", p(&model)]);
        let history = std::fs::read(dir.path().join(format!("{name}.history.csv"))).unwrap();
        outputs.push((std::fs::read(&model).unwrap(), history, report));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["frobnicate"][..],
        &["train"],
        &["evaluate", "--data", "x.csv"],
        &["train", "--data", "x.csv", "--out", "m", "--kind", "gru"],
        &["synth", "--seed", "minus-one"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn module_errors_exit_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = run(&["train", "--data", p(&missing), "--out", p(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("missing.csv"), "{err}");

    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "epochs = 3\nwindow = 4\n").unwrap();
    let out = run(&["synth", "--config", p(&bad_cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let garbage = dir.path().join("garbage.qcm");
    std::fs::write(&garbage, b"not a model").unwrap();
    let data = dir.path().join("d.csv");
    let cfg = write_config(dir.path());
    ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    let out = run(&["evaluate", "--data", p(&data), "--model", p(&garbage)]);
    assert_eq!(out.status.code(), Some(1));
}
