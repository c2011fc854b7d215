use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cogvox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cogvox")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) {
    let spec = dir.join("spec.toml");
    fs::write(
        &spec,
        "train_counts = [6, 5, 3]\ndev_counts = [3, 2, 1]\nembedding_dim = 24\ninformative_dims = 9\nseed = 5\n",
    )
    .unwrap();
    let o = cogvox(&["synth", "--out", dir.join("c").to_str().unwrap(), "--spec", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn path(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_str().unwrap().to_string()
}

#[test]
fn validate_reports_findings_through_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    let ok = cogvox(&["validate", "--manifest", &path(d, "c/manifest.csv")]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));

    let reg = cogvox(&["validate", "--manifest", &path(d, "c/manifest.csv"), "--mode", "regression"]);
    let with_mmse = fs::read_to_string(d.join("c/manifest.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.contains(",CTD,") && !l.ends_with(','))
        .count();
    assert!(stdout(&reg).contains(&format!("retained: {with_mmse},")), "{}", stdout(&reg));

    let victim = fs::read_dir(d.join("c/transcripts")).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(&victim).unwrap();
    let bad = cogvox(&["validate", "--manifest", &path(d, "c/manifest.csv")]);
    assert_eq!(bad.status.code(), Some(1));
    let name = victim.file_name().unwrap().to_str().unwrap();
    assert!(stdout(&bad).contains(name), "{}", stdout(&bad));
}

#[test]
fn feature_tables_have_expected_shape_and_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    let full = cogvox(&["features", "--manifest", &path(d, "c/manifest.csv"), "--out", &path(d, "f.csv")]);
    assert!(full.status.success(), "{}", stderr(&full));
    let text = fs::read_to_string(d.join("f.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 43);
    assert_eq!(header[1], "CTD__duration");
    assert_eq!(header[42], "PF__adjunct_clause_ratio_comprehensive");
    assert_eq!(text.lines().count(), 1 + 20);

    let again = cogvox(&["features", "--manifest", &path(d, "c/manifest.csv"), "--out", &path(d, "g.csv")]);
    assert!(again.status.success());
    assert_eq!(fs::read(d.join("f.csv")).unwrap(), fs::read(d.join("g.csv")).unwrap());

    let ctd = cogvox(&["features", "--manifest", &path(d, "c/manifest.csv"), "--task", "CTD"]);
    let first = stdout(&ctd).lines().next().unwrap().to_string();
    assert_eq!(first.split(',').count(), 15);

    let emb = cogvox(&[
        "features",
        "--manifest",
        &path(d, "c/manifest.csv"),
        "--features",
        "embedding_ctd",
        "--config",
        &path(d, "emb.toml"),
    ]);
    // no such config file and not a submission name
    assert_eq!(emb.status.code(), Some(1));
}

#[test]
fn run_predict_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    let run = cogvox(&[
        "run",
        "--manifest",
        &path(d, "c/train.csv"),
        "--dev",
        &path(d, "c/dev.csv"),
        "--test",
        &path(d, "c/dev.csv"),
        "--config",
        "cls1",
        "--k",
        "3",
        "--out",
        &path(d, "run"),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    for f in ["model.cvxe", "predictions.csv", "report.json"] {
        assert!(d.join("run").join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"], "cls1");
    assert_eq!(report["k"], 3);

    let pred = cogvox(&[
        "predict",
        "--manifest",
        &path(d, "c/dev.csv"),
        "--model",
        &path(d, "run/model.cvxe"),
        "--out",
        &path(d, "p.csv"),
    ]);
    assert!(pred.status.success(), "{}", stderr(&pred));
    assert_eq!(fs::read(d.join("p.csv")).unwrap(), fs::read(d.join("run/predictions.csv")).unwrap());

    let eval = cogvox(&["evaluate", "--manifest", &path(d, "c/dev.csv"), "--predictions", &path(d, "p.csv")]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("macro_f1 "));
}

#[test]
fn cv_and_train_accept_model_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    fs::write(
        d.join("model.toml"),
        "vote = \"regressor_mean\"\n[[members]]\nkind = \"gradient_boosting\"\nn_estimators = 20\nlearning_rate = 0.1\nmax_depth = 2\nseed = 0\n",
    )
    .unwrap();
    let cv = cogvox(&[
        "cv",
        "--manifest",
        &path(d, "c/manifest.csv"),
        "--model-config",
        &path(d, "model.toml"),
        "--k",
        "2",
        "--no-grid",
    ]);
    assert!(cv.status.success(), "{}", stderr(&cv));
    let out = stdout(&cv);
    assert!(out.contains("fold 1: rmse"), "{out}");
    assert!(out.contains("mean: rmse"), "{out}");

    let train = cogvox(&[
        "train",
        "--manifest",
        &path(d, "c/manifest.csv"),
        "--model-config",
        "cls1",
        "--out",
        &path(d, "m.cvxe"),
    ]);
    assert!(train.status.success(), "{}", stderr(&train));
    assert!(fs::read(d.join("m.cvxe")).unwrap().starts_with(b"CVXE"));
}

#[test]
fn errors_are_json_lines_with_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.toml"), "k = 1\n").unwrap();
    let o = cogvox(&["train", "--config", &path(d, "bad.toml"), "--manifest", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let line: serde_json::Value = serde_json::from_str(stderr(&o).lines().last().unwrap()).unwrap();
    assert_eq!(line["level"], "error");
    assert_eq!(line["code"], "config");

    let missing = cogvox(&["train", "--manifest", &path(d, "nope.csv")]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn config_dump_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = cogvox(&["config", "--dump"]);
    assert!(dump.status.success());
    let p = tmp.path().join("ref.toml");
    fs::write(&p, dump.stdout.clone()).unwrap();
    let again = cogvox(&["config", "--config", p.to_str().unwrap()]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(again.stdout, dump.stdout);
}
