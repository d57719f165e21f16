use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qlstm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlstm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = qlstm(args);
    assert!(
        out.status.success(),
        "qlstm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const QUICK: [&str; 6] = ["--epochs", "20", "--hidden", "4", "--seed", "7"];

fn synth(dir: &Path) -> String {
    let data = path(dir, "s.csv");
    ok(&["synth", "--out", &data, "--length", "400", "--seed", "1", "--inject", "3"]);
    data
}

fn with_quick<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(QUICK).collect()
}

#[test]
fn train_writes_one_model_per_quantile() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = path(dir.path(), "m");
    ok(&with_quick(&["train", "--data", &data, "--q-low", "0.1", "--q-high", "0.9", "--out-dir", &out, "--trace"]));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["model-q0.1.qlstm", "model-q0.9.qlstm", "trace-q0.1.csv", "trace-q0.9.csv", "train.json"]
    );
    let trace = fs::read_to_string(Path::new(&out).join("trace-q0.9.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "epoch,forget,input,candidate,output,alpha,loss");
    assert_eq!(rows.len(), 21);
}

#[test]
fn missing_data_is_a_usage_error() {
    let out = qlstm(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--data") && err.contains("Usage: qlstm train"), "{err}");
}

#[test]
fn bad_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    for extra in [["--windows", "4"], ["--q-low", "0.7"], ["--detector", "nope"], ["--epochs", "0"]] {
        let mut args = vec!["train", "--data", &data];
        args.extend(extra);
        assert_eq!(qlstm(&args).status.code(), Some(2), "{extra:?}");
    }
    assert_eq!(qlstm(&["train", "--data", "/no/such.csv"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = qlstm(&[
        "train", "--data", &data, "--lr", "1e12", "--clip-norm", "none", "--activation", "tanh", "--epochs", "40",
        "--out-dir", &path(dir.path(), "x"),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_or_foreign_models_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let models = path(dir.path(), "m");
    ok(&with_quick(&["train", "--data", &data, "--out-dir", &models]));
    let file = Path::new(&models).join("model-q0.1.qlstm");
    let original = fs::read_to_string(&file).unwrap();

    fs::write(&file, original.replace("version = 1", "version = 99")).unwrap();
    let out = qlstm(&["detect", "--models", &models, "--data", &data, "--out-dir", &path(dir.path(), "d")]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version mismatch"));

    fs::write(&file, &original[..original.len() / 2]).unwrap();
    let out = qlstm(&["detect", "--models", &models, "--data", &data, "--out-dir", &path(dir.path(), "d")]);
    assert_eq!(out.status.code(), Some(4));

    fs::remove_file(&file).unwrap();
    let out = qlstm(&["detect", "--models", &models, "--data", &data, "--out-dir", &path(dir.path(), "d")]);
    assert_eq!(out.status.code(), Some(4));

    let out = qlstm(&["detect", "--models", &path(dir.path(), "none"), "--data", &data]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn constant_series_detects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "flat.csv");
    let mut csv = String::from("timestamp,value\n");
    for i in 0..150 {
        csv.push_str(&format!("{i},3.5\n"));
    }
    fs::write(&data, csv).unwrap();
    for detector in ["quantile", "iqr", "median"] {
        let models = path(dir.path(), &format!("m-{detector}"));
        let det = path(dir.path(), &format!("d-{detector}"));
        ok(&with_quick(&["train", "--data", &data, "--detector", detector, "--out-dir", &models]));
        ok(&["detect", "--models", &models, "--data", &data, "--out-dir", &det]);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(Path::new(&det).join("detect.json")).unwrap()).unwrap();
        assert_eq!(summary["flagged"], 0, "{detector}");
    }
}

#[test]
fn median_detection_writes_threshold_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let models = path(dir.path(), "m");
    let det = path(dir.path(), "d");
    ok(&with_quick(&["train", "--data", &data, "--detector", "median", "--out-dir", &models]));
    ok(&["detect", "--models", &models, "--data", &data, "--out-dir", &det, "--svg"]);
    let sidecar = fs::read_to_string(Path::new(&det).join("thresholds.csv")).unwrap();
    let header = sidecar.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "block,mu,sigma,upper,lower");
    let svg = fs::read_to_string(Path::new(&det).join("bands.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.contains("command = detect"));
    let verdicts = fs::read_to_string(Path::new(&det).join("verdicts.csv")).unwrap();
    assert!(verdicts.starts_with("#@ command = detect\n"));
}

#[test]
fn eval_of_perfect_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "l.csv");
    let verdicts = path(dir.path(), "v.csv");
    let mut d = String::from("timestamp,value,is_anomaly\n");
    let mut v = String::from("index,observed,low,high,median,score,is_anomaly,rule\n");
    for i in 0..30 {
        let a = u8::from(i == 12 || i == 25);
        d.push_str(&format!("{i},{i}.0,{a}\n"));
        v.push_str(&format!("{i},{i}.0,,,,0.0,{a},x\n"));
    }
    fs::write(&data, d).unwrap();
    fs::write(&verdicts, v).unwrap();
    let out = path(dir.path(), "e");
    ok(&["eval", "--data", &data, "--verdicts", &verdicts, "--out-dir", &out]);
    let csv = fs::read_to_string(Path::new(&out).join("eval.csv")).unwrap();
    let row = csv.lines().last().unwrap();
    assert!(row.ends_with(",1.0,1.0"), "{row}");
}

#[test]
fn sweep_rows_follow_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = path(dir.path(), "s");
    let stdout = ok(&with_quick(&[
        "sweep", "--data", &data, "--grid", "(99.25,0.75);(99.75,0.25);(99.9,0.1)", "--out-dir", &out, "--jobs", "2",
    ]));
    for head in ["99.25 and 0.75", "99.75 and 0.25", "99.9 and 0.1"] {
        assert!(stdout.contains(head), "{stdout}");
    }
    let csv = fs::read_to_string(Path::new(&out).join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert_eq!(qlstm(&["sweep", "--data", &data, "--grid", ""]).status.code(), Some(2));
}

#[test]
fn jobs_do_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let other = path(dir.path(), "t.csv");
    ok(&["synth", "--out", &other, "--length", "300", "--seed", "2", "--inject", "2", "--kind", "bimodal"]);
    let both = format!("{data},{other}");
    let a = path(dir.path(), "a");
    let b = path(dir.path(), "b");
    ok(&with_quick(&["ablate", "--data", &both, "--out-dir", &a, "--jobs", "1"]));
    ok(&with_quick(&["ablate", "--data", &both, "--out-dir", &b, "--jobs", "3"]));
    for f in ["ablation.csv", "ablation.json", "ablation.txt"] {
        assert_eq!(fs::read(Path::new(&a).join(f)).unwrap(), fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
    }
}

#[test]
fn probe_reports_both_normalizations() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let stdout = ok(&["probe", "--data", &data, "--reference", "AWS Dataset_2", "--out-dir", &path(dir.path(), "p")]);
    assert!(stdout.contains("point") && stdout.contains("anomaly") && stdout.contains("published"), "{stdout}");
    let unlabeled = path(dir.path(), "u.csv");
    ok(&["synth", "--out", &unlabeled, "--length", "200"]);
    assert_eq!(qlstm(&["probe", "--data", &unlabeled, "--label-col", "none"]).status.code(), Some(2));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = path(dir.path(), "run.conf");
    fs::write(&cfg, format!("# quick run\ndata = {data}\nepochs = 15\nhidden = 3\nseed = 1\n")).unwrap();
    let out = path(dir.path(), "m");
    ok(&["train", "--config", &cfg, "--seed", "5", "--out-dir", &out]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("train.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], "5");
    assert_eq!(summary["config"]["epochs"], "15");
    assert_eq!(summary["config"]["hidden"], "3");

    fs::write(&cfg, "bogus = 1\n").unwrap();
    assert_eq!(qlstm(&["train", "--config", &cfg]).status.code(), Some(2));
    let eval_artifact = Path::new(&out).join("train.json");
    assert_eq!(
        qlstm(&["eval", "--config", &eval_artifact.to_string_lossy()]).status.code(),
        Some(2),
        "artifacts of another command are rejected"
    );
}

#[test]
fn data_dir_variable_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let out: PathBuf = dir.path().join("p");
    let status = Command::new(env!("CARGO_BIN_EXE_qlstm"))
        .args(["probe", "--data", "s.csv", "--out-dir", &out.to_string_lossy()])
        .env("QLSTM_DATA_DIR", dir.path())
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let json = fs::read_to_string(out.join("probe.json")).unwrap();
    assert!(json.contains("\"data\": \"s.csv\""));
}
