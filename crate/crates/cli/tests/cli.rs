use std::path::Path;
use std::process::Command;

fn pd(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_pd")).args(args).output().expect("run pd");
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.status.success(), "pd {args:?} failed:\n{text}");
    text
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 12] = [
    "--toy",
    "--set",
    "model.hidden=16",
    "--set",
    "model.layers=1",
    "--set",
    "points.count=128",
    "--set",
    "metric.n_points=256",
    "--set",
    "metric.emd_points=32",
    "--set=train.epochs=1",
];

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let (corpus, data, run, out) = (
        tmp.path().join("corpus"),
        tmp.path().join("data"),
        tmp.path().join("run"),
        tmp.path().join("out"),
    );
    pd(&["synth-data", "--count", "12", "--seed", "1", "--out", s(&corpus)]);
    let text = pd(&[&["preprocess", "--corpus", s(&corpus), "--out", s(&data)][..], &SMALL].concat());
    assert!(text.contains("kept 12/12"), "{text}");

    pd(&[&["train", "--data", s(&data), "--run", s(&run)][..], &SMALL].concat());
    let ckpt = run.join("last.pdck");
    assert!(ckpt.exists() && run.join("loss.csv").exists() && run.join("config.txt").exists());

    let first_cloud = std::fs::read_dir(data.join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pts"))
        .min()
        .unwrap();
    pd(&["sample", "--checkpoint", s(&ckpt), "--input", s(&first_cloud), "--out", s(&out), "--k", "64"]);
    assert!(out.join("sample.obj").exists() && out.join("sample.report.txt").exists());

    let csv = out.join("eval.csv");
    pd(&["eval", "--data", s(&data), "--split", "test", "--oracle", "--out", s(&csv), "--toy"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("id,n_points,tau,cd_x1000") && text.contains("\nmean,"));

    let abl = out.join("ablate.csv");
    pd(&["ablate-k", "--data", s(&data), "--split", "test", "--ground-truth", "--ks", "1,64", "--out", s(&abl), "--toy"]);
    assert_eq!(std::fs::read_to_string(&abl).unwrap().lines().count(), 3);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_pd"))
        .args(["eval", "--data", "/nonexistent", "--out", "/tmp/x.csv", "--oracle"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_pd"))
        .args(["synth-data", "--out", "/tmp/pd-unused", "--families", "teapot"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("teapot"));
}
