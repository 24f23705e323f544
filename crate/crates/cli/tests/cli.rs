use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
model = "nsatp_cnn"
epochs = 1
batch_size = 16
adf_samples = 20

[cnn]
d_model = 4
n_kernels = 2
k = 2
mlp_hidden = 8
n_p = 6
n_f = 3

[sim]
n_stops = 16
days = 5
trips_per_day = 8
n_p = 6
n_f = 3
"#;

fn nsatp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsatp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn simulate_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("run");
    let o = nsatp(&["simulate", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ds = out.join("dataset.jsonl");
    assert!(ds.exists());

    let o = nsatp(&[
        "train",
        "--config",
        &cfg,
        "--dataset",
        s(&ds),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "nsatp-report/1");
    assert_eq!(report["model"], "nsatp_cnn");
    assert!(out.join("report.txt").exists());
    let ckpt = out.join("checkpoint.json");
    assert!(std::fs::read_to_string(&ckpt)
        .unwrap()
        .contains("nsatp-ckpt/1"));

    let o = nsatp(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&ds),
        "--adf-samples",
        "20",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(eval["metrics"], report["test"]);
    assert_eq!(eval["adf_ratio"], report["adf_ratio"]);

    let longer = dir.path().join("longer");
    let o = nsatp(&[
        "simulate",
        "--config",
        &cfg,
        "--n-f",
        "4",
        "--out",
        s(&longer),
    ]);
    assert_eq!(code(&o), 0);
    let o = nsatp(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&longer.join("dataset.jsonl")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon mismatch"));
}

#[test]
fn same_seed_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = nsatp(&["train", "--config", &cfg, "--seed", "3", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let ckpt = |p: &Path| std::fs::read(p.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b));
    let report = |p: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
        v["wall_time_s"] = 0.into();
        v
    };
    assert_eq!(report(&a), report(&b));
    assert_eq!(report(&a)["seed"], 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&nsatp(&["train", "--config", s(&missing)])), 4);
    let bad = write_config(dir.path(), "bad.toml", "bogus_key = 1\n");
    assert_eq!(code(&nsatp(&["train", "--config", &bad])), 2);
    let zero = write_config(dir.path(), "zero.toml", "batch_size = 0\n");
    assert_eq!(code(&nsatp(&["train", "--config", &zero])), 2);
    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "not json\n").unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    assert_eq!(
        code(&nsatp(&[
            "train",
            "--config",
            &cfg,
            "--dataset",
            s(&garbage)
        ])),
        4
    );
    let blowup = format!("{TINY}\n").replace(
        "model = \"nsatp_cnn\"",
        "model = \"arrivalnet_cnn\"\nstationarization = false\nlr = 1e150\nepochs = 3",
    );
    let blowup = blowup.replace("epochs = 1\n", "");
    let cfg = write_config(dir.path(), "blowup.toml", &blowup);
    let o = nsatp(&["train", "--config", &cfg, "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn adf_command() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("y.csv");
    let body: String = (0..120)
        .map(|i| format!("{}\n", ((i * 37 % 17) as f64 - 8.0) * 0.5))
        .collect();
    std::fs::write(&csv, format!("delay\n{body}")).unwrap();
    let o = nsatp(&["adf", "--input", s(&csv), "--regression", "c"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["regression_kind"], "constant");
    assert!(r["statistic"].as_f64().unwrap() < -3.0);
    std::fs::write(&csv, "1\n2\nthree\n").unwrap();
    assert_eq!(code(&nsatp(&["adf", "--input", s(&csv)])), 4);
    std::fs::write(&csv, "1\n2\n3\n").unwrap();
    assert_eq!(code(&nsatp(&["adf", "--input", s(&csv)])), 1);
}

#[test]
fn gradcheck_command() {
    let o = nsatp(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 30);
    assert!(!text.contains("FAIL"));
}

#[test]
fn ablate_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("abl");
    let o = nsatp(&["ablate", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    let table = std::fs::read_to_string(out.join("ablation.txt")).unwrap();
    assert!(table.contains("SS w/o IN"));
    let baseline = write_config(
        dir.path(),
        "p.toml",
        &TINY.replace("nsatp_cnn", "persistence"),
    );
    assert_eq!(
        code(&nsatp(&["ablate", "--config", &baseline, "--out", s(&out)])),
        2
    );
}
