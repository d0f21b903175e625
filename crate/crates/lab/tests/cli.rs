use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn devae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devae")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

const TINY: &[&str] = &[
    "--factors",
    "posX:4,posY:4,scale:2",
    "--hidden",
    "16",
    "--iterations",
    "40",
    "--batch",
    "8",
    "--eval-every",
    "20",
    "--eval-points",
    "200",
    "--kl-warmup",
    "10",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let out = out.to_str().unwrap();
    let mut args = vec!["train", "--seed", "1", "--out", out];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    devae(&args)
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&train(&out, &["--betas", "40,1"])), 2);
    assert_eq!(code(&train(&out, &["--variant", "beta_vae"])), 2);
    assert_eq!(code(&train(&out, &["--lr", "fast"])), 2);
    // Seed and output directory are mandatory.
    assert_eq!(code(&devae(&["train", "--out", out.to_str().unwrap()])), 2);
    assert_eq!(code(&devae(&["train", "--seed", "1"])), 2);
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "seed = 1\nmystery = 2\n").unwrap();
    assert_eq!(code(&train(&out, &["--config", cfg.to_str().unwrap()])), 2);
    assert!(!out.join("checkpoint.bin").exists());
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.bin");
    let gen =
        devae(&["gen-data", "--factors", "posX:4,posY:4,scale:2", "--seed", "0", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&gen), 0, "{}", String::from_utf8_lossy(&gen.stderr));
    let good = train(&dir.path().join("ok"), &["--dataset", data.to_str().unwrap()]);
    assert_eq!(code(&good), 0, "{}", String::from_utf8_lossy(&good.stderr));

    let bytes = fs::read(&data).unwrap();
    fs::write(&data, &bytes[..bytes.len() / 2]).unwrap();
    assert_eq!(code(&train(&dir.path().join("bad"), &["--dataset", data.to_str().unwrap()])), 3);
    let missing = dir.path().join("absent.bin");
    assert_eq!(code(&train(&dir.path().join("bad"), &["--dataset", missing.to_str().unwrap()])), 3);
    let eval = devae(&["eval", "--checkpoint", missing.to_str().unwrap(), "--seed", "0", "--out", "x.json"]);
    assert_eq!(code(&eval), 3);
}

#[test]
fn divergence_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = train(&out, &["--lr", "1e9"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("abort.txt").exists());
}

#[test]
fn train_eval_traverse_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = train(&out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "metrics.csv", "report.json", "config.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let ck = out.join("checkpoint.bin");
    let ck = ck.to_str().unwrap();

    let report = dir.path().join("eval/report.json");
    let o = devae(&["eval", "--checkpoint", ck, "--seed", "2", "--out", report.to_str().unwrap(), "--votes", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["spaces"].as_array().unwrap().len(), 2);
    assert!(doc["config"].as_str().unwrap().contains("seed = 1"));

    let grid = dir.path().join("trav.pgm");
    let o = devae(&["traverse", "--checkpoint", ck, "--seed", "0", "--out", grid.to_str().unwrap(), "--steps", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pgm = fs::read(&grid).unwrap();
    assert!(pgm.starts_with(b"P5\n# variant = devae\n"));

    let samples = dir.path().join("s.pgm");
    let o = devae(&["sample", "--checkpoint", ck, "--seed", "0", "--out", samples.to_str().unwrap(), "-n", "0"]);
    assert_eq!(code(&o), 0);
    assert!(!samples.exists());
    let o = devae(&["sample", "--checkpoint", ck, "--seed", "0", "--out", samples.to_str().unwrap(), "-n", "4"]);
    assert_eq!(code(&o), 0);
    let first = fs::read(&samples).unwrap();
    devae(&["sample", "--checkpoint", ck, "--seed", "0", "--out", samples.to_str().unwrap(), "-n", "4"]);
    assert_eq!(fs::read(&samples).unwrap(), first);
}

#[test]
fn stop_and_resume_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&train(&out, &["--stop-after", "20"])), 0);
    assert!(!out.join("report.json").exists());
    assert_eq!(code(&train(&out, &["--resume"])), 0);
    assert!(out.join("report.json").exists());
    let rows = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 41);
}
