mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use deepsee_core::ImageTensor;
use serde_json::Value;

use common::{checkpoint_dir, config, face, lr_face};

fn deepsee(args: &[&str], env_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_deepsee"));
    cmd.args(args).env_remove("DEEPSEE_CHECKPOINTS").env_remove("DEEPSEE_ASSETS");
    if let Some(d) = env_dir {
        cmd.env("DEEPSEE_CHECKPOINTS", d);
    }
    cmd.output().unwrap()
}

fn stdout_lines(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}")))
        .collect()
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {text}"));
    serde_json::from_str(line).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_lr(dir: &Path, name: &str, seed: u64, lr: usize, scale: usize) -> PathBuf {
    let path = dir.join(name);
    lr_face(seed, lr, scale).save_png(&path).unwrap();
    path
}

#[test]
fn infer_sample_fans_out_k_variants_per_input() {
    let ck = tempfile::tempdir().unwrap();
    checkpoint_dir(ck.path());
    let work = tempfile::tempdir().unwrap();
    let a = write_lr(work.path(), "a.png", 1, 8, 8);
    let b = write_lr(work.path(), "b.png", 2, 8, 8);
    let out = work.path().join("out");
    let o = deepsee(
        &["infer", "--scale", "8", "--style", "sample:4", "--out", p(&out), "--save-mask", p(&a), p(&b)],
        Some(ck.path()),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = stdout_lines(&o);
    assert_eq!(lines.len(), 2);
    for line in &lines {
        let outputs = line["outputs"].as_array().unwrap();
        assert_eq!(outputs.len(), 4);
        let imgs: Vec<Vec<u8>> = outputs.iter().map(|f| std::fs::read(f.as_str().unwrap()).unwrap()).collect();
        let img = ImageTensor::decode(&imgs[0]).unwrap();
        assert_eq!((img.height(), img.width()), (64, 64));
        assert!(imgs.windows(2).all(|w| w[0] != w[1]), "sampled styles must differ");
        assert!(Path::new(line["mask"].as_str().unwrap()).is_file());
    }
}

#[test]
fn infer_is_deterministic_and_checks_scale() {
    let ck = tempfile::tempdir().unwrap();
    checkpoint_dir(ck.path());
    let work = tempfile::tempdir().unwrap();
    let a = write_lr(work.path(), "a.png", 3, 8, 4);
    let run = |out: &str, seed: &str| {
        let out = work.path().join(out);
        let o = deepsee(
            &["infer", "--checkpoint", "independent-x4", "--style", "sample:1", "--seed", seed, "--out", p(&out), p(&a)],
            Some(ck.path()),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("a_s0.png")).unwrap()
    };
    assert_eq!(run("o1", "5"), run("o2", "5"));
    assert_ne!(run("o1", "5"), run("o3", "6"));

    let o = deepsee(&["infer", "--checkpoint", "independent-x4", "--scale", "8", p(&a)], Some(ck.path()));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"]["kind"], "invalid");
}

#[test]
fn infer_with_guide_and_uploaded_mask() {
    let ck = tempfile::tempdir().unwrap();
    checkpoint_dir(ck.path());
    let work = tempfile::tempdir().unwrap();
    let a = write_lr(work.path(), "a.png", 4, 8, 4);
    let (g, gm) = face(5, 32);
    let guide = work.path().join("guide.png");
    let guide_mask = work.path().join("guide_mask.png");
    g.save_png(&guide).unwrap();
    gm.save_png(&guide_mask).unwrap();
    let (_, m) = face(4, 32);
    let mask = work.path().join("mask.png");
    m.save_png(&mask).unwrap();
    let out = work.path().join("out");
    let style = format!("guide:{}", guide.display());
    for ck_id in ["guided-x4", "independent-x4"] {
        let o = deepsee(
            &[
                "infer", "--checkpoint", ck_id, "--style", &style, "--guide-mask", p(&guide_mask),
                "--mask", p(&mask), "--out", p(&out), p(&a),
            ],
            Some(ck.path()),
        );
        assert!(o.status.success(), "{ck_id}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(stdout_lines(&o)[0]["outputs"].as_array().unwrap().len(), 1);
    }
    let o = deepsee(&["infer", "--checkpoint", "guided-x4", "--out", p(&out), p(&a)], Some(ck.path()));
    assert_eq!(o.status.code(), Some(2), "guided checkpoints need a guide");
}

#[test]
fn evaluate_without_checkpoint_exits_2() {
    let o = deepsee(&["evaluate", "--dataset", "manifest.jsonl"], None);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_error(&o);
    assert_eq!(e["error"]["kind"], "invalid");
    assert!(e["error"]["message"].as_str().unwrap().contains("checkpoint"));

    let o = deepsee(&["evaluate", "--checkpoint", "/nonexistent/model.safetensors", "--dataset", "m.jsonl"], None);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"]["kind"], "not_found");
}

#[test]
fn argument_errors_are_machine_readable() {
    for args in [&["frobnicate"][..], &["infer"], &["infer", "--style", "sample:0", "x.png"], &["train", "--dataset"]] {
        let o = deepsee(args, None);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_error(&o)["error"]["kind"], "invalid", "{args:?}");
    }
    let o = deepsee(&["--help"], None);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("prepare-data"));
}

#[test]
fn prepare_train_evaluate_pipeline() {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    let o = deepsee(
        &["prepare-data", "--source", "synthetic", "--out", p(&data), "--n-images", "20", "--size", "32", "--per-identity", "2"],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = &stdout_lines(&o)[0];
    assert_eq!(summary["records"], 20);
    assert_eq!(summary["test"], 2);
    assert_eq!(summary["with_labels"], 20);
    let manifest = data.join("manifest.jsonl");
    assert!(manifest.is_file());

    let cfg_path = work.path().join("config.toml");
    let mut cfg = config(4, "independent", 3);
    cfg.train.batch_size = 2;
    cfg.train.log_every = 1;
    cfg.save(&cfg_path).unwrap();

    let run_dir = work.path().join("run");
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--config", p(&cfg_path), "--dataset", p(&manifest), "--out", p(&run_dir), "--perceptual", "stand-in:16"];
        args.extend_from_slice(extra);
        deepsee(&args, None)
    };
    let o = train(&["--max-steps", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_lines(&o)[0]["steps"], 2);
    let log = std::fs::read_to_string(run_dir.join("train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let latest = run_dir.join("latest.safetensors");
    let o = train(&["--max-steps", "3", "--resume", p(&latest)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = &stdout_lines(&o)[0];
    assert_eq!((line["steps"].as_u64(), line["steps_run"].as_u64()), (Some(3), Some(1)));
    assert_eq!(std::fs::read_to_string(run_dir.join("train.jsonl")).unwrap().lines().count(), 3);

    let seg_dir = work.path().join("seg");
    let o = deepsee(
        &["train-seg", "--config", p(&cfg_path), "--dataset", p(&manifest), "--out", p(&seg_dir), "--max-steps", "2"],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = &stdout_lines(&o)[0];
    assert!(line["held_out"]["accuracy"].as_f64().is_some(), "{line}");

    let report_dir = work.path().join("report");
    let o = deepsee(
        &[
            "evaluate", "--checkpoint", p(&run_dir.join("model.safetensors")), "--dataset", p(&manifest),
            "--seg-checkpoint", p(&seg_dir.join("model.safetensors")), "--metric-nets", "stand-in:16",
            "--out", p(&report_dir), "--k-styles", "2", "--diversity-images", "2",
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["version"], 1);
    assert_eq!(report["mask_source"], "predicted");
    assert!(report["diversity"]["mean_pairwise_lpips"].as_f64().unwrap() > 0.0);
    let csv = std::fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("id,method,psnr,ssim,lpips,fid"));
}

#[test]
fn pretrained_networks_missing_is_reported_with_a_hint() {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    assert!(deepsee(&["prepare-data", "--source", "synthetic", "--out", p(&data), "--n-images", "4", "--size", "32"], None)
        .status
        .success());
    let cfg_path = work.path().join("config.toml");
    config(4, "independent", 3).save(&cfg_path).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_deepsee"))
        .args(["train", "--config", p(&cfg_path), "--dataset", p(&data.join("manifest.jsonl")), "--out", p(&work.path().join("r"))])
        .env("DEEPSEE_ASSETS", work.path().join("no-assets"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_error(&o);
    assert_eq!(e["error"]["kind"], "missing_asset");
    assert!(e["error"]["hint"].as_str().unwrap().contains("assets fetch vgg19"));
}

#[test]
fn assets_list_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let o = deepsee(&["assets", "list", "--dir", p(dir.path())], None);
    assert!(o.status.success());
    let lines = stdout_lines(&o);
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l["present"] == false));

    std::fs::write(dir.path().join("vgg16-397923af.pth"), b"not the weights").unwrap();
    let o = deepsee(&["assets", "verify", "vgg16", "--dir", p(dir.path())], None);
    assert_eq!(o.status.code(), Some(1));
    let line = &stdout_lines(&o)[0];
    assert_eq!(line["present"], true);
    assert_eq!(line["verified"], false);
    assert_eq!(line["sha256"].as_str().unwrap().len(), 64);

    let o = deepsee(&["assets", "fetch", "nonsense", "--dir", p(dir.path())], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_on_port_zero_prints_the_bound_port() {
    let ck = tempfile::tempdir().unwrap();
    checkpoint_dir(ck.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_deepsee"))
        .args(["serve", "--port", "0", "--checkpoints", p(ck.path())])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let bound: Value = serde_json::from_str(&first).unwrap();
    let port = bound["port"].as_u64().unwrap();
    assert!(port > 0);

    let mut stream = TcpStream::connect(("127.0.0.1", port as u16)).unwrap();
    write!(stream, "GET /checkpoints HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("independent-x8"));
}
