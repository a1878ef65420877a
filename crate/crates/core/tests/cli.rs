use std::path::Path;
use std::process::Command;

use midframe::checkpoint::save_model;
use midframe::data::{load_dataset, read_frame, write_frame, Frame};
use midframe::{ArchitectureSpec, Generator};

fn midframe(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_midframe"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_2() {
    let out = midframe(&["train", "--val", "v", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));
    assert_eq!(midframe(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = midframe(&["train", "--data", s(&empty), "--val", s(&empty), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let ck = tmp.path().join("missing.ckpt");
    let out = midframe(&["eval", "--checkpoint", s(&ck), "--data", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flops_reports_table_values() {
    let out = midframe(&["flops", "--arch", "ms", "--width", "640", "--height", "360"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("6.11G"), "{text}");
    assert!(text.contains("120585"), "{text}");
    let out = midframe(&["flops", "--arch", "ms-refine", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["total_params"], 161_068);
}

#[test]
fn gradcheck_passes_on_one_seed() {
    let out = midframe(&["gradcheck", "--seed", "3", "--seeds", "1", "--tolerance", "1e-4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 8);
}

#[test]
fn synth_train_eval_interpolate() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |x: &str| tmp.path().join(x);
    for (name, seed, count) in [("train", "0", "16"), ("val", "1", "4")] {
        let out = midframe(&[
            "synth", "--out", s(&p(name)), "--count", count, "--width", "32", "--height", "32", "--seed", seed,
        ]);
        assert!(out.status.success());
    }
    assert!(p("train/triplet_000003/flow.flo").exists());
    std::fs::write(p("cfg.toml"), "arch = \"ms\"\nwidth = 8\ncrop = 32\nmax_steps = 4\n").unwrap();
    let out = midframe(&[
        "train", "--config", s(&p("cfg.toml")), "--data", s(&p("train")), "--val", s(&p("val")), "--out",
        s(&p("run")), "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.ckpt", "state.ckpt", "history.jsonl", "losses.jsonl", "complexity.json", "complexity.txt"] {
        assert!(p("run").join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(p("run/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let out = midframe(&[
        "train", "--config", s(&p("cfg.toml")), "--data", s(&p("train")), "--val", s(&p("val")), "--out",
        s(&p("resumed")), "--seed", "3", "--resume", s(&p("run/state.ckpt")), "--set", "max_steps=6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(p("resumed/history.jsonl")).unwrap().lines().count(), 3);

    let out = midframe(&["eval", "--checkpoint", s(&p("run/model.ckpt")), "--data", s(&p("val")), "--report", s(&p("r.json"))]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("r.json")).unwrap()).unwrap();
    assert_eq!(report["entries"].as_array().unwrap().len(), 4);

    let val = load_dataset(p("val")).unwrap();
    let out = midframe(&[
        "interpolate", "--checkpoint", s(&p("run/model.ckpt")), "--a", s(&p("val/triplet_000000/a.png")), "--b",
        s(&p("val/triplet_000000/b.png")), "--out", s(&p("mid.png")), "--dump-flow", s(&p("flow")), "--dump-scales",
        s(&p("scales")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_frame(p("mid.png")).unwrap().dims(), val[0].dims());
    assert!(p("flow/features.png").exists() && p("flow/flow.flo").exists());
    assert!(p("scales/scale_x3.png").exists());

    // the trained model is narrower than the named preset
    let out = midframe(&[
        "interpolate", "--checkpoint", s(&p("run/model.ckpt")), "--a", s(&p("val/triplet_000000/a.png")), "--b",
        s(&p("val/triplet_000000/b.png")), "--out", s(&p("x.png")), "--arch", "ms-refine",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("refinement: expected true, found false"), "{err}");
    assert!(err.contains("width: expected 32, found 8"), "{err}");
}

#[test]
fn constant_pair_is_reproduced_at_any_size() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |x: &str| tmp.path().join(x);
    save_model(p("m.ckpt"), &Generator::new(ArchitectureSpec::ms(), 5).unwrap(), None).unwrap();
    let frame = Frame::from_rgb8(13, 21, &[40, 120, 200].repeat(13 * 21)).unwrap();
    write_frame(&frame, p("a.png")).unwrap();
    let out = midframe(&["interpolate", "--checkpoint", s(&p("m.ckpt")), "--a", s(&p("a.png")), "--b", s(&p("a.png")), "--out", s(&p("o.png"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_frame(p("o.png")).unwrap(), frame);
}

#[test]
fn extract_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let frames = tmp.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    for i in 0..7 {
        write_frame(&Frame::filled(8, 8, i as f64 / 8.0), frames.join(format!("{i:04}.png"))).unwrap();
    }
    let out_dir = tmp.path().join("out");
    let out = midframe(&["extract", "--input", s(&frames), "--out", s(&out_dir), "--stride", "2"]);
    assert!(out.status.success());
    assert_eq!(load_dataset(&out_dir).unwrap().len(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stride"], 2);
}
