use std::path::Path;
use std::process::{Command, Output};

use sdc::dataio::{read_depth_png, read_sparse, write_depth_png};
use sdc::scaffold::{scaffold, DenseDepthMap};
use serde_json::Value;

fn sdc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdc")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn synth(dir: &Path, name: &str, count: &str, workers: &str) {
    let o = sdc(&["synth", "--out-dir", name, "--count", count, "--seed", "11", "--workers", workers], dir);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn help_and_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&sdc(&["--help"], dir.path())), 0);
    assert_eq!(code(&sdc(&["train", "--help"], dir.path())), 0);
    assert_eq!(code(&sdc(&[], dir.path())), 1);
    assert_eq!(code(&sdc(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&sdc(&["eval-depth", "--pred", "a.png"], dir.path())), 1);
    assert_eq!(code(&sdc(&["synth", "--out-dir", "x", "--count", "0"], dir.path())), 1);
    assert_eq!(code(&sdc(&["scaffold", "--out-dir", "x"], dir.path())), 1);
    assert_eq!(code(&sdc(&["eval-pose", "--est", "a", "--gt", "b", "--delta", "0"], dir.path())), 1);
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = sdc(&["eval-depth", "--pred", "missing.png", "--gt", "missing.png"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.png"));
    std::fs::write(dir.path().join("bad.txt"), "0 1 2\n").unwrap();
    assert_eq!(code(&sdc(&["eval-pose", "--est", "bad.txt", "--gt", "bad.txt"], dir.path())), 2);
}

#[test]
fn scaffold_writes_depth_png() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "1", "1");
    let o = sdc(
        &[
            "scaffold",
            "--sparse",
            "d/00000_sparse.json",
            "--intrinsics",
            "d/intrinsics.json",
            "--out",
            "z.png",
            "--hull-mask",
            "h.png",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written = read_depth_png(dir.path().join("z.png")).unwrap();
    let sparse = read_sparse(dir.path().join("d/00000_sparse.json")).unwrap();
    let expected = scaffold(&sparse).unwrap();
    assert!(written.validity.iter().all(|&v| v));
    for (a, b) in written.depth.iter().zip(&expected.depth) {
        assert!((a - b).abs() <= 0.5 / 256.0 + 1e-12);
    }
    assert!(dir.path().join("h.png").is_file());
}

#[test]
fn scaffold_rejects_mismatched_intrinsics() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "1", "1");
    std::fs::write(dir.path().join("k.json"), r#"{"fx": 10, "fy": 10, "cx": 5, "cy": 5, "width": 32, "height": 32}"#)
        .unwrap();
    let o =
        sdc(&["scaffold", "--sparse", "d/00000_sparse.json", "--intrinsics", "k.json", "--out", "z.png"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn scaffold_manifest_mode_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "5", "1");
    for (w, out) in [("1", "a"), ("4", "b")] {
        let o = sdc(&["scaffold", "--manifest", "d/manifest.jsonl", "--out-dir", out, "--workers", w], dir.path());
        assert_eq!(code(&o), 0);
    }
    for i in 0..5 {
        let name = format!("{i:05}_scaffold.png");
        assert_eq!(read(dir.path().join("a").join(&name)), read(dir.path().join("b").join(&name)));
    }
}

#[test]
fn synth_is_reproducible_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a", "3", "1");
    synth(dir.path(), "b", "3", "3");
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3 * 5 + 2);
    for n in names {
        assert_eq!(read(dir.path().join("a").join(&n)), read(dir.path().join("b").join(&n)), "{n:?}");
    }
}

#[test]
fn eval_depth_on_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "1", "1");
    let o = sdc(&["eval-depth", "--pred", "d/00000_gt.png", "--gt", "d/00000_gt.png", "--json", "r.json"], dir.path());
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    for key in ["mae_mm", "rmse_mm", "imae_per_km", "irmse_per_km"] {
        assert_eq!(v[key], 0.0, "{key}");
    }
    let file: Value = serde_json::from_slice(&read(dir.path().join("r.json"))).unwrap();
    assert_eq!(file, v);
    assert!(String::from_utf8_lossy(&o.stderr).contains("MAE [mm]"));
}

#[test]
fn eval_depth_constant_offset_and_bins() {
    let dir = tempfile::tempdir().unwrap();
    let gt = DenseDepthMap::from_depth(4, 2, vec![1.0, 2.0, 3.0, 4.0, 1.5, 2.5, 3.5, 0.0]);
    let pred = DenseDepthMap::from_depth(4, 2, gt.depth.iter().map(|z| z + 0.25).collect());
    write_depth_png(dir.path().join("gt.png"), &gt).unwrap();
    write_depth_png(dir.path().join("pred.png"), &pred).unwrap();
    let o = sdc(&["eval-depth", "--pred", "pred.png", "--gt", "gt.png", "--bins", "0,2,5"], dir.path());
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["mae_mm"], 250.0);
    assert_eq!(v["rmse_mm"], 250.0);
    assert_eq!(v["count"], 7);
    assert_eq!(v["bins"][0]["count"], 2);
    assert_eq!(v["bins"][1]["count"], 5);
    let bad = sdc(&["eval-depth", "--pred", "pred.png", "--gt", "gt.png", "--bins", "5,2"], dir.path());
    assert_eq!(code(&bad), 1);
}

#[test]
fn eval_pose_on_identical_trajectories_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("# t tx ty tz r11 r12 r13 r21 r22 r23 r31 r32 r33\n");
    for i in 0..7 {
        let (s, c) = (0.1 * i as f64).sin_cos();
        text += &format!("{i} {} 0.5 {} {c} 0 {s} 0 1 0 {} 0 {c}\n", 0.3 * i as f64, 0.1 * i as f64, -s);
    }
    std::fs::write(dir.path().join("e.txt"), text).unwrap();
    let o = sdc(&["eval-pose", "--est", "e.txt", "--gt", "e.txt"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    for key in ["ate_m", "rpe_m", "rre_deg"] {
        assert_eq!(v[key], 0.0, "{key}");
    }
    assert!(v["ate5f_m"].as_f64().unwrap() < 1e-12);
    assert_eq!(v["frames"], 7);
}

#[test]
fn train_infer_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "4", "2");
    let train = |out: &str, workers: &str| {
        let o = sdc(
            &[
                "train",
                "--manifest",
                "d/manifest.jsonl",
                "--out",
                out,
                "--max-steps",
                "2",
                "--seed",
                "5",
                "--workers",
                workers,
                "--log",
                &format!("{out}.log"),
            ],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    train("a.ckpt", "1");
    train("b.ckpt", "3");
    assert_eq!(read(dir.path().join("a.ckpt")), read(dir.path().join("b.ckpt")));
    assert_eq!(read(dir.path().join("a.ckpt.log")), read(dir.path().join("b.ckpt.log")));
    let log = String::from_utf8(read(dir.path().join("a.ckpt.log"))).unwrap();
    assert_eq!(log.lines().count(), 2);

    let o = sdc(
        &[
            "infer",
            "--checkpoint",
            "a.ckpt",
            "--image",
            "d/00000_curr.png",
            "--sparse",
            "d/00000_sparse.json",
            "--out",
            "p.png",
            "--preview",
            "v.png",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pred = read_depth_png(dir.path().join("p.png")).unwrap();
    assert_eq!((pred.width, pred.height), (64, 64));
    assert!(pred.depth.iter().all(|&z| (0.09..=100.0).contains(&z)));

    let o = sdc(
        &[
            "plot",
            "--gt",
            "d/00000_gt.png",
            "--pred",
            "p.png",
            "d/00000_gt.png",
            "--label",
            "refined",
            "exact",
            "--out",
            "f.svg",
            "--json",
            "f.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let svg = String::from_utf8(read(dir.path().join("f.svg"))).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("refined"));
    let stats: Value = serde_json::from_slice(&read(dir.path().join("f.json"))).unwrap();
    assert_eq!(stats["series"].as_array().unwrap().len(), 2);
    assert_eq!(stats["series"][1]["bins"][2]["mean_abs_error"], 0.0);

    let bad =
        sdc(&["plot", "--gt", "d/00000_gt.png", "--pred", "p.png", "--label", "a", "b", "--out", "g.svg"], dir.path());
    assert_eq!(code(&bad), 1);
    let bad = sdc(
        &[
            "infer",
            "--checkpoint",
            "d/00000_gt.png",
            "--image",
            "d/00000_curr.png",
            "--sparse",
            "d/00000_sparse.json",
            "--out",
            "q.png",
        ],
        dir.path(),
    );
    assert_eq!(code(&bad), 2);
}

#[test]
fn train_config_file_and_presets() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "d", "2", "1");
    std::fs::write(dir.path().join("cfg.toml"), "preset = \"desk\"\nmax_steps = 1\n[weights]\nw_sm = 0.2\n").unwrap();
    let o = sdc(&["train", "--manifest", "d/manifest.jsonl", "--out", "m.ckpt", "--config", "cfg.toml"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(dir.path().join("bad.toml"), "learning_rat = 1.0\n").unwrap();
    let o = sdc(&["train", "--manifest", "d/manifest.jsonl", "--out", "m.ckpt", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&o), 1);
    let o = sdc(
        &[
            "train",
            "--manifest",
            "d/manifest.jsonl",
            "--out",
            "m.ckpt",
            "--preset",
            "void",
            "--max-steps",
            "1",
            "--weights",
            "nope.toml",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
}
