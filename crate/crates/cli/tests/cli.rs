use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llvd_core::data::{save_sequence, FrameFormat, Layout};
use llvd_core::{Tensor, VideoSequence};

fn llvd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llvd")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn write_clip(dir: &Path, frames: usize, h: usize, w: usize) {
    let f = (0..frames)
        .map(|t| Tensor::from_fn(&[3, h, w], |i| ((i * 7 + t * 31) % 251) as f32 / 250.0))
        .collect();
    let seq = VideoSequence::new(f, Layout::Rgb).unwrap();
    save_sequence(&seq, dir, FrameFormat::Ppm8).unwrap();
}

fn sorted_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains a tiny model for a handful of steps and returns its checkpoint.
fn tiny_checkpoint(root: &Path) -> PathBuf {
    let clip = root.join("clip");
    write_clip(&clip, 4, 16, 16);
    let manifest = root.join("data.txt");
    fs::write(&manifest, "clip clip rgb 4\n").unwrap();
    let cfg = root.join("train.cfg");
    fs::write(
        &cfg,
        "stage_widths = 4,8,8\nshuffle_factor = 2\nbatch_size = 1\nsequence_length = 3\n\
         sigma_range = 25\nsteps = 3\ncrop_size = 16\ncheckpoint_every = 2\nlearning_rate = 0.001\n",
    )
    .unwrap();
    let ckpt = root.join("model.llvc");
    let out = llvd(&["train", "--config", s(&cfg), "--data", s(&manifest), "--out", s(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    ckpt
}

#[test]
fn noise_at_sigma_zero_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noisy) = (dir.path().join("clean"), dir.path().join("noisy"));
    write_clip(&clean, 3, 8, 10);
    let out = llvd(&["noise", "--sigma", "0", "--seed", "1", "--in", s(&clean), "--out", s(&noisy)]);
    assert!(out.status.success());
    let (a, b) = (sorted_files(&clean), sorted_files(&noisy));
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

#[test]
fn noise_is_deterministic_in_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean");
    write_clip(&clean, 2, 8, 8);
    let run = |seed: &str, out: &str| {
        let o = dir.path().join(out);
        assert!(llvd(&["noise", "--sigma", "25", "--seed", seed, "--in", s(&clean), "--out", s(&o)]).status.success());
        sorted_files(&o).iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run("4", "a"), run("4", "b"));
    assert_ne!(run("4", "a"), run("5", "c"));
}

#[test]
fn denoise_split_with_state_matches_one_pass() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ckpt = tiny_checkpoint(root);
    let noisy = root.join("noisy");
    assert!(llvd(&["noise", "--sigma", "20", "--seed", "2", "--in", s(&root.join("clip")), "--out", s(&noisy), "--format", "llvt"])
        .status
        .success());
    let full = root.join("full");
    let out = llvd(&["denoise", "--model", s(&ckpt), "--in", s(&noisy), "--out", s(&full)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // the same stream in two calls, continuing through a state file
    let files = sorted_files(&noisy);
    let (first, second) = (root.join("part1"), root.join("part2"));
    for (d, range) in [(&first, 0..1), (&second, 1..files.len())] {
        fs::create_dir_all(d).unwrap();
        for f in &files[range] {
            fs::copy(f, d.join(f.file_name().unwrap())).unwrap();
        }
    }
    let state = root.join("stream.llvs");
    let split = root.join("split");
    for part in [&first, &second] {
        let out = llvd(&["denoise", "--model", s(&ckpt), "--in", s(part), "--out", s(&split), "--state", s(&state)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (sorted_files(&full), sorted_files(&split));
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn eval_writes_table_and_json_reports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ckpt = tiny_checkpoint(root);
    let noisy = root.join("noisy");
    assert!(llvd(&["noise", "--sigma", "20", "--seed", "3", "--in", s(&root.join("clip")), "--out", s(&noisy)]).status.success());
    let table = root.join("report.txt");
    let out = llvd(&["eval", "--model", s(&ckpt), "--noisy", s(&noisy), "--clean", s(&root.join("clip")), "--report", s(&table)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&table).unwrap();
    assert!(text.contains("psnr_db") && text.contains("mean"));

    let json = root.join("report.json");
    let out = llvd(&["eval", "--model", s(&ckpt), "--noisy", s(&noisy), "--clean", s(&root.join("clip")), "--report", s(&json), "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["sequences"][0]["frames"], 4);
    assert!(v["mean_psnr"].as_f64().unwrap() > 0.0);
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    assert!(ckpt.exists());
    let log = fs::read_to_string(dir.path().join("model.llvc.log")).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("1 "));
}

#[test]
fn flops_reports_table_and_json() {
    let out = llvd(&["flops", "--config", &config("llvd-l.cfg"), "--width", "854", "--height", "480"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("856x480") && text.contains("116.580 GFLOPs"), "{text}");

    let out = llvd(&["flops", "--config", &config("llvd-s.cfg"), "--width", "256", "--height", "256", "--convention", "mac", "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["convention"], "mac");
    assert_eq!(v["total_flops"], v["total_macs"]);
    assert!(v["entries"].as_array().unwrap().len() > 30);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    for args in [
        &["flops", "--config", "x", "--width", "4"][..],
        &["flops", "--config", "x", "--width", "4", "--height", "4", "--bogus"],
        &["nonsense"],
        &["flops", "--config", "x", "--width", "four", "--height", "4"],
        &["flops", "--config", "x", "--width", "4", "--height", "4", "--convention", "gflops"],
    ] {
        let out = llvd(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    }
    let out = llvd(&["denoise", "--model", "/nonexistent.llvc", "--in", "/nonexistent", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["noise", "train", "denoise", "eval", "flops", "selfcheck"] {
        let out = llvd(&[sub, "--help"]);
        assert!(out.status.success());
        assert!(String::from_utf8_lossy(&out.stdout).contains("--"));
    }
}
