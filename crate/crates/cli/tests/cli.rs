use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regionswap::edit::Editor;
use regionswap::imageio::{load_image_tensor, tensor_to_rgb};
use regionswap::mask::{RegionMask, Resolution};
use regionswap::synthetic;

const MICRO: &str = r#"
[network]
base_resolution = 16
reduction = 4
encoder_width = 4
channels_e = 16
channels_c = 2
dim_s = 8
generator_width = 8
generator_blocks = 2
disc_width = 4
disc_blocks = 2
cooccur_width = 4
patches_per_image = 2

[train]
steps = 3
batch_size = 2
k_interval = 2
r1_interval = 2
sample_every = 2
checkpoint_every = 0

[[data.roots]]
path = "data"
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_regionswap"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_dataset(&dir.path().join("data"), 1, 4, 16).unwrap();
        std::fs::write(dir.path().join("run.toml"), MICRO).unwrap();
        Self { dir }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let cfg = self.p("run.toml");
        let out = self.p(out);
        let mut args = vec!["train", "--config", s(&cfg), "--out", s(&out)];
        args.extend_from_slice(extra);
        run(&args)
    }

    fn trained(&self) -> PathBuf {
        let o = self.train("run", &["--seed", "3"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        self.p("run/checkpoint.safetensors")
    }
}

#[test]
fn train_writes_logs_samples_checkpoint_and_config() {
    let f = Fixture::new();
    f.trained();
    let log = std::fs::read_to_string(f.p("run/metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for l in log.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["rec"].is_number());
    }
    assert!(f.p("run/samples/step_0000000.png").exists());
    assert!(f.p("run/samples/step_0000002.png").exists());
    let archived = std::fs::read_to_string(f.p("run/config.toml")).unwrap();
    let cfg = regionswap::RunConfig::from_toml_str(&archived, "archived").unwrap();
    assert_eq!(cfg.train.steps, 3);
    assert_eq!(cfg.network.seed, 3);
}

#[test]
fn training_is_reproducible_under_seed() {
    let f = Fixture::new();
    assert!(f.train("a", &["--seed", "11"]).status.success());
    assert!(f.train("b", &["--seed", "11"]).status.success());
    let a = std::fs::read(f.p("a/metrics.jsonl")).unwrap();
    let b = std::fs::read(f.p("b/metrics.jsonl")).unwrap();
    assert_eq!(a, b);
    assert!(f.train("c", &["--seed", "12"]).status.success());
    assert_ne!(a, std::fs::read(f.p("c/metrics.jsonl")).unwrap());
}

#[test]
fn resume_continues_from_checkpoint() {
    let f = Fixture::new();
    f.trained();
    let o = f.train("run", &["--seed", "3", "--resume", "--set", "train.steps=5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(f.p("run/metrics.jsonl")).unwrap();
    let its: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["iteration"].as_f64().unwrap() as u64)
        .collect();
    assert_eq!(its, vec![0, 1, 2, 3, 4]);
}

#[test]
fn dry_run_validates_without_writing() {
    let f = Fixture::new();
    let o = f.train("dry", &["--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!f.p("dry").exists());
    let o = f.train("dry", &["--dry-run", "--set", "data.roots=[]"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!f.p("dry").exists());
}

#[test]
fn config_errors_exit_2_with_location() {
    let f = Fixture::new();
    std::fs::write(f.p("bad.toml"), "[train]\nsteps = 3\nbogus = 1\n").unwrap();
    let o = run(&["train", "--config", s(&f.p("bad.toml")), "--out", s(&f.p("x"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:3:"), "{err}");

    let o = f.train("x", &["--set", "train.stepz=4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.stepz"));

    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_identity_manifest() {
    let f = Fixture::new();
    let mut csv = String::from("output,content_ref,style_ref\n");
    for i in 0..4 {
        let name = format!("data/img_{i:05}.png");
        csv.push_str(&format!("{name},{name},{name}\n"));
    }
    std::fs::write(f.p("m.csv"), csv).unwrap();
    let o = run(&["evaluate", "--manifest", s(&f.p("m.csv")), "--out", s(&f.p("ev"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv_rows(&f.p("ev/metrics.csv"));
    assert_eq!(r.len(), 4);
    for row in r.drain(..) {
        assert_eq!(row["ssim"], "1");
        assert_eq!(row["rmse"], "0");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(f.p("ev/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["metrics"]["ssim"]["mean"], 1.0);
    let stdout: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, summary);
}

fn csv_rows(p: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

#[test]
fn evaluate_missing_manifest_file_is_config_error() {
    let f = Fixture::new();
    std::fs::write(f.p("m.csv"), "output,content_ref,style_ref\nnope.png,nope.png,nope.png\n").unwrap();
    let o = run(&["evaluate", "--manifest", s(&f.p("m.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn edit_with_empty_mask_is_the_reconstruction() {
    let f = Fixture::new();
    let ckpt = f.trained();
    RegionMask::filled(1, 16, 16, false, Resolution::Full).save_png(&f.p("zeros.png")).unwrap();
    let content = f.p("data/img_00000.png");
    let style = f.p("data/img_00001.png");
    let o = run(&[
        "edit", "--checkpoint", s(&ckpt), "--content", s(&content), "--style", s(&style),
        "--mask", s(&f.p("zeros.png")), "--out", s(&f.p("edit.png")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ed = Editor::from_checkpoint(&ckpt).unwrap();
    let rec = ed.reconstruct(&load_image_tensor(&content, 16).unwrap()).unwrap();
    let want = tensor_to_rgb(&rec, 0);
    let mut buf = Vec::new();
    want.write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png).unwrap();
    assert_eq!(std::fs::read(f.p("edit.png")).unwrap(), buf);
}

#[test]
fn edit_failures_map_to_exit_codes() {
    let f = Fixture::new();
    let content = f.p("data/img_00000.png");
    RegionMask::filled(1, 8, 8, true, Resolution::Full).save_png(&f.p("small.png")).unwrap();
    let args = |ck: &Path| {
        vec![
            "edit".to_string(), "--checkpoint".into(), s(ck).into(), "--content".into(), s(&content).into(),
            "--style".into(), s(&content).into(), "--mask".into(), s(&f.p("small.png")).into(),
            "--out".into(), s(&f.p("o.png")).into(),
        ]
    };
    let o = bin().args(args(&f.p("missing.safetensors"))).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(f.p("junk.safetensors"), b"junk").unwrap();
    let o = bin().args(args(&f.p("junk.safetensors"))).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let ckpt = f.trained();
    let o = bin().args(args(&ckpt)).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mask"));
    assert!(!f.p("o.png").exists());
}

#[test]
fn interpolate_emits_frames_with_swap_endpoints() {
    let f = Fixture::new();
    let ckpt = f.trained();
    let (a, b, fixed) = (f.p("data/img_00001.png"), f.p("data/img_00002.png"), f.p("data/img_00003.png"));
    let o = run(&[
        "interpolate", "--checkpoint", s(&ckpt), "--a", s(&a), "--b", s(&b), "--fixed", s(&fixed),
        "--frames", "5", "--t-kind", "style", "--out", s(&f.p("frames")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ed = Editor::from_checkpoint(&ckpt).unwrap();
    let load = |p: &Path| load_image_tensor(p, 16).unwrap();
    let frame = |i: usize| image::open(f.p(&format!("frames/frame_{i:03}.png"))).unwrap().to_rgb8();
    for i in 0..5 {
        assert!(f.p(&format!("frames/frame_{i:03}.png")).exists());
    }
    assert!(!f.p("frames/frame_005.png").exists());
    assert_eq!(frame(0), tensor_to_rgb(&ed.swap_styles(&load(&fixed), &load(&a)).unwrap(), 0));
    assert_eq!(frame(4), tensor_to_rgb(&ed.swap_styles(&load(&fixed), &load(&b)).unwrap(), 0));
}

#[test]
fn serve_dry_run_and_bad_checkpoint() {
    let f = Fixture::new();
    let o = run(&["serve", "--checkpoint", s(&f.p("none.safetensors"))]);
    assert_eq!(o.status.code(), Some(2));
    let ckpt = f.trained();
    let o = run(&["serve", "--checkpoint", s(&ckpt), "--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
}
