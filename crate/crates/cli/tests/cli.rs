use std::path::Path;
use std::process::{Command, Output};

use mat_core::data::{load_png, save_png, synth};
use mat_core::{MatModel, ModelConfig, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run mat")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn line<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find(|l| l.trim_start().starts_with(&format!("{key} ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
}

fn tiny_checkpoint(dir: &Path) -> String {
    let path = dir.join("tiny.ckpt");
    MatModel::<f32>::new(ModelConfig::tiny(), 1).unwrap().save(&path, 0).unwrap();
    path.display().to_string()
}

#[test]
fn flag_overrides_file_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\npreset = \"tiny\"\n\n[train]\nlr0 = 1e-3\nbatch = 4\n").unwrap();
    let o = mat(&["train", "--config", cfg.to_str().unwrap(), "--lr", "5e-4", "--dry-run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lr = line(&text, "train.lr0");
    assert!(lr.contains("0.0005") && lr.ends_with("[flag]"), "{lr}");
    let batch = line(&text, "train.batch");
    assert!(batch.contains("= 4 ") && batch.ends_with("[file]"), "{batch}");
    let patch = line(&text, "train.patch");
    assert!(patch.contains("= 64 ") && patch.ends_with("[default]"), "{patch}");
    let channels = line(&text, "model.channels");
    assert!(channels.contains("= 24 "), "{channels}");
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 1e-3\n").unwrap();
    let o = mat(&["train", "--config", cfg.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(mat(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mat(&["cost", "--res", "12"]).status.code(), Some(1));
    assert_eq!(mat(&["cost", "--preset", "huge"]).status.code(), Some(1));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let o = mat(&["upscale", "--ckpt", "/nonexistent/x.ckpt", "--in", "/nonexistent/a.png"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn upscale_doubles_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let input = dir.path().join("small.png");
    let img = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 32, 32), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    save_png(&img, &input).unwrap();
    let o = mat(&["upscale", "--ckpt", &ckpt, "--in", input.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = load_png::<f32>(&dir.path().join("small_x2.png")).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 3, 64, 64));

    let tiled = dir.path().join("tiled.png");
    let o = mat(&[
        "upscale", "--ckpt", &ckpt, "--in", input.to_str().unwrap(), "--out", tiled.to_str().unwrap(), "--tile",
        "--tile-size", "16", "--overlap", "4",
    ]);
    assert!(o.status.success());
    assert_eq!(load_png::<f32>(&tiled).unwrap().shape(), Shape::new(1, 3, 64, 64));
}

#[test]
fn cost_table_for_light_x4() {
    let o = mat(&["cost", "--preset", "light", "--scale", "4", "--res", "1280x720"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let total = line(&text, "total");
    assert!(total.contains("707384") && total.contains("43841665440"), "{total}");
    assert!(text.contains("rmag.3.mab.1"));
}

#[test]
fn eval_lists_images_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let data = dir.path().join("hr");
    std::fs::create_dir(&data).unwrap();
    for name in ["b", "a", "c"] {
        save_png(&synth::image::<f32>(24, 24, name.len() as u64 + name.as_bytes()[0] as u64), &data.join(format!("{name}.png"))).unwrap();
    }
    let o = mat(&["eval", "--ckpt", &ckpt, "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let pos: Vec<usize> = ["a ", "b ", "c "]
        .iter()
        .map(|n| text.lines().position(|l| l.starts_with(n)).unwrap_or_else(|| panic!("{n} in\n{text}")))
        .collect();
    assert!(pos[0] < pos[1] && pos[1] < pos[2], "{text}");
    assert!(text.contains("bicubic baseline"));
}

#[test]
fn erf_writes_map_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(dir.path());
    let input = dir.path().join("probe.png");
    save_png(&synth::image::<f32>(20, 20, 4), &input).unwrap();
    let out = dir.path().join("erf.png");
    let o = mat(&["erf", "--ckpt", &ckpt, "--in", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(load_png::<f32>(&out).unwrap().shape(), Shape::new(1, 3, 20, 20));
    let summary = std::fs::read_to_string(out.with_extension("json")).unwrap();
    assert!(summary.contains("0.45"), "{summary}");
}

#[test]
fn bench_prints_one_row_per_dilation() {
    let o = mat(&["bench", "--attn", "sga", "--k", "3", "--dilation", "1,2", "--res", "16x16", "--reps", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = stdout(&o).lines().filter(|l| l.starts_with("sga")).count();
    assert_eq!(rows, 2);
    let o = mat(&["bench", "--attn", "sga", "--k", "7", "--dilation", "3", "--res", "16x16"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selftest_subset_passes() {
    let o = mat(&["selftest", "--only", "2,6"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
}
