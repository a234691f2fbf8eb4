//! Runs the `tpa` binary end to end on a tiny procedural scene.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--train.rays_per_batch=64",
    "--render.samples=16",
    "--field.base_res=16",
    "--field.levels=4",
    "--field.hidden=8",
    "--dataset.rig.image_size=16",
    "--dataset.eval_views=3",
    "--train.val_every=0",
];

fn tpa(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpa"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "failed: {stderr}");
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fail_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(stderr.trim_end().lines().count(), 1, "diagnostic must be one line: {stderr}");
    stderr
}

fn train(cwd: &Path, out: &str, iters: &str, extra: &[&str]) -> PathBuf {
    let it = format!("--train.iterations={iters}");
    let mut args = vec!["train", "--out-dir", out, it.as_str()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&tpa(cwd, &args));
    cwd.join(out)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn mean_psnr(path: &Path) -> f64 {
    let rows = csv_rows(path);
    let psnr: Vec<f64> = rows[1..].iter().filter(|r| r[0] != "mean").map(|r| r[1].parse().unwrap()).collect();
    psnr.iter().sum::<f64>() / psnr.len() as f64
}

#[test]
fn train_writes_artifacts_only_under_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(tmp.path(), "run", "20", &[]);
    let entries: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(entries.len(), 1, "only the out dir may be created");
    for f in ["checkpoint.tpa", "metrics.csv", "config.toml", "eval.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let log = csv_rows(&out.join("metrics.csv"));
    assert_eq!(log[0].join(","), "iter,loss,psnr_val,r_gap,level_offset");
    assert_eq!(log.len(), 21);
    assert!(log[1][3].parse::<f64>().unwrap() > 0.0, "annealing inflates the radius");
    let eval = csv_rows(&out.join("eval.csv"));
    assert_eq!(eval[0].join(","), "view,psnr,ssim");
    assert_eq!(eval.last().unwrap()[0], "mean");
}

#[test]
fn disabled_annealing_has_no_radius_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train(tmp.path(), "run", "5", &["--anneal.enabled=false"]);
    let log = csv_rows(&out.join("metrics.csv"));
    assert!(log[1..].iter().all(|r| r[3].parse::<f64>().unwrap() == 0.0 && r[4].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn config_errors_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let e = fail_line(&tpa(tmp.path(), &["train", "--out-dir", "o", "--dataset.kind=blender"]));
    assert!(e.contains("dataset.path"), "{e}");
    let e = fail_line(&tpa(
        tmp.path(),
        &["train", "--out-dir", "o", "--dataset.kind=blender", "--dataset.path=/no/such/scene"],
    ));
    assert!(e.contains("dataset.path"), "{e}");
    let e = fail_line(&tpa(tmp.path(), &["train", "--out-dir", "o", "--anneal.bogus=1"]));
    assert!(e.contains("anneal.bogus"), "{e}");
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\niterations = \"many\"\n").unwrap();
    let e = fail_line(&tpa(tmp.path(), &["train", "--out-dir", "o", "--config", cfg.to_str().unwrap()]));
    assert!(e.contains("iterations"), "{e}");
    fail_line(&tpa(tmp.path(), &["frobnicate"]));
}

#[test]
fn config_file_and_flags_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[anneal]\nf_s = 0.3\n[train]\niterations = 3\n").unwrap();
    let mut args = vec!["train", "--out-dir", "o", "--config", cfg.to_str().unwrap(), "--anneal.f_s=0.1"];
    args.extend_from_slice(TINY);
    ok(&tpa(tmp.path(), &args));
    let echoed = std::fs::read_to_string(tmp.path().join("o/config.toml")).unwrap();
    assert!(echoed.contains("f_s = 0.1"), "{echoed}");
    assert_eq!(csv_rows(&tmp.path().join("o/metrics.csv")).len(), 4);
}

#[test]
fn render_is_reproducible_and_fits_training_views() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train(tmp.path(), "run", "300", &[]);
    let ckpt = run.join("checkpoint.tpa");
    let ckpt = ckpt.to_str().unwrap();
    for dir in ["r1", "r2"] {
        ok(&tpa(tmp.path(), &["render", "--checkpoint", ckpt, "--out-dir", dir, "--split", "train"]));
    }
    for name in ["rgb_train_000.png", "depth_train_000.png", "render.csv"] {
        let a = std::fs::read(tmp.path().join("r1").join(name)).unwrap();
        let b = std::fs::read(tmp.path().join("r2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between renders");
    }
    let depth = image::open(tmp.path().join("r1/depth_train_000.png")).unwrap();
    assert!(matches!(depth, image::DynamicImage::ImageLuma16(_)));
    let train_psnr = mean_psnr(&tmp.path().join("r1/render.csv"));
    let test_psnr = mean_psnr(&run.join("eval.csv"));
    assert!(train_psnr > test_psnr, "train views {train_psnr} vs held-out {test_psnr}");

    ok(&tpa(tmp.path(), &["eval", "--checkpoint", ckpt, "--out-dir", "e"]));
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("e/eval.csv")).unwrap(),
        std::fs::read_to_string(run.join("eval.csv")).unwrap()
    );
}

#[test]
fn stale_checkpoint_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train(tmp.path(), "run", "1", &[]);
    let path = run.join("checkpoint.tpa");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    let e = fail_line(&tpa(tmp.path(), &["render", "--checkpoint", path.to_str().unwrap(), "--out-dir", "r"]));
    assert!(e.contains("version 99"), "{e}");
}

#[test]
fn single_cell_ablation_matches_train() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train(tmp.path(), "run", "15", &["--anneal.f_s=0.2", "--anneal.theta=0.1"]);
    let mut args = vec!["ablate", "--out-dir", "ab", "--f-s", "0.2", "--theta", "0.1", "--train.iterations=15"];
    args.extend_from_slice(TINY);
    ok(&tpa(tmp.path(), &args));
    let rows = csv_rows(&tmp.path().join("ab/ablation.csv"));
    assert_eq!(rows[0].join(","), "f_s,theta,psnr,ssim");
    let eval = csv_rows(&run.join("eval.csv"));
    assert_eq!(rows[1][2], eval.last().unwrap()[1]);
}

#[test]
fn ablation_grid_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--out-dir", "ab", "--f-s", "0.05,0.35", "--theta", "0.05,0.2,0.35", "--train.iterations=2"];
    args.extend_from_slice(TINY);
    ok(&tpa(tmp.path(), &args));
    assert_eq!(csv_rows(&tmp.path().join("ab/ablation.csv")).len(), 1 + 6);
    let matrix = csv_rows(&tmp.path().join("ab/ablation_matrix.csv"));
    assert_eq!(matrix.len(), 3);
    assert_eq!(matrix[0].join(","), "f_s\\theta,0.05,0.2,0.35");
}

#[test]
fn duality_curves() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&tpa(tmp.path(), &["duality", "--out-dir", "d", "--levels", "8", "--x-step", "0.5"]));
    let sched = csv_rows(&tmp.path().join("d/duality_schedule.csv"));
    assert_eq!(sched[0].join(","), "iter,x_step,r_i,l_i,r_gap,level_offset");
    let t_stop = 2000;
    let tau = sched[t_stop + 1][2].clone();
    assert!(sched[t_stop + 1..].iter().all(|r| r[2] == tau && r[4].parse::<f64>().unwrap() == 0.0));
    assert!(sched[t_stop][4].parse::<f64>().unwrap() > 0.0);

    let ipe = csv_rows(&tmp.path().join("d/duality_ipe.csv"));
    let header: Vec<String> = ["x", "sigma_f_sq", "cutoff"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..8).map(|k| format!("mask_{k}")))
        .collect();
    assert_eq!(ipe[0], header);
    let cutoff = |x: f64| -> i64 {
        let row = ipe[1..].iter().find(|r| (r[0].parse::<f64>().unwrap() - x).abs() < 1e-9).unwrap();
        row[2].parse().unwrap()
    };
    let mut x = 2.0;
    while x + 2.0 <= 12.0 {
        assert_eq!(cutoff(x + 2.0), cutoff(x) + 1, "x = {x}");
        x += 0.5;
    }
    let freq = csv_rows(&tmp.path().join("d/duality_freq.csv"));
    assert_eq!(freq.len(), 1 + t_stop + 1);
    assert_eq!(freq[0].len(), 1 + 24);
}
