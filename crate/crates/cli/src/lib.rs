//! Implementation of the `tpa` command line tool.
//!
//! Every command reads a TOML config (optional), applies dotted-key
//! overrides such as `--anneal.f_s=0.2`, and writes its artifacts under
//! `--out-dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use triplane_anneal::anneal::{annealed_level, annealed_radius, step_index};
use triplane_anneal::checkpoint::{load_checkpoint, save_checkpoint, stored_scalar_bits, CheckpointMeta};
use triplane_anneal::config::Config;
use triplane_anneal::dataio::blender::TransformsFile;
use triplane_anneal::dataio::{save_depth_png, Dataset, View};
use triplane_anneal::encoding::{annealed_sigma_f_sq, duality_cutoff_index, freq_mask, ipe_mask, FreqMaskParams};
use triplane_anneal::geometry::{cone_sphere_radius, generate_ray, Camera};
use triplane_anneal::metrics::{psnr, ssim, MetricReport};
use triplane_anneal::render::{render_image, PreparedModel, RenderOptions};
use triplane_anneal::train::{evaluate, log_csv, train, Precision, TrainState};
use triplane_anneal::{Scalar, TriPlaneField};

#[derive(Parser, Debug)]
#[command(
    name = "tpa",
    version,
    about = "Few-view tri-plane radiance fields with spatial annealing",
    after_help = "Any config key can be overridden with --section.key=value, e.g. --anneal.f_s=0.2"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for every artifact the command writes.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model, then evaluate it on the test views.
    Train,
    /// Render RGB and depth PNGs from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint on the test views.
    Eval(CheckpointArgs),
    /// Sweep f_s × theta, one training run per cell.
    Ablate(AblateArgs),
    /// Write the annealing schedule and frequency-mask curves.
    Duality(DualityArgs),
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    /// Defaults to <out-dir>/checkpoint.tpa.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub ckpt: CheckpointArgs,
    /// Dataset split whose cameras are rendered.
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Comma-separated view indices within the split (default: all).
    #[arg(long, value_delimiter = ',')]
    pub views: Option<Vec<usize>>,
    /// Render the poses of a transforms JSON file instead of a split.
    #[arg(long)]
    pub poses: Option<PathBuf>,
    /// Image width for --poses.
    #[arg(long, default_value_t = 64)]
    pub width: u32,
    /// Image height for --poses (default: width).
    #[arg(long)]
    pub height: Option<u32>,
}

pub const DEFAULT_GRID: [f64; 7] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35];

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// f_s values (comma-separated).
    #[arg(long = "f-s", value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub f_s: Vec<f64>,
    /// theta values (comma-separated).
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    pub theta: Vec<f64>,
    /// Seeds averaged per cell (default: train.seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct DualityArgs {
    /// Frequency levels of the positional encoding.
    #[arg(long, default_value_t = 8)]
    pub levels: usize,
    /// Spacing of the x grid for the IPE curves.
    #[arg(long, default_value_t = 0.25)]
    pub x_step: f64,
}

/// Separates `--section.key=value` (or `--section.key value`) overrides
/// from the arguments clap understands.
pub fn split_overrides(args: &[String]) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a.clone());
            continue;
        };
        let (key, value) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if !key.contains('.') {
            rest.push(a.clone());
            continue;
        }
        let value = match value {
            Some(v) => v,
            None => it.next().cloned().ok_or_else(|| anyhow!("override --{key} needs a value"))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run(argv: &[String]) -> Result<()> {
    let (rest, overrides) = split_overrides(argv.get(1..).unwrap_or_default())?;
    let cli = match Cli::try_parse_from(std::iter::once("tpa".to_string()).chain(rest)) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            bail!("{}", line.trim_start_matches("error: "));
        }
    };
    match cli.common.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building the worker pool")?;
            pool.install(|| dispatch(&cli, &overrides))
        }
        None => dispatch(&cli, &overrides),
    }
}

fn dispatch(cli: &Cli, overrides: &[(String, String)]) -> Result<()> {
    match &cli.command {
        Command::Train => {
            let (cfg, out) = resolve(&cli.common, overrides, None)?;
            let summary = match cfg.train.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, &out)?,
                Precision::F64 => cmd_train::<f64>(&cfg, &out)?,
            };
            println!("{summary}");
        }
        Command::Eval(args) => {
            let (ckpt, cfg, out) = resolve_checkpoint(&cli.common, overrides, args)?;
            let report = match checkpoint_precision(&ckpt)? {
                Precision::F32 => cmd_eval::<f32>(&ckpt, &cfg, &out)?,
                Precision::F64 => cmd_eval::<f64>(&ckpt, &cfg, &out)?,
            };
            print!("{}", report.to_table());
        }
        Command::Render(args) => {
            let (ckpt, cfg, out) = resolve_checkpoint(&cli.common, overrides, &args.ckpt)?;
            let n = match checkpoint_precision(&ckpt)? {
                Precision::F32 => cmd_render::<f32>(&ckpt, &cfg, &out, args)?,
                Precision::F64 => cmd_render::<f64>(&ckpt, &cfg, &out, args)?,
            };
            println!("rendered {n} view(s) into {}", out.display());
        }
        Command::Ablate(args) => {
            let (cfg, out) = resolve(&cli.common, overrides, None)?;
            let seeds = args.seeds.clone().unwrap_or_else(|| vec![cfg.train.seed]);
            let cells = match cfg.train.precision {
                Precision::F32 => cmd_ablate::<f32>(&cfg, &out, &args.f_s, &args.theta, &seeds)?,
                Precision::F64 => cmd_ablate::<f64>(&cfg, &out, &args.f_s, &args.theta, &seeds)?,
            };
            println!("wrote {} ablation cells to {}", cells.len(), out.join("ablation.csv").display());
        }
        Command::Duality(args) => {
            let (cfg, out) = resolve(&cli.common, overrides, None)?;
            cmd_duality(&cfg, &out, args.levels, args.x_step)?;
            println!("wrote duality curves to {}", out.display());
        }
    }
    Ok(())
}

fn resolve(common: &Common, overrides: &[(String, String)], fallback: Option<PathBuf>) -> Result<(Config, PathBuf)> {
    let mut ov = overrides.to_vec();
    if let Some(seed) = common.seed {
        ov.push(("train.seed".into(), seed.to_string()));
    }
    let cfg = match common.config.clone().or(fallback) {
        Some(path) => Config::load(&path, &ov)?,
        None => Config::from_overrides(&ov)?,
    };
    let out = common
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .ok_or_else(|| anyhow!("missing --out-dir (or output.dir in the config)"))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn resolve_checkpoint(
    common: &Common,
    overrides: &[(String, String)],
    args: &CheckpointArgs,
) -> Result<(PathBuf, Config, PathBuf)> {
    let ckpt = match (&args.checkpoint, &common.out_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join(CHECKPOINT_FILE),
        (None, None) => bail!("missing --checkpoint"),
    };
    if !ckpt.exists() {
        bail!("checkpoint {} does not exist", ckpt.display());
    }
    // the training run echoes its config next to the checkpoint
    let echoed = ckpt.parent().map(|d| d.join(CONFIG_FILE)).filter(|p| p.exists());
    let (cfg, out) = resolve(common, overrides, echoed)?;
    Ok((ckpt, cfg, out))
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(match stored_scalar_bits(&bytes)? {
        32 => Precision::F32,
        _ => Precision::F64,
    })
}

pub const CHECKPOINT_FILE: &str = "checkpoint.tpa";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVAL_FILE: &str = "eval.csv";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Trains, writes checkpoint, log, config echo and test-split scores.
pub fn cmd_train<T: Scalar>(cfg: &Config, out: &Path) -> Result<String> {
    let ds: Dataset<T> = cfg.load_dataset()?;
    let tc = cfg.train_config();
    let outcome = train(&ds, &cfg.field, &tc, &cfg.render)?;
    let state = &outcome.state;
    write(&out.join(METRICS_FILE), &log_csv(&outcome.log))?;
    write(&out.join(CONFIG_FILE), &cfg.to_toml_string())?;
    let meta = CheckpointMeta {
        field: cfg.field.clone(),
        render: cfg.render.clone(),
        anneal: cfg.anneal,
        sh_trunc: cfg.sh.n_trunc,
        seed: tc.seed,
        iter: state.iter,
    };
    save_checkpoint(&out.join(CHECKPOINT_FILE), &meta, state)?;
    let (report, _) = evaluate(&state.model, &tc.policy(), state.iter, &ds.test, &cfg.render, tc.seed)?;
    write(&out.join(EVAL_FILE), &report.to_csv())?;
    let last = state.loss_history.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "trained {} iterations (final loss {last:.6}); test PSNR {:.3} dB, SSIM {:.4} over {} views; artifacts in {}",
        state.iter,
        report.mean_psnr(),
        report.mean_ssim(),
        report.names.len(),
        out.display()
    ))
}

fn load<T: Scalar>(path: &Path) -> Result<(CheckpointMeta, TrainState<T>)> {
    load_checkpoint(path).with_context(|| format!("loading {}", path.display()))
}

/// Scores a checkpoint on the configured test views.
pub fn cmd_eval<T: Scalar>(ckpt: &Path, cfg: &Config, out: &Path) -> Result<MetricReport> {
    let (meta, state) = load::<T>(ckpt)?;
    let ds: Dataset<T> = cfg.load_dataset()?;
    let (report, _) = evaluate(&state.model, &meta.policy(), meta.iter, &ds.test, &meta.render, meta.seed)?;
    write(&out.join(EVAL_FILE), &report.to_csv())?;
    Ok(report)
}

fn pose_views<T: Scalar>(path: &Path, width: u32, height: u32, near: f64, far: f64) -> Result<Vec<Camera<T>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let tf: TransformsFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let focal = Camera::<T>::focal_from_angle_x(width, T::lit(tf.camera_angle_x));
    tf.frames
        .iter()
        .map(|f| {
            Camera::new(width, height, focal, f.transform_matrix.map(|r| r.map(T::lit)), T::lit(near), T::lit(far))
                .map_err(Into::into)
        })
        .collect()
}

/// Renders RGB and depth PNGs; returns the number of views.
pub fn cmd_render<T: Scalar>(ckpt: &Path, cfg: &Config, out: &Path, args: &RenderArgs) -> Result<usize> {
    let (meta, state) = load::<T>(ckpt)?;
    let r = &meta.render;
    let targets: Vec<(String, Camera<T>, Option<View<T>>)> = match &args.poses {
        Some(p) => pose_views(p, args.width, args.height.unwrap_or(args.width), r.near, r.far)?
            .into_iter()
            .enumerate()
            .map(|(i, c)| (format!("pose_{i:03}"), c, None))
            .collect(),
        None => {
            let ds: Dataset<T> = cfg.load_dataset()?;
            let (name, views) = match args.split {
                Split::Train => ("train", ds.train),
                Split::Test => ("test", ds.test),
            };
            let picked: Vec<usize> = match &args.views {
                Some(v) => v.clone(),
                None => (0..views.len()).collect(),
            };
            let mut t = Vec::with_capacity(picked.len());
            for i in picked {
                let v = views
                    .get(i)
                    .ok_or_else(|| anyhow!("view {i} out of range ({} {name} views)", views.len()))?;
                t.push((format!("{name}_{i:03}"), v.camera.clone(), Some(v.clone())));
            }
            t
        }
    };
    let policy = meta.policy();
    let prepared = PreparedModel::new(&state.model, &policy, meta.iter);
    let opts = RenderOptions::eval(r);
    let mut csv = String::from("view,psnr,ssim\n");
    for (name, cam, gt) in &targets {
        let img = render_image(&prepared, cam, &opts, meta.seed)?;
        img.rgb.save_png(&out.join(format!("rgb_{name}.png")))?;
        save_depth_png(&img.depth, cam.width, cam.height, r.near, r.far, &out.join(format!("depth_{name}.png")))?;
        if let Some(v) = gt {
            let _ = writeln!(csv, "{name},{:.6},{:.6}", psnr(&img.rgb, &v.image, 1.0)?, ssim(&img.rgb, &v.image)?);
        }
    }
    if targets.iter().any(|t| t.2.is_some()) {
        write(&out.join("render.csv"), &csv)?;
    }
    Ok(targets.len())
}

/// One cell of an ablation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub f_s: f64,
    pub theta: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Trains one model per (f_s, theta) cell and seed; writes the long-form
/// `ablation.csv` and the f_s × theta matrix `ablation_matrix.csv`.
pub fn cmd_ablate<T: Scalar>(
    cfg: &Config,
    out: &Path,
    f_s: &[f64],
    theta: &[f64],
    seeds: &[u64],
) -> Result<Vec<AblationCell>> {
    if f_s.is_empty() || theta.is_empty() || seeds.is_empty() {
        bail!("ablation grid and seed list must be non-empty");
    }
    let ds: Dataset<T> = cfg.load_dataset()?;
    let mut cells = Vec::with_capacity(f_s.len() * theta.len());
    for &fs in f_s {
        for &th in theta {
            let mut tc = cfg.train_config();
            tc.anneal.f_s = fs;
            tc.anneal.theta = th;
            let (mut p, mut s) = (0.0, 0.0);
            for &seed in seeds {
                tc.seed = seed;
                let outcome = train(&ds, &cfg.field, &tc, &cfg.render)?;
                let st = &outcome.state;
                let (report, _) = evaluate(&st.model, &tc.policy(), st.iter, &ds.test, &cfg.render, seed)?;
                p += report.mean_psnr() / seeds.len() as f64;
                s += report.mean_ssim() / seeds.len() as f64;
            }
            cells.push(AblationCell {
                f_s: fs,
                theta: th,
                psnr: p,
                ssim: s,
            });
        }
    }
    let mut long = String::from("f_s,theta,psnr,ssim\n");
    for c in &cells {
        let _ = writeln!(long, "{},{},{:.6},{:.6}", c.f_s, c.theta, c.psnr, c.ssim);
    }
    write(&out.join("ablation.csv"), &long)?;
    let mut matrix = String::from("f_s\\theta");
    for th in theta {
        let _ = write!(matrix, ",{th}");
    }
    matrix.push('\n');
    for (r, fs) in f_s.iter().enumerate() {
        let _ = write!(matrix, "{fs}");
        for c in &cells[r * theta.len()..(r + 1) * theta.len()] {
            let _ = write!(matrix, ",{:.6}", c.psnr);
        }
        matrix.push('\n');
    }
    write(&out.join("ablation_matrix.csv"), &matrix)?;
    Ok(cells)
}

pub const SCHEDULE_HEADER: &str = "iter,x_step,r_i,l_i,r_gap,level_offset";

/// Writes `duality_schedule.csv`, `duality_ipe.csv` and `duality_freq.csv`.
pub fn cmd_duality(cfg: &Config, out: &Path, levels: usize, x_step: f64) -> Result<()> {
    if levels == 0 || x_step <= 0.0 {
        bail!("--levels must be >= 1 and --x-step > 0");
    }
    let sched = &cfg.anneal;
    // reference footprint: center ray of a rig camera at mid depth
    let rig = &cfg.dataset.rig;
    let focal = Camera::<f64>::focal_from_angle_x(rig.image_size, rig.camera_angle_x);
    let cam = Camera::new(
        rig.image_size,
        rig.image_size,
        focal,
        [[1., 0., 0., 0.], [0., 1., 0., 0.], [0., 0., 1., rig.radius], [0., 0., 0., 1.]],
        cfg.render.near,
        cfg.render.far,
    )?;
    let ray = generate_ray(&cam, cam.width / 2, cam.height / 2)?;
    let tau = cone_sphere_radius(&ray, 0.5 * (cam.near + cam.far), cam.ray_focal())?;
    let base = TriPlaneField::<f64>::constant(cfg.field.clone(), 0.0)?.base_radius();

    let mut s = format!("{SCHEDULE_HEADER}\n");
    let last = cfg.train.iterations.max(sched.t_stop);
    for i in 0..=last {
        let r = annealed_radius(i, tau, sched);
        let l = annealed_level(i, tau, base, sched);
        let _ = writeln!(
            s,
            "{i},{},{r:.12e},{l:.12e},{:.12e},{:.12e}",
            step_index(i, sched),
            r - tau,
            l - (tau / base).log2()
        );
    }
    write(&out.join("duality_schedule.csv"), &s)?;

    let mut s = String::from("x,sigma_f_sq,cutoff");
    for k in 0..levels {
        let _ = write!(s, ",mask_{k}");
    }
    s.push('\n');
    let steps = ((2 * levels) as f64 / x_step).round() as usize;
    for j in 0..=steps {
        let x = j as f64 * x_step;
        let var = annealed_sigma_f_sq(x);
        let _ = write!(s, "{x},{var:.12e},{}", duality_cutoff_index(var, levels, 0.5)?);
        for m in ipe_mask(var, levels).iter().step_by(2) {
            let _ = write!(s, ",{m:.12e}");
        }
        s.push('\n');
    }
    write(&out.join("duality_ipe.csv"), &s)?;

    let mut s = String::from("t");
    for k in 0..3 * levels {
        let _ = write!(s, ",mask_{k}");
    }
    s.push('\n');
    for t in 0..=sched.t_stop {
        let m: Vec<f64> = freq_mask(&FreqMaskParams::new(t, sched.t_stop, levels)?);
        let _ = write!(s, "{t}");
        for v in m {
            let _ = write!(s, ",{v:.12e}");
        }
        s.push('\n');
    }
    write(&out.join("duality_freq.csv"), &s)?;
    Ok(())
}
