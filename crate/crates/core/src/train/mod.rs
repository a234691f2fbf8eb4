//! Optimization loop: random ray batches, photometric MSE, exact
//! gradients, AdamW.

mod backprop;
mod optim;

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use backprop::{batch_loss, loss_and_grad, loss_mse, Gradients, RayTarget};
pub use optim::{optimizer_step, AdamWParams};

use crate::anneal::{AnnealSchedule, AnnealedFootprint, FootprintPolicy};
use crate::dataio::{even_selection, Dataset, View};
use crate::error::ensure;
use crate::field::{FieldConfig, RadianceModel, TriPyramid};
use crate::geometry::{cone_sphere_radius, generate_ray, sample_cone};
use crate::metrics::MetricReport;
use crate::render::{render_image, PreparedModel, RenderConfig, RenderOptions, RenderedImage};
use crate::rng::{derive_seed, rng_for};
use crate::{Result, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub rays_per_batch: usize,
    /// Rays per work item; fixes the gradient summation order.
    pub rays_per_chunk: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Validation cadence in iterations; 0 disables.
    pub val_every: u64,
    pub val_views: usize,
    /// Rebuild the mip pyramid every this many iterations. 1 keeps it
    /// exactly in sync with the planes; larger values reuse a stale one.
    pub pyramid_refresh: u64,
    pub adam: AdamWParams,
    /// Filled from the `[anneal]` config section.
    #[serde(skip)]
    pub anneal: AnnealSchedule,
    /// SH degrees kept; filled from the `[sh]` config section.
    #[serde(skip, default = "default_sh_trunc")]
    pub sh_trunc: usize,
}

fn default_sh_trunc() -> usize {
    2
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2500,
            lr: 2e-3,
            weight_decay: 1e-5,
            rays_per_batch: 1024,
            rays_per_chunk: 64,
            seed: 0,
            precision: Precision::F32,
            val_every: 500,
            val_views: 4,
            pyramid_refresh: 1,
            adam: AdamWParams::default(),
            anneal: AnnealSchedule::default(),
            sh_trunc: default_sh_trunc(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0 && self.lr.is_finite(), Input, "train.lr must be > 0");
        ensure!(self.weight_decay >= 0.0, Input, "train.weight_decay must be >= 0");
        ensure!(self.rays_per_batch >= 1, Input, "train.rays_per_batch must be >= 1");
        ensure!(self.rays_per_chunk >= 1, Input, "train.rays_per_chunk must be >= 1");
        ensure!(self.pyramid_refresh >= 1, Input, "train.pyramid_refresh must be >= 1");
        self.anneal.validate()
    }

    /// The footprint policy this configuration trains with.
    pub fn policy(&self) -> AnnealedFootprint {
        AnnealedFootprint {
            schedule: self.anneal,
            sh_degrees: Some(self.sh_trunc),
        }
    }
}

/// Everything needed to resume optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub model: RadianceModel<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Iterations completed.
    pub iter: u64,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: RadianceModel<T>, seed: u64) -> Self {
        let n = model.param_count();
        Self {
            model,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            iter: 0,
            seed,
            loss_history: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.model.is_finite() && self.m.iter().chain(&self.v).all(|x| x.is_finite())
    }

    fn apply(&mut self, grads: &Gradients<T>, cfg: &TrainConfig) -> Result<()> {
        let step = self.iter + 1;
        let mut offset = 0;
        let model = &mut self.model;
        let segments = model
            .field
            .planes
            .iter_mut()
            .zip(&grads.planes)
            .chain(std::iter::once((&mut model.decoder.params, &grads.decoder)));
        for (params, g) in segments {
            let n = params.len();
            optimizer_step(
                params,
                g,
                &mut self.m[offset..offset + n],
                &mut self.v[offset..offset + n],
                step,
                cfg.lr,
                cfg.weight_decay,
                &cfg.adam,
            )?;
            offset += n;
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub loss: f64,
    pub psnr_val: Option<f64>,
    /// `r_i − τ` at the reference footprint.
    pub r_gap: f64,
    /// Annealed level minus the plain level at the reference footprint.
    pub level_offset: f64,
}

pub const LOG_HEADER: &str = "iter,loss,psnr_val,r_gap,level_offset";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        let psnr = r.psnr_val.map(|p| format!("{p:.6}")).unwrap_or_default();
        let _ = writeln!(s, "{},{:.9e},{},{:.9e},{:.9e}", r.iter, r.loss, psnr, r.r_gap, r.level_offset);
    }
    s
}

pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub log: Vec<LogRow>,
}

const STREAM_PIXELS: u64 = 0x7069_7865;
const STREAM_SAMPLES: u64 = 0x7361_6d70;
const STREAM_VAL: u64 = 0x7661_6c;

/// Draws the supervised rays for iteration `iter`.
pub fn sample_batch<T: Scalar>(views: &[View<T>], count: usize, seed: u64, iter: u64, samples: usize) -> Result<Vec<RayTarget<T>>> {
    ensure!(!views.is_empty(), Input, "no training views");
    let mut starts = Vec::with_capacity(views.len());
    let mut total = 0usize;
    for v in views {
        starts.push(total);
        total += v.image.pixel_count();
    }
    ensure!(total > 0, Input, "training views have no pixels");
    let mut rng = rng_for(seed, &[STREAM_PIXELS, iter]);
    (0..count)
        .map(|b| {
            let g = rng.gen_range(0..total);
            let vi = starts.partition_point(|&s| s <= g) - 1;
            let view = &views[vi];
            let local = g - starts[vi];
            let w = view.image.width as usize;
            let (px, py) = ((local % w) as u32, (local / w) as u32);
            let ray = generate_ray(&view.camera, px, py)?;
            let cone = sample_cone(&ray, &view.camera, samples, true, derive_seed(seed, &[STREAM_SAMPLES, iter, b as u64]))?;
            let rgb = view.image.pixel(px, py);
            Ok(RayTarget {
                ray,
                samples: cone,
                target: [rgb[0], rgb[1], rgb[2]],
                far: view.camera.far,
            })
        })
        .collect()
}

/// Reference footprint for logging: the center ray of the first view at
/// mid depth.
fn reference_tau<T: Scalar>(view: &View<T>) -> Result<T> {
    let cam = &view.camera;
    let ray = generate_ray(cam, cam.width / 2, cam.height / 2)?;
    cone_sphere_radius(&ray, (cam.near + cam.far) * T::lit(0.5), cam.ray_focal())
}

/// Renders `views` and scores them.
pub fn evaluate<T: Scalar, P: FootprintPolicy<T>>(
    model: &RadianceModel<T>,
    policy: &P,
    iter: u64,
    views: &[View<T>],
    render: &RenderConfig,
    seed: u64,
) -> Result<(MetricReport, Vec<RenderedImage<T>>)> {
    let prepared = PreparedModel::new(model, policy, iter);
    let opts = RenderOptions::eval(render);
    let mut report = MetricReport::default();
    let mut images = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let img = render_image(&prepared, &v.camera, &opts, derive_seed(seed, &[STREAM_VAL, i as u64]))?;
        report.push(format!("view_{i:03}"), &img.rgb, &v.image)?;
        images.push(img);
    }
    Ok((report, images))
}

/// Runs `cfg.iterations` further iterations from `state`.
pub fn train_with<T: Scalar, P: FootprintPolicy<T>>(
    mut state: TrainState<T>,
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    render: &RenderConfig,
    policy: &P,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    render.validate()?;
    ensure!(!dataset.train.is_empty(), Input, "dataset has no training views");
    let background = render.background::<T>();
    let base_radius = state.model.field.base_radius();
    let tau_ref = reference_tau(&dataset.train[0])?;
    let val_pool = if dataset.val.is_empty() { &dataset.test } else { &dataset.val };
    let val_views: Vec<View<T>> = even_selection(val_pool.len(), cfg.val_views)
        .into_iter()
        .map(|i| val_pool[i].clone())
        .collect();
    let mut log = Vec::with_capacity(cfg.iterations as usize);
    let mut pyramid: Option<TriPyramid<T>> = None;
    let end = state.iter + cfg.iterations;
    while state.iter < end {
        let iter = state.iter;
        if pyramid.is_none() || iter % cfg.pyramid_refresh == 0 {
            pyramid = Some(state.model.field.pyramid());
        }
        let pyr = pyramid.as_ref().expect("pyramid built above");
        let batch = sample_batch(&dataset.train, cfg.rays_per_batch, cfg.seed, iter, render.samples)?;
        let (loss, grads) = loss_and_grad(&state.model, pyr, policy, iter, &batch, background, cfg.rays_per_chunk)?;
        ensure!(grads.is_finite(), Numeric, "non-finite gradient at iteration {iter}");
        state.apply(&grads, cfg)?;
        state.iter += 1;
        let loss = loss.as_f64();
        state.loss_history.push(loss);
        let psnr_val = if cfg.val_every > 0 && !val_views.is_empty() && state.iter % cfg.val_every == 0 {
            let (report, _) = evaluate(&state.model, policy, iter, &val_views, render, cfg.seed)?;
            Some(report.mean_psnr())
        } else {
            None
        };
        log.push(LogRow {
            iter,
            loss,
            psnr_val,
            r_gap: (policy.radius(iter, tau_ref) - tau_ref).as_f64(),
            level_offset: (policy.level(iter, tau_ref, base_radius) - (tau_ref / base_radius).log2()).as_f64(),
        });
    }
    ensure!(state.is_finite(), Numeric, "training diverged to non-finite parameters");
    Ok(TrainOutcome { state, log })
}

/// Initializes a model from `field` and trains it with the configured
/// annealing policy.
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    field: &FieldConfig,
    cfg: &TrainConfig,
    render: &RenderConfig,
) -> Result<TrainOutcome<T>> {
    let model = RadianceModel::init(field.clone(), cfg.seed)?;
    train_with(TrainState::new(model, cfg.seed), dataset, cfg, render, &cfg.policy())
}
