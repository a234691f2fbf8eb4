//! Volume rendering quadrature and the per-pixel render pipeline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::FootprintPolicy;
use crate::dataio::Image;
use crate::error::ensure;
use crate::field::{clamp_level, sample_features, FeatureTaps, MlpCache, RadianceModel, TriPyramid};
use crate::geometry::{generate_ray, sample_cone, Camera, ConeSample, Ray};
use crate::rng::derive_seed;
use crate::sh::sh_encode;
use crate::{Result, Scalar};

/// Opacity floor for the normalized expected depth.
pub const DEPTH_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadedSample<T> {
    pub t: T,
    pub density: T,
    pub rgb: [T; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub rgb: [T; 3],
    pub depth: T,
    pub opacity: T,
    pub weights: Vec<T>,
}

/// Alpha-composites samples front to back. The last interval runs to `far`.
///
/// `δ_k = t_{k+1} − t_k`, `α_k = 1 − e^(−σ_k δ_k)`, `w_k = α_k Π_{j<k}(1 − α_j)`.
pub fn composite<T: Scalar>(samples: &[ShadedSample<T>], far: T, background: [T; 3]) -> Result<RenderOutput<T>> {
    ensure!(
        samples.windows(2).all(|w| w[1].t >= w[0].t),
        Input,
        "composite samples must be sorted by t"
    );
    ensure!(
        samples.iter().all(|s| s.density >= T::zero()),
        Input,
        "densities must be non-negative"
    );
    Ok(composite_unchecked(samples, far, background))
}

pub(crate) fn interval<T: Scalar>(samples: &[ShadedSample<T>], k: usize, far: T) -> T {
    let next = samples.get(k + 1).map_or(far, |s| s.t);
    (next - samples[k].t).max(T::zero())
}

pub(crate) fn composite_unchecked<T: Scalar>(samples: &[ShadedSample<T>], far: T, background: [T; 3]) -> RenderOutput<T> {
    let mut transmittance = T::one();
    let mut rgb = [T::zero(); 3];
    let mut depth = T::zero();
    let mut weights = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let tau = s.density * interval(samples, k, far);
        let keep = (-tau).exp();
        let w = transmittance * (T::one() - keep);
        weights.push(w);
        for c in 0..3 {
            rgb[c] += w * s.rgb[c];
        }
        depth += w * s.t;
        transmittance *= keep;
    }
    let opacity = T::one() - transmittance;
    for c in 0..3 {
        rgb[c] += transmittance * background[c];
    }
    RenderOutput {
        rgb,
        depth: depth / opacity.max(T::lit(DEPTH_EPS)),
        opacity,
        weights,
    }
}

/// Gradient of `⟨d_rgb, rgb⟩` w.r.t. each sample's density and color.
///
/// `∂C/∂σ_k = δ_k (T_{k+1} c_k − Σ_{j>k} w_j c_j − T_final·bg)`, `∂C/∂c_k = w_k`.
pub fn composite_backward<T: Scalar>(
    samples: &[ShadedSample<T>],
    far: T,
    background: [T; 3],
    out: &RenderOutput<T>,
    d_rgb: [T; 3],
    d_density: &mut Vec<T>,
    d_color: &mut Vec<[T; 3]>,
) {
    let n = samples.len();
    d_density.clear();
    d_density.resize(n, T::zero());
    d_color.clear();
    d_color.resize(n, [T::zero(); 3]);
    let t_final = T::one() - out.opacity;
    // suffix = Σ_{j>k} w_j ⟨d_rgb, c_j⟩ + T_final ⟨d_rgb, bg⟩
    let mut suffix = t_final * (0..3).map(|c| d_rgb[c] * background[c]).sum::<T>();
    let mut transmittance = T::one();
    let mut trans_after = vec![T::zero(); n];
    for (k, s) in samples.iter().enumerate() {
        transmittance *= (-(s.density * interval(samples, k, far))).exp();
        trans_after[k] = transmittance;
    }
    for k in (0..n).rev() {
        let s = &samples[k];
        let w = out.weights[k];
        let proj = (0..3).map(|c| d_rgb[c] * s.rgb[c]).sum::<T>();
        d_density[k] = interval(samples, k, far) * (trans_after[k] * proj - suffix);
        d_color[k] = [w * d_rgb[0], w * d_rgb[1], w * d_rgb[2]];
        suffix += w * proj;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub samples: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    /// Jitter samples at evaluation time too.
    pub stratified_eval: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples: 128,
            near: 2.0,
            far: 6.0,
            background: [1.0; 3],
            stratified_eval: false,
        }
    }
}

impl RenderConfig {
    pub fn background<T: Scalar>(&self) -> [T; 3] {
        self.background.map(T::lit)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.samples >= 1, Input, "render.samples must be >= 1");
        ensure!(self.near > 0.0 && self.near < self.far, Input, "render.near must be in (0, far)");
        Ok(())
    }
}

/// Anything that can assign density and color to the cone samples of a ray.
pub trait RadianceSource<T: Scalar>: Sync {
    fn shade(&self, ray: &Ray<T>, samples: &[ConeSample<T>], out: &mut Vec<ShadedSample<T>>) -> Result<()>;
}

/// A model with its pyramid built, frozen at one training iteration.
pub struct PreparedModel<'a, T, P> {
    pub model: &'a RadianceModel<T>,
    pub pyramid: TriPyramid<T>,
    pub policy: &'a P,
    pub iter: u64,
}

impl<'a, T: Scalar, P: FootprintPolicy<T>> PreparedModel<'a, T, P> {
    pub fn new(model: &'a RadianceModel<T>, policy: &'a P, iter: u64) -> Self {
        Self {
            pyramid: model.field.pyramid(),
            model,
            policy,
            iter,
        }
    }
}

/// Per-ray state shared by rendering and training.
pub(crate) struct RayContext<T> {
    pub sh: Vec<T>,
    pub base_radius: T,
    pub max_level: T,
}

impl<T: Scalar> RayContext<T> {
    pub fn new<P: FootprintPolicy<T>>(model: &RadianceModel<T>, policy: &P, ray: &Ray<T>) -> Result<Self> {
        let deg = model.config().max_sh_degree;
        let trunc = policy.sh_truncation(deg);
        Ok(Self {
            sh: sh_encode(ray.dir.normalized(), deg, &trunc)?,
            base_radius: model.field.base_radius(),
            max_level: model.field.max_level(),
        })
    }
}

/// Forward for one sample inside the box. `None` for empty space.
#[allow(clippy::too_many_arguments)]
pub(crate) fn shade_sample<T: Scalar, P: FootprintPolicy<T>>(
    model: &RadianceModel<T>,
    pyramid: &TriPyramid<T>,
    policy: &P,
    iter: u64,
    ctx: &RayContext<T>,
    sample: &ConeSample<T>,
    features: &mut [T],
    cache: &mut MlpCache<T>,
    taps: Option<&mut FeatureTaps<T>>,
) -> Option<(T, [T; 3])> {
    let (pos, inside) = model.field.contract(&sample.center);
    if !inside {
        return None;
    }
    let level = clamp_level(policy.level(iter, sample.tau, ctx.base_radius), ctx.max_level);
    sample_features(pyramid, &pos, level, features, taps);
    Some(model.decoder.forward(features, &ctx.sh, cache))
}

impl<T: Scalar, P: FootprintPolicy<T>> RadianceSource<T> for PreparedModel<'_, T, P> {
    fn shade(&self, ray: &Ray<T>, samples: &[ConeSample<T>], out: &mut Vec<ShadedSample<T>>) -> Result<()> {
        let ctx = RayContext::new(self.model, self.policy, ray)?;
        let mut features = vec![T::zero(); self.model.decoder.shape.input];
        let mut cache = MlpCache::new(&self.model.decoder.shape);
        out.clear();
        for s in samples {
            let (density, rgb) = shade_sample(
                self.model,
                &self.pyramid,
                self.policy,
                self.iter,
                &ctx,
                s,
                &mut features,
                &mut cache,
                None,
            )
            .unwrap_or((T::zero(), [T::zero(); 3]));
            out.push(ShadedSample { t: s.t, density, rgb });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions<T> {
    pub samples: usize,
    pub stratified: bool,
    pub background: [T; 3],
}

impl<T: Scalar> RenderOptions<T> {
    pub fn eval(cfg: &RenderConfig) -> Self {
        Self {
            samples: cfg.samples,
            stratified: cfg.stratified_eval,
            background: cfg.background(),
        }
    }
}

/// Seed for pixel `index` of an image rendered under `seed`.
pub fn pixel_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// ray → cone samples → footprint level → features → decode → composite.
pub fn render_pixel<T: Scalar, S: RadianceSource<T>>(
    source: &S,
    camera: &Camera<T>,
    px: u32,
    py: u32,
    opts: &RenderOptions<T>,
    rng_seed: u64,
) -> Result<RenderOutput<T>> {
    let ray = generate_ray(camera, px, py)?;
    let samples = sample_cone(&ray, camera, opts.samples, opts.stratified, rng_seed)?;
    let mut shaded = Vec::with_capacity(samples.len());
    source.shade(&ray, &samples, &mut shaded)?;
    // densities are per world unit while t advances ‖d‖ world units per step
    let scale = ray.dir.norm();
    for s in &mut shaded {
        s.density *= scale;
    }
    composite(&shaded, camera.far, opts.background)
}

/// Rendered color plus per-pixel depth and opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage<T> {
    pub rgb: Image<T>,
    pub depth: Vec<T>,
    pub opacity: Vec<T>,
}

/// Renders every pixel in parallel; each pixel's seed depends only on its
/// index, so the result is independent of the thread count.
pub fn render_image<T: Scalar, S: RadianceSource<T>>(
    source: &S,
    camera: &Camera<T>,
    opts: &RenderOptions<T>,
    seed: u64,
) -> Result<RenderedImage<T>> {
    let n = camera.pixel_count();
    let w = camera.width as usize;
    let pixels: Vec<RenderOutput<T>> = (0..n)
        .into_par_iter()
        .map(|idx| render_pixel(source, camera, (idx % w) as u32, (idx / w) as u32, opts, pixel_seed(seed, idx)))
        .collect::<Result<_>>()?;
    let mut rgb = Vec::with_capacity(3 * n);
    let mut depth = Vec::with_capacity(n);
    let mut opacity = Vec::with_capacity(n);
    for p in pixels {
        rgb.extend_from_slice(&p.rgb);
        depth.push(p.depth);
        opacity.push(p.opacity);
    }
    Ok(RenderedImage {
        rgb: Image::new(camera.width, camera.height, 3, rgb)?,
        depth,
        opacity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn uniform(n: usize, t0: f64, t1: f64, sigma: f64, rgb: [f64; 3]) -> Vec<ShadedSample<f64>> {
        (0..n)
            .map(|k| ShadedSample {
                t: t0 + (t1 - t0) * k as f64 / n as f64,
                density: sigma,
                rgb,
            })
            .collect()
    }

    #[test]
    fn empty_space_is_background() {
        let out = composite(&uniform(16, 2.0, 6.0, 0.0, [0.2, 0.3, 0.4]), 6.0, [1.0, 0.5, 0.0]).unwrap();
        assert_eq!(out.rgb, [1.0, 0.5, 0.0]);
        assert_eq!(out.opacity, 0.0);
        assert_eq!(out.depth, 0.0);
    }

    #[test]
    fn opaque_first_sample_wins() {
        let mut s = uniform(8, 2.0, 6.0, 0.5, [0.0; 3]);
        s[0].density = 1e6;
        s[0].rgb = [0.9, 0.1, 0.3];
        let out = composite(&s, 6.0, [1.0; 3]).unwrap();
        for c in 0..3 {
            assert_relative_eq!(out.rgb[c], s[0].rgb[c], epsilon = 1e-12);
        }
        assert_relative_eq!(out.depth, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_medium_matches_closed_form() {
        let sigma = 0.8;
        let out = composite(&uniform(256, 2.0, 6.0, sigma, [0.0; 3]), 6.0, [1.0; 3]).unwrap();
        let exact = 1.0 - (-sigma * 4.0f64).exp();
        assert!((out.opacity - exact).abs() / exact < 0.01);
    }

    #[test]
    fn unsorted_and_negative_rejected() {
        let mut s = uniform(4, 2.0, 6.0, 1.0, [0.0; 3]);
        s.swap(1, 2);
        assert!(composite(&s, 6.0, [1.0; 3]).is_err());
        let mut s = uniform(4, 2.0, 6.0, 1.0, [0.0; 3]);
        s[2].density = -1.0;
        assert!(composite(&s, 6.0, [1.0; 3]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut s: Vec<ShadedSample<f64>> = (0..6)
            .map(|k| ShadedSample {
                t: 2.0 + 0.5 * k as f64 + 0.05 * (k * k) as f64,
                density: 0.3 + 0.4 * ((k * 7) % 5) as f64,
                rgb: [0.1 * k as f64, 0.9 - 0.1 * k as f64, 0.5],
            })
            .collect();
        let bg = [1.0, 0.8, 0.6];
        let d_rgb = [0.7, -0.4, 1.3];
        let f = |s: &[ShadedSample<f64>]| {
            let o = composite(s, 6.0, bg).unwrap();
            (0..3).map(|c| d_rgb[c] * o.rgb[c]).sum::<f64>()
        };
        let out = composite(&s, 6.0, bg).unwrap();
        let (mut dd, mut dc) = (Vec::new(), Vec::new());
        composite_backward(&s, 6.0, bg, &out, d_rgb, &mut dd, &mut dc);
        let eps = 1e-6;
        for k in 0..s.len() {
            let orig = s[k].density;
            s[k].density = orig + eps;
            let p = f(&s);
            s[k].density = orig - eps;
            let m = f(&s);
            s[k].density = orig;
            let fd = (p - m) / (2.0 * eps);
            assert!((fd - dd[k]).abs() <= 1e-4 * fd.abs().max(1e-6), "density {k}: {fd} vs {}", dd[k]);
            for c in 0..3 {
                let orig = s[k].rgb[c];
                s[k].rgb[c] = orig + eps;
                let p = f(&s);
                s[k].rgb[c] = orig - eps;
                let m = f(&s);
                s[k].rgb[c] = orig;
                let fd = (p - m) / (2.0 * eps);
                assert!((fd - dc[k][c]).abs() <= 1e-4 * fd.abs().max(1e-6));
            }
        }
    }

    proptest! {
        #[test]
        fn weights_sum_to_opacity(dens in proptest::collection::vec(0.0f64..20.0, 1..40)) {
            let s: Vec<_> = dens.iter().enumerate().map(|(k, &d)| ShadedSample {
                t: 2.0 + 0.1 * k as f64, density: d, rgb: [0.5; 3],
            }).collect();
            let out = composite(&s, 6.0, [1.0; 3]).unwrap();
            prop_assert!(out.weights.iter().all(|w| *w >= 0.0));
            let total: f64 = out.weights.iter().sum();
            prop_assert!((total - out.opacity).abs() < 1e-12);
            prop_assert!(out.opacity >= 0.0 && out.opacity <= 1.0 + 1e-6);
        }

        #[test]
        fn splitting_a_segment_is_invariant(
            dens in proptest::collection::vec(0.0f64..5.0, 2..12), split in 0usize..11, frac in 0.05f64..0.95
        ) {
            let s: Vec<_> = dens.iter().enumerate().map(|(k, &d)| ShadedSample {
                t: 2.0 + 0.3 * k as f64, density: d, rgb: [0.1 * (k % 7) as f64, 0.4, 0.9],
            }).collect();
            let far = 2.0 + 0.3 * dens.len() as f64;
            let k = split % s.len();
            let mut finer = s.clone();
            let delta = interval(&s, k, far);
            finer.insert(k + 1, ShadedSample { t: s[k].t + frac * delta, ..s[k] });
            let a = composite(&s, far, [1.0; 3]).unwrap();
            let b = composite(&finer, far, [1.0; 3]).unwrap();
            for c in 0..3 {
                prop_assert!((a.rgb[c] - b.rgb[c]).abs() < 1e-10);
            }
            prop_assert!((a.opacity - b.opacity).abs() < 1e-10);
        }
    }
}
