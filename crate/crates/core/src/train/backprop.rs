//! Reverse-mode gradients of the photometric loss, written out by hand for
//! each stage: composite → decoder → bilinear/level taps → mip averaging.

use rayon::prelude::*;

use crate::anneal::FootprintPolicy;
use crate::error::ensure;
use crate::field::{pyramid_backward, sample_features_backward, FeatureTaps, MlpCache, RadianceModel, TriPyramid};
use crate::geometry::{ConeSample, Ray};
use crate::render::{
    composite_backward, composite_unchecked, shade_sample, PreparedModel, RadianceSource, RayContext, ShadedSample,
};
use crate::{Result, Scalar};

/// Mean squared error over every channel of every element.
pub fn loss_mse<T: Scalar>(pred: &[T], gt: &[T]) -> Result<T> {
    ensure!(pred.len() == gt.len(), Input, "loss shapes differ: {} vs {}", pred.len(), gt.len());
    ensure!(!pred.is_empty(), Input, "empty loss batch");
    let mut acc = T::zero();
    for (p, g) in pred.iter().zip(gt) {
        let d = *p - *g;
        acc += d * d;
    }
    Ok(acc / T::from_usize_lossy(pred.len()))
}

/// One supervised ray with its (already drawn) cone samples.
#[derive(Clone, Debug)]
pub struct RayTarget<T> {
    pub ray: Ray<T>,
    pub samples: Vec<ConeSample<T>>,
    pub target: [T; 3],
    pub far: T,
}

/// Gradients for every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub planes: [Vec<T>; 3],
    pub decoder: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &RadianceModel<T>) -> Self {
        let n = model.field.config.plane_len();
        Self {
            planes: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
            decoder: vec![T::zero(); model.decoder.params.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().flatten().chain(&self.decoder).all(|g| g.is_finite())
    }
}

/// Buffers reused across the rays of one chunk.
struct Workspace<T> {
    features: Vec<T>,
    caches: Vec<MlpCache<T>>,
    taps: Vec<FeatureTaps<T>>,
    inside: Vec<bool>,
    shaded: Vec<ShadedSample<T>>,
    d_density: Vec<T>,
    d_color: Vec<[T; 3]>,
    d_features: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(model: &RadianceModel<T>) -> Self {
        Self {
            features: Vec::new(),
            caches: Vec::new(),
            taps: Vec::new(),
            inside: Vec::new(),
            shaded: Vec::new(),
            d_density: Vec::new(),
            d_color: Vec::new(),
            d_features: vec![T::zero(); model.decoder.shape.input],
            scratch: Vec::new(),
        }
    }

    fn reserve(&mut self, model: &RadianceModel<T>, n: usize) {
        let input = model.decoder.shape.input;
        if self.caches.len() < n {
            self.caches.resize_with(n, || MlpCache::new(&model.decoder.shape));
            self.taps.resize(n, FeatureTaps::default());
        }
        self.features.resize(n * input, T::zero());
        self.inside.resize(n, false);
    }
}

/// Sum of squared color errors over a chunk, with its gradient folded into
/// pyramid-shaped and decoder buffers. Each ray's color gradient is
/// `scale · 2(rgb − target)`.
#[allow(clippy::too_many_arguments)]
fn chunk_forward_backward<T: Scalar, P: FootprintPolicy<T>>(
    model: &RadianceModel<T>,
    pyramid: &TriPyramid<T>,
    policy: &P,
    iter: u64,
    rays: &[RayTarget<T>],
    background: [T; 3],
    scale: T,
    grad_pyr: &mut [T],
    grad_dec: &mut [T],
) -> Result<T> {
    let mut ws = Workspace::new(model);
    let input = model.decoder.shape.input;
    let c = model.field.config.feature_dim;
    let mut sse = T::zero();
    for rt in rays {
        let ctx = RayContext::new(model, policy, &rt.ray)?;
        let n = rt.samples.len();
        ws.reserve(model, n);
        ws.shaded.clear();
        let dnorm = rt.ray.dir.norm();
        for (k, s) in rt.samples.iter().enumerate() {
            let res = shade_sample(
                model,
                pyramid,
                policy,
                iter,
                &ctx,
                s,
                &mut ws.features[k * input..(k + 1) * input],
                &mut ws.caches[k],
                Some(&mut ws.taps[k]),
            );
            ws.inside[k] = res.is_some();
            let (density, rgb) = res.unwrap_or((T::zero(), [T::zero(); 3]));
            ws.shaded.push(ShadedSample {
                t: s.t,
                density: density * dnorm,
                rgb,
            });
        }
        let out = composite_unchecked(&ws.shaded, rt.far, background);
        let mut d_rgb = [T::zero(); 3];
        for ch in 0..3 {
            let diff = out.rgb[ch] - rt.target[ch];
            sse += diff * diff;
            d_rgb[ch] = scale * T::lit(2.0) * diff;
        }
        composite_backward(&ws.shaded, rt.far, background, &out, d_rgb, &mut ws.d_density, &mut ws.d_color);
        for k in 0..n {
            if !ws.inside[k] {
                continue;
            }
            let feats = &ws.features[k * input..(k + 1) * input];
            model.decoder.backward(
                feats,
                &ctx.sh,
                &ws.caches[k],
                ws.d_density[k] * dnorm,
                ws.d_color[k],
                grad_dec,
                &mut ws.d_features,
                &mut ws.scratch,
            );
            sample_features_backward(&ws.taps[k], &ws.d_features, c, grad_pyr);
        }
    }
    Ok(sse)
}

/// MSE over a batch and its exact gradient.
///
/// Rays are processed in fixed chunks of `chunk` rays whose partial sums
/// are reduced in chunk order, so the result does not depend on how many
/// threads run the chunks.
pub fn loss_and_grad<T: Scalar, P: FootprintPolicy<T>>(
    model: &RadianceModel<T>,
    pyramid: &TriPyramid<T>,
    policy: &P,
    iter: u64,
    batch: &[RayTarget<T>],
    background: [T; 3],
    chunk: usize,
) -> Result<(T, Gradients<T>)> {
    ensure!(!batch.is_empty(), Input, "empty ray batch");
    ensure!(chunk >= 1, Input, "chunk size must be >= 1");
    let layout = &pyramid.layout;
    let count = T::from_usize_lossy(3 * batch.len());
    let scale = T::one() / count;
    let partials: Vec<(T, Vec<T>, Vec<T>)> = batch
        .par_chunks(chunk)
        .map(|rays| {
            let mut gp = vec![T::zero(); layout.len()];
            let mut gd = vec![T::zero(); model.decoder.params.len()];
            let sse = chunk_forward_backward(model, pyramid, policy, iter, rays, background, scale, &mut gp, &mut gd)?;
            Ok((sse, gp, gd))
        })
        .collect::<Result<_>>()?;
    let mut parts = partials.into_iter();
    let (mut sse, mut gp, mut gd) = parts.next().expect("non-empty batch");
    for (s, p, d) in parts {
        sse += s;
        gp.iter_mut().zip(&p).for_each(|(a, b)| *a += *b);
        gd.iter_mut().zip(&d).for_each(|(a, b)| *a += *b);
    }
    let loss = sse * scale;
    ensure!(loss.is_finite(), Numeric, "non-finite loss {loss}");
    let mut grads = Gradients::zeros_like(model);
    pyramid_backward(layout, &mut gp, &mut grads.planes);
    grads.decoder = gd;
    Ok((loss, grads))
}

/// Forward-only batch loss, rebuilding the pyramid from the planes.
pub fn batch_loss<T: Scalar, P: FootprintPolicy<T>>(
    model: &RadianceModel<T>,
    policy: &P,
    iter: u64,
    batch: &[RayTarget<T>],
    background: [T; 3],
) -> Result<T> {
    let prepared = PreparedModel::new(model, policy, iter);
    let mut pred = Vec::with_capacity(3 * batch.len());
    let mut gt = Vec::with_capacity(3 * batch.len());
    let mut src = Vec::new();
    for rt in batch {
        prepared.shade(&rt.ray, &rt.samples, &mut src)?;
        let dnorm = rt.ray.dir.norm();
        src.iter_mut().for_each(|s| s.density *= dnorm);
        let out = composite_unchecked(&src, rt.far, background);
        pred.extend_from_slice(&out.rgb);
        gt.extend_from_slice(&rt.target);
    }
    loss_mse(&pred, &gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn mse_cases() {
        let a = [0.2f64, 0.4, 0.9];
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((loss_mse(&b, &a).unwrap() - 0.01).abs() < 1e-15);
        assert!(loss_mse(&a, &a[..2]).is_err());
    }

    #[test]
    fn mse_matches_naive_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (rows, cols) = (37, 3);
        let p: Vec<f64> = (0..rows * cols).map(|_| rng.gen()).collect();
        let g: Vec<f64> = (0..rows * cols).map(|_| rng.gen()).collect();
        let mut total = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                total += (p[r * cols + c] - g[r * cols + c]).powi(2);
            }
        }
        assert!((loss_mse(&p, &g).unwrap() - total / (rows * cols) as f64).abs() < 1e-12);
    }
}
