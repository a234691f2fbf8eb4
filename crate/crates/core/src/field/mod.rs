//! Mipmapped tri-plane feature field and its decoder.
//!
//! A point is contracted into `[−1, 1]³` by the scene box and projected onto
//! the XY, XZ and YZ planes. Each plane is sampled bilinearly at mip levels
//! `⌊l⌋` and `⌈l⌉` (four texels each, eight per plane) and the two results
//! are blended by `l − ⌊l⌋`. The three plane features are concatenated
//! `f_XY ⊕ f_XZ ⊕ f_YZ`. Blending happens per plane before concatenation;
//! both orders give the same vector.

pub mod mlp;
pub mod pyramid;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::rng::rng_for;
use crate::sh::sh_len;
use crate::{Result, Scalar, Vec3};
pub use mlp::{MlpCache, MlpDecoder, MlpShape};
pub use pyramid::{build_mip_pyramid, pyramid_backward, PyramidLayout, TriPyramid};

/// World axes spanned by each plane, in concatenation order.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub base_res: usize,
    pub levels: usize,
    pub feature_dim: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    pub hidden: usize,
    pub max_sh_degree: usize,
    /// Plane texels start uniform in `[−init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            base_res: 128,
            levels: 8,
            feature_dim: 8,
            bbox_min: [-1.5; 3],
            bbox_max: [1.5; 3],
            hidden: 64,
            max_sh_degree: 3,
            init_scale: 1e-4,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.base_res >= 2, Input, "field.base_res must be >= 2");
        ensure!(self.levels >= 2, Input, "field.levels must be >= 2");
        ensure!(self.feature_dim >= 1, Input, "field.feature_dim must be >= 1");
        ensure!(self.hidden >= 1, Input, "field.hidden must be >= 1");
        ensure!(
            (0..3).all(|a| self.bbox_min[a] < self.bbox_max[a]),
            Input,
            "field.bbox_min must be below field.bbox_max on every axis"
        );
        ensure!(self.init_scale >= 0.0, Input, "field.init_scale must be >= 0");
        Ok(())
    }

    pub fn layout(&self) -> PyramidLayout {
        PyramidLayout::new(self.base_res, self.levels, self.feature_dim)
    }

    pub fn mlp_shape(&self) -> MlpShape {
        MlpShape {
            input: 3 * self.feature_dim,
            hidden: self.hidden,
            sh: sh_len(self.max_sh_degree),
        }
    }

    pub fn plane_len(&self) -> usize {
        self.base_res * self.base_res * self.feature_dim
    }
}

/// Level-0 feature planes; upper mip levels are derived on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct TriPlaneField<T> {
    pub config: FieldConfig,
    pub planes: [Vec<T>; 3],
}

impl<T: Scalar> TriPlaneField<T> {
    pub fn random(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0x504c4e]);
        let s = config.init_scale;
        let n = config.plane_len();
        let mut plane = || -> Vec<T> {
            (0..n)
                .map(|_| if s > 0.0 { T::lit(rng.gen_range(-s..s)) } else { T::zero() })
                .collect()
        };
        let planes = [plane(), plane(), plane()];
        Ok(Self { config, planes })
    }

    pub fn constant(config: FieldConfig, value: T) -> Result<Self> {
        config.validate()?;
        let n = config.plane_len();
        Ok(Self {
            planes: [vec![value; n], vec![value; n], vec![value; n]],
            config,
        })
    }

    /// Half the world extent of one level-0 texel (largest axis).
    pub fn base_radius(&self) -> T {
        let c = &self.config;
        let extent = (0..3)
            .map(|a| c.bbox_max[a] - c.bbox_min[a])
            .fold(0.0, f64::max);
        T::lit(0.5 * extent / c.base_res as f64)
    }

    pub fn max_level(&self) -> T {
        T::from_usize_lossy(self.config.levels - 1)
    }

    /// Maps a world point into `[−1, 1]³`, clamping to the box. The flag
    /// reports whether the point was inside before clamping.
    pub fn contract(&self, x: &Vec3<T>) -> ([T; 3], bool) {
        let c = &self.config;
        let mut out = [T::zero(); 3];
        let mut inside = true;
        for a in 0..3 {
            let lo = T::lit(c.bbox_min[a]);
            let hi = T::lit(c.bbox_max[a]);
            let u = (x[a] - lo) / (hi - lo) * T::lit(2.0) - T::one();
            inside &= u >= -T::one() && u <= T::one();
            out[a] = u.max(-T::one()).min(T::one());
        }
        (out, inside)
    }

    pub fn layout(&self) -> PyramidLayout {
        self.config.layout()
    }

    pub fn pyramid(&self) -> TriPyramid<T> {
        TriPyramid::build(&self.layout(), &self.planes)
    }

    /// Convenience query at a world point; rebuilds the pyramid.
    pub fn query_features(&self, center: &Vec3<T>, level: T) -> Result<Vec<T>> {
        ensure!(
            level >= T::zero() && level <= self.max_level(),
            Input,
            "level {level} outside [0, {}]",
            self.max_level()
        );
        let (pos, _) = self.contract(center);
        let pyr = self.pyramid();
        let mut out = vec![T::zero(); 3 * self.config.feature_dim];
        sample_features(&pyr, &pos, level, &mut out, None);
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().flatten().all(|v| v.is_finite())
    }
}

/// Mip level for sphere radius `tau`: `clamp(log2(τ/r̈), 0, max_level)`.
pub fn query_level<T: Scalar>(tau: T, base_radius: T, max_level: T) -> Result<T> {
    ensure!(
        tau > T::zero() && base_radius > T::zero(),
        Input,
        "query_level needs positive radii (tau {tau}, base {base_radius})"
    );
    Ok(clamp_level((tau / base_radius).log2(), max_level))
}

#[inline]
pub fn clamp_level<T: Scalar>(level: T, max_level: T) -> T {
    level.max(T::zero()).min(max_level)
}

/// Flat-buffer indices and weights of the 24 texels one query touches.
#[derive(Clone, Copy, Debug)]
pub struct FeatureTaps<T> {
    pub taps: [[(usize, T); 8]; 3],
}

impl<T: Scalar> Default for FeatureTaps<T> {
    fn default() -> Self {
        Self {
            taps: [[(0, T::zero()); 8]; 3],
        }
    }
}

#[inline]
fn bilinear_taps<T: Scalar>(coord: (T, T), res: usize, base: usize, c: usize, weight: T, out: &mut [(usize, T)]) {
    let r = T::from_usize_lossy(res);
    let max = T::from_usize_lossy(res - 1);
    let half = T::lit(0.5);
    let u = ((coord.0 + T::one()) * half * r - half).max(T::zero()).min(max);
    let v = ((coord.1 + T::one()) * half * r - half).max(T::zero()).min(max);
    let (u0, v0) = (u.floor(), v.floor());
    let (fu, fv) = (u - u0, v - v0);
    let x0 = u0.to_usize().unwrap();
    let y0 = v0.to_usize().unwrap();
    let x1 = (x0 + 1).min(res - 1);
    let y1 = (y0 + 1).min(res - 1);
    let idx = |x: usize, y: usize| base + (y * res + x) * c;
    let one = T::one();
    out[0] = (idx(x0, y0), weight * (one - fu) * (one - fv));
    out[1] = (idx(x1, y0), weight * fu * (one - fv));
    out[2] = (idx(x0, y1), weight * (one - fu) * fv);
    out[3] = (idx(x1, y1), weight * fu * fv);
}

/// Samples the pyramid at a contracted position and (already clamped)
/// level, writing `3·C` features. Records texel taps when asked.
pub fn sample_features<T: Scalar>(
    pyr: &TriPyramid<T>,
    pos: &[T; 3],
    level: T,
    out: &mut [T],
    taps: Option<&mut FeatureTaps<T>>,
) {
    let layout = &pyr.layout;
    let c = layout.feature_dim;
    let k0f = level.floor();
    let k0 = k0f.to_usize().unwrap().min(layout.levels() - 1);
    let k1 = (k0 + 1).min(layout.levels() - 1);
    let frac = level - k0f;
    let mut local = FeatureTaps::default();
    for (p, &(a, b)) in PLANE_AXES.iter().enumerate() {
        let coord = (pos[a], pos[b]);
        let plane_taps = &mut local.taps[p];
        bilinear_taps(coord, layout.res[k0], layout.offset(p, k0), c, T::one() - frac, &mut plane_taps[..4]);
        bilinear_taps(coord, layout.res[k1], layout.offset(p, k1), c, frac, &mut plane_taps[4..]);
        let dst = &mut out[p * c..(p + 1) * c];
        dst.iter_mut().for_each(|v| *v = T::zero());
        for &(idx, w) in plane_taps.iter() {
            if w == T::zero() {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(&pyr.data[idx..idx + c]) {
                *d += w * *s;
            }
        }
    }
    if let Some(t) = taps {
        *t = local;
    }
}

/// Adjoint of [`sample_features`]: scatters `d_features` into a gradient
/// buffer laid out like the pyramid.
pub fn sample_features_backward<T: Scalar>(taps: &FeatureTaps<T>, d_features: &[T], c: usize, grad: &mut [T]) {
    for (p, plane_taps) in taps.taps.iter().enumerate() {
        let g = &d_features[p * c..(p + 1) * c];
        for &(idx, w) in plane_taps {
            if w == T::zero() {
                continue;
            }
            for (dst, gi) in grad[idx..idx + c].iter_mut().zip(g) {
                *dst += w * *gi;
            }
        }
    }
}

/// Tri-plane field plus decoder: everything that gets optimized.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceModel<T> {
    pub field: TriPlaneField<T>,
    pub decoder: MlpDecoder<T>,
}

impl<T: Scalar> RadianceModel<T> {
    pub fn init(config: FieldConfig, seed: u64) -> Result<Self> {
        let decoder = MlpDecoder::init(config.mlp_shape(), crate::rng::derive_seed(seed, &[1]));
        let field = TriPlaneField::random(config, crate::rng::derive_seed(seed, &[0]))?;
        Ok(Self { field, decoder })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.field.config
    }

    pub fn param_count(&self) -> usize {
        3 * self.field.config.plane_len() + self.decoder.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.field.is_finite() && self.decoder.params.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_config(res: usize, levels: usize, c: usize) -> FieldConfig {
        FieldConfig {
            base_res: res,
            levels,
            feature_dim: c,
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
            hidden: 4,
            max_sh_degree: 1,
            init_scale: 1.0,
        }
    }

    #[test]
    fn level_examples() {
        assert_eq!(query_level(0.02f64, 0.02, 7.0).unwrap(), 0.0);
        assert_eq!(query_level(0.04f64, 0.02, 7.0).unwrap(), 1.0);
        // log2(0.75) = −0.415 → clamped
        assert_eq!(query_level(0.015f64, 0.02, 7.0).unwrap(), 0.0);
        assert_eq!(query_level(100.0f64, 0.02, 7.0).unwrap(), 7.0);
        assert!(query_level(0.0f64, 0.02, 7.0).is_err());
        assert!(query_level(0.1f64, -1.0, 7.0).is_err());
    }

    #[test]
    fn base_radius_is_half_texel() {
        let f = TriPlaneField::<f64>::constant(FieldConfig::default(), 0.0).unwrap();
        assert_relative_eq!(f.base_radius(), 0.5 * 3.0 / 128.0);
    }

    #[test]
    fn constant_field_constant_features() {
        let f = TriPlaneField::<f64>::constant(small_config(6, 3, 2), 0.375).unwrap();
        for (x, l) in [([0.1, -0.7, 0.3], 0.0), ([0.9, 0.9, -0.9], 1.4), ([2.0, 0.0, 0.0], 2.0)] {
            let v = f.query_features(&Vec3(x), l).unwrap();
            assert!(v.iter().all(|a| (a - 0.375).abs() < 1e-15));
        }
        assert!(f.query_features(&Vec3::zero(), 2.5).is_err());
    }

    /// Independent dense reference: texel-center grid, explicit bilinear
    /// formula, per-level pyramid from `build_mip_pyramid`.
    fn reference_query(field: &TriPlaneField<f64>, x: [f64; 3], level: f64) -> Vec<f64> {
        let c = field.config.feature_dim;
        let lo = level.floor() as usize;
        let hi = level.ceil() as usize;
        let t = level - lo as f64;
        let mut out = Vec::new();
        for (p, &(a, b)) in PLANE_AXES.iter().enumerate() {
            let pyr = build_mip_pyramid(&field.planes[p], field.config.base_res, c, field.config.levels);
            let lookup = |k: usize| -> Vec<f64> {
                let res = field.config.base_res.div_ceil(1 << k);
                let tex = |ix: i64, iy: i64, ch: usize| {
                    let ix = ix.clamp(0, res as i64 - 1) as usize;
                    let iy = iy.clamp(0, res as i64 - 1) as usize;
                    pyr[k][(iy * res + ix) * c + ch]
                };
                let to_grid = |w: f64| ((w.clamp(-1.0, 1.0) + 1.0) / 2.0 * res as f64 - 0.5).clamp(0.0, res as f64 - 1.0);
                let (u, v) = (to_grid(x[a]), to_grid(x[b]));
                let (iu, iv) = (u.floor() as i64, v.floor() as i64);
                let (fu, fv) = (u - iu as f64, v - iv as f64);
                (0..c)
                    .map(|ch| {
                        tex(iu, iv, ch) * (1.0 - fu) * (1.0 - fv)
                            + tex(iu + 1, iv, ch) * fu * (1.0 - fv)
                            + tex(iu, iv + 1, ch) * (1.0 - fu) * fv
                            + tex(iu + 1, iv + 1, ch) * fu * fv
                    })
                    .collect()
            };
            let (f0, f1) = (lookup(lo), lookup(hi));
            out.extend(f0.iter().zip(&f1).map(|(a, b)| a * (1.0 - t) + b * t));
        }
        out
    }

    #[test]
    fn integer_level_is_pure_bilinear() {
        let f = TriPlaneField::<f64>::random(small_config(4, 2, 3), 5).unwrap();
        let got = f.query_features(&Vec3([0.2, -0.35, 0.6]), 1.0).unwrap();
        assert_eq!(got.len(), 9);
        for (a, b) in got.iter().zip(reference_query(&f, [0.2, -0.35, 0.6], 1.0)) {
            assert_relative_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn coarse_levels_attenuate_noise() {
        let f = TriPlaneField::<f64>::random(small_config(32, 6, 1), 9).unwrap();
        let variance = |level: f64| {
            let vals: Vec<f64> = (0..400)
                .map(|i| {
                    let x = [(i % 20) as f64 / 10.0 - 0.95, (i / 20) as f64 / 10.0 - 0.95, 0.1];
                    f.query_features(&Vec3(x), level).unwrap()[0]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
        };
        assert!(variance(5.0) <= variance(0.0));
    }

    proptest! {
        #[test]
        fn matches_dense_reference(
            seed in 0u64..1000, x in -1.2f64..1.2, y in -1.2f64..1.2, z in -1.2f64..1.2, level in 0.0f64..2.0
        ) {
            let f = TriPlaneField::<f64>::random(small_config(4, 3, 2), seed).unwrap();
            let got = f.query_features(&Vec3([x, y, z]), level).unwrap();
            for (a, b) in got.iter().zip(reference_query(&f, [x, y, z], level)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn continuous_in_level_and_position(seed in 0u64..100, k in 0usize..3, x in -0.9f64..0.9) {
            let f = TriPlaneField::<f64>::random(small_config(8, 4, 2), seed).unwrap();
            let p = Vec3([x, 0.3, -0.2]);
            let at = f.query_features(&p, k as f64).unwrap();
            let eps = 1e-9;
            let below = f.query_features(&p, (k as f64 - eps).max(0.0)).unwrap();
            let above = f.query_features(&p, k as f64 + eps).unwrap();
            let moved = f.query_features(&Vec3([x + eps, 0.3, -0.2]), k as f64).unwrap();
            for i in 0..at.len() {
                prop_assert!((at[i] - below[i]).abs() < 1e-6);
                prop_assert!((at[i] - above[i]).abs() < 1e-6);
                prop_assert!((at[i] - moved[i]).abs() < 1e-6);
            }
        }
    }
}
