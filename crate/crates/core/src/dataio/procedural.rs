//! Analytic scenes of constant-density spheres and boxes.
//!
//! Ground truth comes from exact integration along each ray: primitive
//! entry/exit distances split the ray into segments of constant total
//! density, and each segment contributes `T·(1 − e^(−σΔ))·c̄` where `c̄` is
//! the density-weighted color of the overlapping primitives.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{downsample_avg, Dataset, Image, View};
use crate::error::ensure;
use crate::geometry::{generate_ray, Camera, ConeSample, Ray};
use crate::render::{RadianceSource, ShadedSample};
use crate::{Error, Result, Scalar, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: [f64; 3],
    pub rgb: [f64; 3],
    /// Extinction per world unit.
    pub density: f64,
}

impl Primitive {
    fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match &self.shape {
            Shape::Sphere { radius } => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
            Shape::Box { half_extents } => (0..3).all(|a| d[a].abs() <= half_extents[a]),
        }
    }

    /// Parameter interval `[t_in, t_out]` where `o + t·d` is inside.
    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, f64)> {
        let oc = [o[0] - self.center[0], o[1] - self.center[1], o[2] - self.center[2]];
        match &self.shape {
            Shape::Sphere { radius } => {
                let a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
                let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / a, (-b + s) / a))
            }
            Shape::Box { half_extents } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if oc[a].abs() > half_extents[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (-half_extents[a] - oc[a]) / d[a];
                    let t2 = (half_extents[a] - oc[a]) / d[a];
                    lo = lo.max(t1.min(t2));
                    hi = hi.min(t1.max(t2));
                }
                (lo < hi).then_some((lo, hi))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProceduralScene {
    #[serde(default = "white")]
    pub background: [f64; 3],
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

fn white() -> [f64; 3] {
    [1.0; 3]
}

impl ProceduralScene {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            ensure!(p.density >= 0.0, Input, "primitive {i}: density must be >= 0");
            let ok = match &p.shape {
                Shape::Sphere { radius } => *radius > 0.0,
                Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            };
            ensure!(ok, Input, "primitive {i}: size must be positive");
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        scene.validate()?;
        Ok(scene)
    }

    /// Total density and density-weighted color at a point.
    pub fn medium_at(&self, p: [f64; 3]) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut rgb = [0.0; 3];
        for prim in self.primitives.iter().filter(|q| q.contains(p)) {
            sigma += prim.density;
            for c in 0..3 {
                rgb[c] += prim.density * prim.rgb[c];
            }
        }
        if sigma > 0.0 {
            rgb.iter_mut().for_each(|v| *v /= sigma);
        }
        (sigma, rgb)
    }

    /// Exact radiance and opacity of `o + t·d`, `t ∈ [near, far]`.
    pub fn integrate_ray(&self, o: [f64; 3], d: [f64; 3], near: f64, far: f64) -> ([f64; 3], f64) {
        let d_norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let mut cuts = vec![near, far];
        for p in &self.primitives {
            if let Some((a, b)) = p.intersect(o, d) {
                cuts.extend([a, b].into_iter().filter(|t| *t > near && *t < far));
            }
        }
        cuts.sort_by(f64::total_cmp);
        let mut transmittance = 1.0;
        let mut rgb = [0.0; 3];
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let (sigma, color) = self.medium_at([o[0] + mid * d[0], o[1] + mid * d[1], o[2] + mid * d[2]]);
            if sigma == 0.0 {
                continue;
            }
            let alpha = 1.0 - (-sigma * (b - a) * d_norm).exp();
            for c in 0..3 {
                rgb[c] += transmittance * alpha * color[c];
            }
            transmittance *= 1.0 - alpha;
        }
        for c in 0..3 {
            rgb[c] += transmittance * self.background[c];
        }
        (rgb, 1.0 - transmittance)
    }

    /// Default few-view test scene: a slab with spheres and boxes on it.
    pub fn toy() -> Self {
        let sphere = |r: f64, c: [f64; 3], rgb: [f64; 3]| Primitive {
            shape: Shape::Sphere { radius: r },
            center: c,
            rgb,
            density: 40.0,
        };
        let cube = |h: [f64; 3], c: [f64; 3], rgb: [f64; 3]| Primitive {
            shape: Shape::Box { half_extents: h },
            center: c,
            rgb,
            density: 40.0,
        };
        Self {
            background: [1.0; 3],
            primitives: vec![
                cube([0.85, 0.85, 0.08], [0.0, 0.0, -0.55], [0.55, 0.5, 0.45]),
                sphere(0.38, [0.3, 0.2, -0.1], [0.85, 0.15, 0.1]),
                cube([0.18, 0.22, 0.32], [-0.42, -0.3, -0.15], [0.15, 0.3, 0.85]),
                sphere(0.2, [-0.25, 0.48, -0.27], [0.15, 0.7, 0.2]),
                sphere(0.15, [0.45, -0.45, -0.32], [0.95, 0.8, 0.1]),
                cube([0.06, 0.06, 0.3], [-0.05, -0.05, 0.05], [0.1, 0.1, 0.1]),
            ],
        }
    }
}

/// Ground-truth image and opacity mask for one camera.
pub fn render_procedural_gt<T: Scalar>(scene: &ProceduralScene, camera: &Camera<T>) -> Result<(Image<T>, Vec<T>)> {
    let mut rgb = Vec::with_capacity(3 * camera.pixel_count());
    let mut mask = Vec::with_capacity(camera.pixel_count());
    for py in 0..camera.height {
        for px in 0..camera.width {
            let ray = generate_ray(camera, px, py)?;
            let (c, a) = scene.integrate_ray(
                ray.origin.0.map(|v| v.as_f64()),
                ray.dir.0.map(|v| v.as_f64()),
                camera.near.as_f64(),
                camera.far.as_f64(),
            );
            rgb.extend(c.map(T::lit));
            mask.push(T::lit(a));
        }
    }
    Ok((Image::new(camera.width, camera.height, 3, rgb)?, mask))
}

/// Point-sampled view of the scene, for driving the renderer directly.
impl<T: Scalar> RadianceSource<T> for ProceduralScene {
    fn shade(&self, _ray: &Ray<T>, samples: &[ConeSample<T>], out: &mut Vec<ShadedSample<T>>) -> Result<()> {
        out.clear();
        out.extend(samples.iter().map(|s| {
            let (sigma, rgb) = self.medium_at(s.center.0.map(|v| v.as_f64()));
            ShadedSample {
                t: s.t,
                density: T::lit(sigma),
                rgb: rgb.map(T::lit),
            }
        }));
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub image_size: u32,
    pub camera_angle_x: f64,
    pub radius: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub train_views: usize,
    pub test_views: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            camera_angle_x: 0.6911112070083618,
            radius: 4.0,
            min_elevation_deg: 15.0,
            max_elevation_deg: 60.0,
            train_views: 100,
            test_views: 200,
        }
    }
}

/// Deterministic golden-angle spiral of cameras looking at the origin.
pub fn orbit_cameras<T: Scalar>(rig: &RigConfig, count: usize, size: u32, phase: f64, near: f64, far: f64) -> Result<Vec<Camera<T>>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let focal = Camera::<T>::focal_from_angle_x(size, T::lit(rig.camera_angle_x));
    (0..count)
        .map(|k| {
            let azimuth = phase + golden * k as f64;
            let frac = ((k as f64 + 0.5) / count as f64 * 7.0).fract();
            let elev = (rig.min_elevation_deg + frac * (rig.max_elevation_deg - rig.min_elevation_deg)).to_radians();
            let eye = Vec3::new(
                T::lit(rig.radius * elev.cos() * azimuth.cos()),
                T::lit(rig.radius * elev.cos() * azimuth.sin()),
                T::lit(rig.radius * elev.sin()),
            );
            Camera::look_at(
                size,
                size,
                focal,
                eye,
                Vec3::zero(),
                Vec3::new(T::zero(), T::zero(), T::one()),
                T::lit(near),
                T::lit(far),
            )
        })
        .collect()
}

fn render_views<T: Scalar>(scene: &ProceduralScene, cameras: Vec<Camera<T>>, factor: u32) -> Result<Vec<View<T>>> {
    use rayon::prelude::*;
    cameras
        .into_par_iter()
        .map(|cam| {
            let (hi, _) = render_procedural_gt(scene, &cam)?;
            Ok(View {
                camera: cam.downscaled(factor),
                image: downsample_avg(&hi, factor)?,
            })
        })
        .collect()
}

/// Renders train/test splits at `image_size·factor` and average-downsamples
/// by `factor`, mirroring how captured datasets are prepared.
pub fn procedural_dataset<T: Scalar>(
    scene: &ProceduralScene,
    rig: &RigConfig,
    factor: u32,
    near: f64,
    far: f64,
) -> Result<Dataset<T>> {
    scene.validate()?;
    ensure!(factor >= 1, Input, "downsample factor must be >= 1");
    let size = rig.image_size * factor;
    let train = orbit_cameras(rig, rig.train_views, size, 0.0, near, far)?;
    let test = orbit_cameras(rig, rig.test_views, size, 0.37, near, far)?;
    Ok(Dataset {
        name: "procedural".into(),
        train: render_views(scene, train, factor)?,
        val: Vec::new(),
        test: render_views(scene, test, factor)?,
    })
}
