//! Pinhole cameras, per-pixel rays and the cone-footprint sphere radius.
//!
//! Rays follow the NeRF convention: the camera looks down its local −z axis
//! with +y up, and the emitted direction `d` has unit component along the
//! optical axis. The sample parameter `t` is therefore depth along the
//! optical axis, `x = o + t·d`, and `‖x − o‖ = t·‖d‖`. In these units the
//! image plane sits at distance 1, so the focal length entering the cone
//! formula is 1 and the pixel footprint on the image plane is `1/focal_px`.
//! The cone formula is jointly scale-invariant in (d, f, ṙ), so this is the
//! same radius one gets from pixel units.

use rand::Rng;

use crate::error::ensure;
use crate::rng::rng_for;
use crate::{Result, Scalar, Vec3};

/// Pinhole camera with a rigid camera-to-world transform.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub width: u32,
    pub height: u32,
    /// Focal length in pixels.
    pub focal: T,
    pub cam_to_world: [[T; 4]; 4],
    pub near: T,
    pub far: T,
}

impl<T: Scalar> Camera<T> {
    pub fn new(
        width: u32,
        height: u32,
        focal: T,
        cam_to_world: [[T; 4]; 4],
        near: T,
        far: T,
    ) -> Result<Self> {
        ensure!(width >= 1 && height >= 1, Input, "camera size {width}x{height}");
        ensure!(focal > T::zero() && focal.is_finite(), Input, "focal must be positive, got {focal}");
        ensure!(near < far, Input, "near ({near}) must be < far ({far})");
        let cam = Self {
            width,
            height,
            focal,
            cam_to_world,
            near,
            far,
        };
        ensure!(
            cam_to_world.iter().flatten().all(|v| v.is_finite()),
            Input,
            "non-finite camera transform"
        );
        ensure!(
            cam.rotation_error() <= T::lit(1e-6),
            Input,
            "camera rotation is not orthonormal (error {})",
            cam.rotation_error()
        );
        Ok(cam)
    }

    /// Focal from the horizontal field of view, `0.5·W / tan(0.5·angle_x)`.
    pub fn focal_from_angle_x(width: u32, camera_angle_x: T) -> T {
        T::lit(0.5) * T::from_u32(width).unwrap() / (T::lit(0.5) * camera_angle_x).tan()
    }

    /// Builds a camera at `eye` looking at `target`.
    pub fn look_at(
        width: u32,
        height: u32,
        focal: T,
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        near: T,
        far: T,
    ) -> Result<Self> {
        let back = (eye - target).normalized();
        let right = up.cross(&back).normalized();
        let cam_up = back.cross(&right);
        let mut m = [[T::zero(); 4]; 4];
        for r in 0..3 {
            m[r][0] = right[r];
            m[r][1] = cam_up[r];
            m[r][2] = back[r];
            m[r][3] = eye[r];
        }
        m[3][3] = T::one();
        Self::new(width, height, focal, m, near, far)
    }

    pub fn position(&self) -> Vec3<T> {
        let m = &self.cam_to_world;
        Vec3::new(m[0][3], m[1][3], m[2][3])
    }

    /// Max deviation of `RᵀR` from the identity.
    pub fn rotation_error(&self) -> T {
        let m = &self.cam_to_world;
        let mut err = T::zero();
        for a in 0..3 {
            for b in 0..3 {
                let dot = (0..3).map(|r| m[r][a] * m[r][b]).sum::<T>();
                let target = if a == b { T::one() } else { T::zero() };
                err = err.max((dot - target).abs());
            }
        }
        err
    }

    /// Rotates a camera-frame vector into world space.
    pub fn rotate(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.cam_to_world;
        Vec3::new(
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        )
    }

    /// Focal length in the units of emitted ray directions.
    pub fn ray_focal(&self) -> T {
        T::one()
    }

    /// Same pose, resolution divided by `factor` (used after downsampling).
    pub fn downscaled(&self, factor: u32) -> Self {
        let f = T::from_u32(factor).unwrap();
        Self {
            width: self.width / factor,
            height: self.height / factor,
            focal: self.focal / f,
            ..self.clone()
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// A camera ray carrying its pixel footprint.
#[derive(Clone, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    /// Unnormalized; unit component along the optical axis.
    pub dir: Vec3<T>,
    /// Radius of the disc with the pixel's area, `sqrt(Δx·Δy/π)`.
    pub disc_radius: T,
    pub pixel_dx_dy: (T, T),
}

/// A sphere inscribed in the pixel cone at depth `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeSample<T> {
    pub t: T,
    pub center: Vec3<T>,
    pub tau: T,
}

pub fn generate_ray<T: Scalar>(camera: &Camera<T>, px: u32, py: u32) -> Result<Ray<T>> {
    ensure!(
        px < camera.width && py < camera.height,
        Input,
        "pixel ({px}, {py}) outside {}x{} camera",
        camera.width,
        camera.height
    );
    let half = T::lit(0.5);
    let u = (T::from_u32(px).unwrap() + half - T::from_u32(camera.width).unwrap() * half) / camera.focal;
    let v = (T::from_u32(py).unwrap() + half - T::from_u32(camera.height).unwrap() * half) / camera.focal;
    let dir = camera.rotate(Vec3::new(u, -v, -T::one()));
    let dx = camera.ray_focal() / camera.focal;
    let dy = dx;
    Ok(Ray {
        origin: camera.position(),
        dir,
        disc_radius: (dx * dy / T::PI()).sqrt(),
        pixel_dx_dy: (dx, dy),
    })
}

/// Radius of the sphere inscribed in the pixel cone at parameter `t`:
///
/// `τ = ‖x−o‖·f·ṙ / (‖d‖·sqrt((sqrt(‖d‖²−f²) − ṙ)² + f²))`, `‖x−o‖ = t·‖d‖`.
pub fn cone_sphere_radius<T: Scalar>(ray: &Ray<T>, t: T, focal: T) -> Result<T> {
    ensure!(t > T::zero(), Input, "sample distance must be positive, got {t}");
    let d_norm_sq = ray.dir.norm_sq();
    let f_sq = focal * focal;
    let off_axis_sq = d_norm_sq - f_sq;
    if off_axis_sq < -T::lit(1e-12) * f_sq.max(d_norm_sq) || !off_axis_sq.is_finite() {
        return Err(crate::Error::Geometry(format!(
            "‖d‖² ({d_norm_sq}) must exceed f² ({f_sq})"
        )));
    }
    let off_axis = off_axis_sq.max(T::zero()).sqrt();
    let d_norm = d_norm_sq.sqrt();
    let r = ray.disc_radius;
    let dist = t * d_norm;
    let denom = d_norm * ((off_axis - r) * (off_axis - r) + f_sq).sqrt();
    Ok(dist * focal * r / denom)
}

/// Samples `n` cone spheres in `[near, far]`, one per equal-width bin.
///
/// Stratified mode jitters each bin uniformly from an RNG seeded by
/// `rng_seed`; otherwise samples sit at bin midpoints.
pub fn sample_cone<T: Scalar>(
    ray: &Ray<T>,
    camera: &Camera<T>,
    n_samples: usize,
    stratified: bool,
    rng_seed: u64,
) -> Result<Vec<ConeSample<T>>> {
    ensure!(n_samples >= 1, Input, "n_samples must be >= 1");
    let mut rng = rng_for(rng_seed, &[]);
    let span = camera.far - camera.near;
    let bin = span / T::from_usize_lossy(n_samples);
    let focal = camera.ray_focal();
    (0..n_samples)
        .map(|k| {
            let jitter = if stratified {
                T::lit(rng.gen::<f64>())
            } else {
                T::lit(0.5)
            };
            let t = (camera.near + (T::from_usize_lossy(k) + jitter) * bin).min(camera.far);
            let tau = cone_sphere_radius(ray, t, focal)?;
            Ok(ConeSample {
                t,
                center: ray.origin + ray.dir * t,
                tau,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn identity() -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        m
    }

    fn cam(w: u32, h: u32) -> Camera<f64> {
        let mut m = identity();
        m[2][3] = 4.0;
        Camera::new(w, h, 50.0, m, 2.0, 6.0).unwrap()
    }

    #[test]
    fn center_pixel_is_on_axis() {
        let c = cam(5, 5);
        let ray = generate_ray(&c, 2, 2).unwrap();
        assert_eq!(ray.dir.0, [0.0, 0.0, -1.0]);
        assert_eq!(ray.origin.0, [0.0, 0.0, 4.0]);
        // ‖d‖ = f exactly on axis: still a valid cone.
        let tau = cone_sphere_radius(&ray, 3.0, c.ray_focal()).unwrap();
        assert!(tau > 0.0);
    }

    #[test]
    fn square_pixel_disc_radius() {
        let ray = generate_ray(&cam(8, 8), 1, 6).unwrap();
        let (dx, dy) = ray.pixel_dx_dy;
        assert_eq!(dx, dy);
        assert_relative_eq!(ray.disc_radius, dx / std::f64::consts::PI.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(ray.disc_radius.powi(2) * std::f64::consts::PI, dx * dy, max_relative = 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_rejected() {
        assert!(matches!(generate_ray(&cam(4, 4), 4, 0), Err(crate::Error::Input(_))));
    }

    #[test]
    fn invalid_cameras_rejected() {
        assert!(Camera::new(0, 4, 1.0, identity(), 2.0, 6.0).is_err());
        assert!(Camera::new(4, 4, -1.0, identity(), 2.0, 6.0).is_err());
        assert!(Camera::new(4, 4, 1.0, identity(), 6.0, 2.0).is_err());
        let mut skew = identity();
        skew[0][1] = 0.1;
        assert!(Camera::new(4, 4, 1.0, skew, 2.0, 6.0).is_err());
    }

    #[test]
    fn tau_degenerate_cases() {
        let mut ray = generate_ray(&cam(8, 8), 0, 0).unwrap();
        assert!(cone_sphere_radius(&ray, 0.0, 1.0).is_err());
        assert!(matches!(
            cone_sphere_radius(&ray, 1.0, 10.0),
            Err(crate::Error::Geometry(_))
        ));
        ray.disc_radius = 0.0;
        assert_eq!(cone_sphere_radius(&ray, 3.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_unstratified_sample_at_midpoint() {
        let c = cam(4, 4);
        let ray = generate_ray(&c, 1, 1).unwrap();
        let s = sample_cone(&ray, &c, 1, false, 7).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].t, 4.0);
        assert!(sample_cone(&ray, &c, 0, false, 7).is_err());
    }

    #[test]
    fn look_at_points_at_target() {
        let c = Camera::<f64>::look_at(
            9,
            9,
            20.0,
            Vec3::new(3.0, 1.0, 2.0),
            Vec3::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            1.0,
            6.0,
        )
        .unwrap();
        let ray = generate_ray(&c, 4, 4).unwrap();
        let to_target = (-c.position()).normalized();
        assert_relative_eq!(ray.dir.normalized().dot(&to_target), 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn tau_monotone_and_linear(
            px in 0u32..16, py in 0u32..16, t in 0.1f64..10.0, scale in 1.0f64..3.0
        ) {
            let c = cam(16, 16);
            let ray = generate_ray(&c, px, py).unwrap();
            let tau = cone_sphere_radius(&ray, t, 1.0).unwrap();
            let tau2 = cone_sphere_radius(&ray, 2.0 * t, 1.0).unwrap();
            prop_assert!((tau2 - 2.0 * tau).abs() <= 1e-12 * tau2);
            prop_assert!(cone_sphere_radius(&ray, t * scale + 1e-3, 1.0).unwrap() > tau);
            let mut wider = ray.clone();
            wider.disc_radius *= scale + 1e-3;
            prop_assert!(cone_sphere_radius(&wider, t, 1.0).unwrap() > tau);
        }

        #[test]
        fn stratified_samples_sorted_in_range(px in 0u32..16, n in 1usize..64, seed in any::<u64>()) {
            let c = cam(16, 16);
            let ray = generate_ray(&c, px, 3).unwrap();
            let s = sample_cone(&ray, &c, n, true, seed).unwrap();
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.windows(2).all(|w| w[0].t < w[1].t));
            prop_assert!(s.iter().all(|x| x.t >= c.near && x.t <= c.far && x.tau > 0.0));
            prop_assert_eq!(s, sample_cone(&ray, &c, n, true, seed).unwrap());
        }
    }
}
