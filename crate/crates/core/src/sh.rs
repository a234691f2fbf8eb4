//! Real spherical-harmonic view encoding with degree truncation.
//!
//! Orthonormal real basis, Condon–Shortley phase folded into the associated
//! Legendre functions. Components are ordered by degree `l`, then order
//! `m = −l..=l`, so component `l² + l + m` holds `Y_l^m`.

use crate::error::ensure;
use crate::{Result, Scalar, Vec3};

/// Keeps the first `n_trunc` degrees (`n_trunc²` components).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SHTruncation {
    pub n_trunc: usize,
    pub max_degree: usize,
}

impl SHTruncation {
    /// `n_trunc` may equal `max_degree + 1`, which keeps every component.
    pub fn new(n_trunc: usize, max_degree: usize) -> Result<Self> {
        ensure!(
            n_trunc <= max_degree + 1,
            Input,
            "SH truncation {n_trunc} exceeds degree count {}",
            max_degree + 1
        );
        Ok(Self {
            n_trunc,
            max_degree,
        })
    }

    pub fn untruncated(max_degree: usize) -> Self {
        Self {
            n_trunc: max_degree + 1,
            max_degree,
        }
    }

    /// Number of components that pass: `Σ_{j<n} (2j+1) = n²`.
    pub fn kept(&self) -> usize {
        self.n_trunc * self.n_trunc
    }

    /// 0/1 mask over `(max_degree+1)²` components.
    pub fn mask<T: Scalar>(&self) -> Vec<T> {
        (0..sh_len(self.max_degree))
            .map(|i| if i < self.kept() { T::one() } else { T::zero() })
            .collect()
    }
}

pub const fn sh_len(max_degree: usize) -> usize {
    (max_degree + 1) * (max_degree + 1)
}

/// Associated Legendre `P_l^m(x)` for all `0 <= m <= l <= max_degree`,
/// indexed `[l][m]`, with the Condon–Shortley phase.
fn legendre_table<T: Scalar>(x: T, max_degree: usize) -> Vec<Vec<T>> {
    let mut p = vec![vec![T::zero(); max_degree + 1]; max_degree + 1];
    let sin = (T::one() - x * x).max(T::zero()).sqrt();
    p[0][0] = T::one();
    for m in 1..=max_degree {
        // P_m^m = −(2m−1)·sin·P_{m−1}^{m−1}
        p[m][m] = -T::from_usize_lossy(2 * m - 1) * sin * p[m - 1][m - 1];
    }
    for m in 0..max_degree {
        p[m + 1][m] = x * T::from_usize_lossy(2 * m + 1) * p[m][m];
    }
    for m in 0..=max_degree {
        for l in (m + 2)..=max_degree {
            let a = T::from_usize_lossy(2 * l - 1) * x * p[l - 1][m];
            let b = T::from_usize_lossy(l + m - 1) * p[l - 2][m];
            p[l][m] = (a - b) / T::from_usize_lossy(l - m);
        }
    }
    p
}

fn factorial_ratio(l: usize, m: usize) -> f64 {
    // (l−m)! / (l+m)!
    ((l - m + 1)..=(l + m)).fold(1.0, |acc, k| acc / k as f64)
}

/// Real SH basis at a unit direction, without truncation.
pub fn sh_basis<T: Scalar>(dir: Vec3<T>, max_degree: usize) -> Vec<T> {
    let cos_polar = dir.z().max(-T::one()).min(T::one());
    let azimuth = dir.y().atan2(dir.x());
    let p = legendre_table(cos_polar, max_degree);
    let mut out = vec![T::zero(); sh_len(max_degree)];
    let sqrt2 = T::SQRT_2();
    for l in 0..=max_degree {
        let center = l * l + l;
        for m in 0..=l {
            let k = T::lit(((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial_ratio(l, m)).sqrt());
            if m == 0 {
                out[center] = k * p[l][0];
            } else {
                let mf = T::from_usize_lossy(m) * azimuth;
                out[center + m] = sqrt2 * k * mf.cos() * p[l][m];
                out[center - m] = sqrt2 * k * mf.sin() * p[l][m];
            }
        }
    }
    out
}

/// Truncated real SH encoding of a unit view direction.
pub fn sh_encode<T: Scalar>(dir: Vec3<T>, max_degree: usize, trunc: &SHTruncation) -> Result<Vec<T>> {
    let norm = dir.norm();
    ensure!(
        (norm - T::one()).abs() <= T::lit(1e-6),
        Input,
        "view direction must be unit length, got norm {norm}"
    );
    ensure!(
        trunc.max_degree == max_degree,
        Input,
        "truncation built for degree {} used with degree {max_degree}",
        trunc.max_degree
    );
    let mut out = sh_basis(dir, max_degree);
    for v in out.iter_mut().skip(trunc.kept()) {
        *v = T::zero();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit(theta: f64, phi: f64) -> Vec3<f64> {
        Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    #[test]
    fn truncation_counts() {
        let d = unit(0.7, 1.3);
        let t = SHTruncation::new(2, 3).unwrap();
        let v = sh_encode(d, 3, &t).unwrap();
        assert_eq!(v.len(), 16);
        assert!(v[4..].iter().all(|x| *x == 0.0));
        assert!(v[..4].iter().all(|x| *x != 0.0));
        let zero = sh_encode(d, 3, &SHTruncation::new(0, 3).unwrap()).unwrap();
        assert!(zero.iter().all(|x| *x == 0.0));
        assert!(SHTruncation::new(5, 3).is_err());
        assert_eq!(SHTruncation::untruncated(3).kept(), 16);
    }

    #[test]
    fn constant_band() {
        for (th, ph) in [(0.0, 0.0), (1.0, 2.0), (3.0, -1.0)] {
            let v = sh_basis(unit(th, ph), 2);
            assert_relative_eq!(v[0], 0.5 / std::f64::consts::PI.sqrt(), max_relative = 1e-15);
        }
    }

    #[test]
    fn known_low_order_values() {
        // Condon–Shortley real basis: Y_1^{-1} = −c·y, Y_1^0 = c·z, Y_1^1 = −c·x.
        let c = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        let d = unit(0.9, 0.4);
        let v = sh_basis(d, 1);
        assert_relative_eq!(v[1], -c * d.y(), max_relative = 1e-13);
        assert_relative_eq!(v[2], c * d.z(), max_relative = 1e-13);
        assert_relative_eq!(v[3], -c * d.x(), max_relative = 1e-13);
    }

    #[test]
    fn non_unit_rejected() {
        let t = SHTruncation::new(1, 3).unwrap();
        assert!(sh_encode(Vec3::new(1.0, 1.0, 0.0), 3, &t).is_err());
    }

    /// Independent quadrature oracle: midpoint rule over (cos θ, φ).
    #[test]
    fn orthonormal_by_quadrature() {
        let deg = 3;
        let n = sh_len(deg);
        // midpoint in φ is exact for these trigonometric degrees
        let (nu, nphi) = (1000, 32);
        let mut gram = vec![0.0f64; n * n];
        let w = 2.0 / nu as f64 * 2.0 * std::f64::consts::PI / nphi as f64;
        for i in 0..nu {
            let u = -1.0 + (i as f64 + 0.5) * 2.0 / nu as f64;
            let theta = u.acos();
            for j in 0..nphi {
                let phi = (j as f64 + 0.5) * 2.0 * std::f64::consts::PI / nphi as f64;
                let v = sh_basis(unit(theta, phi), deg);
                for a in 0..n {
                    for b in 0..n {
                        gram[a * n + b] += w * v[a] * v[b];
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * n + b] - target).abs() < 1e-4, "gram[{a},{b}] = {}", gram[a * n + b]);
            }
        }
    }

    proptest! {
        #[test]
        fn band_energy_is_rotation_invariant(
            t1 in 0.0f64..std::f64::consts::PI, p1 in -std::f64::consts::PI..std::f64::consts::PI, t2 in 0.0f64..std::f64::consts::PI, p2 in -std::f64::consts::PI..std::f64::consts::PI
        ) {
            let a = sh_basis(unit(t1, p1), 4);
            let b = sh_basis(unit(t2, p2), 4);
            for l in 0..=4usize {
                let ea: f64 = a[l * l..(l + 1) * (l + 1)].iter().map(|x| x * x).sum();
                let eb: f64 = b[l * l..(l + 1) * (l + 1)].iter().map(|x| x * x).sum();
                prop_assert!((ea - eb).abs() < 1e-6);
                prop_assert!((ea - (2 * l + 1) as f64 / (4.0 * std::f64::consts::PI)).abs() < 1e-6);
            }
        }
    }
}
