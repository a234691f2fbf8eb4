//! Frequency-domain masks and their spatial dual.
//!
//! Two low-pass masks over sinusoidal positional encodings live here: the
//! linearly widening coarse-to-fine mask over frequency channels, and the
//! Gaussian attenuation produced by integrating the encoding over an
//! isotropic Gaussian footprint. Shrinking the footprint variance as
//! `σ_f² = 2^(−x)` widens the Gaussian mask by one frequency level every
//! two steps of `x`, which is what [`duality_cutoff_index`] makes testable.
//!
//! The rendering pipeline does not use these encodings (tri-plane features
//! replace coordinate encodings); they back the duality tooling and tests.

use crate::error::ensure;
use crate::{Result, Scalar};

/// Schedule position for the coarse-to-fine frequency mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FreqMaskParams {
    pub t_iter: u64,
    pub t_total: u64,
    pub levels: usize,
}

impl FreqMaskParams {
    pub fn new(t_iter: u64, t_total: u64, levels: usize) -> Result<Self> {
        ensure!(t_total >= 1, Input, "total iterations must be >= 1");
        ensure!(t_iter <= t_total, Input, "t ({t_iter}) exceeds T ({t_total})");
        ensure!(levels >= 1, Input, "frequency level count must be >= 1");
        Ok(Self {
            t_iter,
            t_total,
            levels,
        })
    }
}

/// Coarse-to-fine frequency mask of length `3·L` (1-based index `i`):
/// with `p = t·L/T`, entries up to `3⌊p⌋ + 3` are 1, the next three carry
/// the ramp `p − ⌊p⌋`, the rest are 0. Each frequency level spans three
/// coordinate channels.
pub fn freq_mask<T: Scalar>(params: &FreqMaskParams) -> Vec<T> {
    let len = 3 * params.levels;
    let progress = params.t_iter as f64 * params.levels as f64 / params.t_total as f64;
    let whole = progress.floor();
    let ramp = T::lit(progress - whole);
    let full_end = 3.0 * whole + 3.0;
    (1..=len)
        .map(|i| {
            let i = i as f64;
            if i <= full_end {
                T::one()
            } else if i <= full_end + 3.0 {
                ramp
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Isotropic Gaussian footprint; `sigma_f_sq` is the per-axis variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicGaussian<T> {
    pub mu: [T; 3],
    pub sigma_f_sq: T,
}

impl<T: Scalar> IsotropicGaussian<T> {
    pub fn new(mu: [T; 3], sigma_f_sq: T) -> Result<Self> {
        ensure!(sigma_f_sq >= T::zero(), Input, "variance must be >= 0, got {sigma_f_sq}");
        Ok(Self { mu, sigma_f_sq })
    }

    /// Frequency-domain variance `1/σ_f²`.
    pub fn frequency_variance(&self) -> T {
        T::one() / self.sigma_f_sq
    }
}

/// Attenuation of an integrated encoding: the (sin, cos) pair of level `k`
/// is scaled by `exp(−2^(2k−1)·σ_f²)`.
pub fn ipe_mask<T: Scalar>(sigma_f_sq: T, levels: usize) -> Vec<T> {
    (0..levels)
        .flat_map(|k| {
            let m = (-T::lit(2f64.powi(2 * k as i32 - 1)) * sigma_f_sq).exp();
            [m, m]
        })
        .collect()
}

/// Footprint variance at annealing step `x`: `1 / 2^x`.
pub fn annealed_sigma_f_sq<T: Scalar>(x_step: T) -> T {
    T::one() / T::lit(2.0).powf(x_step)
}

/// Integrated encoding of one coordinate: `[sin 2^k μ, cos 2^k μ]_k` times
/// [`ipe_mask`]. Callers concatenate the three axes.
pub fn ipe_encode<T: Scalar>(mu: T, sigma_f_sq: T, levels: usize) -> Vec<T> {
    let mask = ipe_mask(sigma_f_sq, levels);
    (0..levels)
        .flat_map(|k| {
            let arg = T::lit(2f64.powi(k as i32)) * mu;
            [arg.sin() * mask[2 * k], arg.cos() * mask[2 * k + 1]]
        })
        .collect()
}

/// [`ipe_encode`] over all three axes of a Gaussian, axis-major.
pub fn ipe_encode_gaussian<T: Scalar>(g: &IsotropicGaussian<T>, levels: usize) -> Vec<T> {
    g.mu.iter()
        .flat_map(|&m| ipe_encode(m, g.sigma_f_sq, levels))
        .collect()
}

/// Largest frequency level whose mask entry is still `>= threshold`;
/// `-1` when no level passes.
pub fn duality_cutoff_index<T: Scalar>(sigma_f_sq: T, levels: usize, threshold: T) -> Result<i64> {
    ensure!(
        threshold > T::zero() && threshold < T::one(),
        Input,
        "threshold must be in (0, 1), got {threshold}"
    );
    let mask = ipe_mask(sigma_f_sq, levels);
    Ok((0..levels)
        .rev()
        .find(|&k| mask[2 * k] >= threshold)
        .map_or(-1, |k| k as i64))
}
