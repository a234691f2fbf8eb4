//! Spatial annealing of the pre-filtering footprint.
//!
//! Early in training the sample sphere is inflated by `f_s`, which pushes
//! tri-plane queries to coarser mip levels. The inflation halves every
//! `1/ϑ` annealing steps (`N_split` steps spread over `T_stop` iterations)
//! and vanishes at `T_stop`:
//!
//! ```text
//! x   = ⌊i·N_split / T_stop⌋
//! r_i = τ + f_s / 2^(ϑ·x)     (i < T_stop),   τ otherwise
//! l_i = log2((τ·2^(ϑx) + f_s) / (r̈·2^(ϑx)))
//! ```
//!
//! Only the radius handed to the level query changes; ray sampling and the
//! cone geometry are untouched.

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::sh::SHTruncation;
use crate::{Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealSchedule {
    pub enabled: bool,
    /// Initial sphere inflation, world units.
    pub f_s: f64,
    /// Decay rate of the inflation per annealing step.
    pub theta: f64,
    pub n_split: u64,
    pub t_stop: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            enabled: true,
            f_s: 0.15,
            theta: 0.2,
            n_split: 30,
            t_stop: 2000,
        }
    }
}

impl AnnealSchedule {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.f_s >= 0.0 && self.f_s.is_finite(), Input, "anneal.f_s must be >= 0");
        ensure!(self.theta > 0.0 && self.theta.is_finite(), Input, "anneal.theta must be > 0");
        ensure!(self.n_split >= 1, Input, "anneal.n_split must be >= 1");
        ensure!(self.t_stop >= 1, Input, "anneal.t_stop must be >= 1");
        Ok(())
    }

    fn active(&self, i: u64) -> bool {
        self.enabled && i < self.t_stop
    }
}

/// `⌊i·N_split / T_stop⌋`.
pub fn step_index(i: u64, sched: &AnnealSchedule) -> u64 {
    (i as u128 * sched.n_split as u128 / sched.t_stop as u128) as u64
}

fn decay_factor<T: Scalar>(i: u64, sched: &AnnealSchedule) -> T {
    T::lit(2.0).powf(T::lit(sched.theta * step_index(i, sched) as f64))
}

/// Annealed sphere radius at iteration `i`.
pub fn annealed_radius<T: Scalar>(i: u64, tau: T, sched: &AnnealSchedule) -> T {
    if !sched.active(i) {
        return tau;
    }
    tau + T::lit(sched.f_s) / decay_factor::<T>(i, sched)
}

/// Unclamped query level for the annealed radius. Identical to
/// `log2(τ/r̈)` whenever the schedule is inactive.
pub fn annealed_level<T: Scalar>(i: u64, tau: T, base_radius: T, sched: &AnnealSchedule) -> T {
    if !sched.active(i) {
        return (tau / base_radius).log2();
    }
    let scale = decay_factor::<T>(i, sched);
    ((tau * scale + T::lit(sched.f_s)) / (base_radius * scale)).log2()
}

/// How a pipeline turns a cone sphere into a mip level and which SH
/// components it feeds the decoder.
pub trait FootprintPolicy<T: Scalar>: Sync {
    /// Unclamped level for sphere radius `tau` at iteration `iter`.
    fn level(&self, iter: u64, tau: T, base_radius: T) -> T;

    fn sh_truncation(&self, max_degree: usize) -> SHTruncation;

    /// Radius actually used for the footprint; logging only.
    fn radius(&self, iter: u64, tau: T) -> T;
}

/// The unregularized pipeline: plain level query, full SH. Contains no
/// annealing code path at all.
#[derive(Clone, Copy, Debug, Default)]
pub struct BaseFootprint;

impl<T: Scalar> FootprintPolicy<T> for BaseFootprint {
    fn level(&self, _iter: u64, tau: T, base_radius: T) -> T {
        (tau / base_radius).log2()
    }

    fn sh_truncation(&self, max_degree: usize) -> SHTruncation {
        SHTruncation::untruncated(max_degree)
    }

    fn radius(&self, _iter: u64, tau: T) -> T {
        tau
    }
}

/// Annealed footprint plus SH degree truncation.
#[derive(Clone, Copy, Debug)]
pub struct AnnealedFootprint {
    pub schedule: AnnealSchedule,
    /// Degrees kept; `None` keeps all.
    pub sh_degrees: Option<usize>,
}

impl<T: Scalar> FootprintPolicy<T> for AnnealedFootprint {
    fn level(&self, iter: u64, tau: T, base_radius: T) -> T {
        annealed_level(iter, tau, base_radius, &self.schedule)
    }

    fn sh_truncation(&self, max_degree: usize) -> SHTruncation {
        match self.sh_degrees {
            Some(n) => SHTruncation {
                n_trunc: n.min(max_degree + 1),
                max_degree,
            },
            None => SHTruncation::untruncated(max_degree),
        }
    }

    fn radius(&self, iter: u64, tau: T) -> T {
        annealed_radius(iter, tau, &self.schedule)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn step_index_examples() {
        let s = AnnealSchedule::default();
        assert_eq!(step_index(0, &s), 0);
        assert_eq!(step_index(s.t_stop - 1, &s), 29);
        assert_eq!(step_index(1000, &s), 15);
    }

    #[test]
    fn radius_examples() {
        let s = AnnealSchedule::default();
        assert_eq!(annealed_radius(0, 0.01f64, &s), 0.01 + 0.15);
        assert_relative_eq!(annealed_radius(1000, 0.01f64, &s), 0.02875, max_relative = 1e-14);
        assert_eq!(annealed_radius(2000, 0.01f64, &s), 0.01);
        assert_eq!(annealed_radius(5000, 0.01f64, &s), 0.01);
        assert_eq!(annealed_radius(0, 0.01f64, &AnnealSchedule::disabled()), 0.01);
    }

    #[test]
    fn level_examples() {
        let s = AnnealSchedule::default();
        assert_relative_eq!(annealed_level(0, 0.01f64, 0.01, &s), 4.0, epsilon = 1e-12);
        let flat = AnnealSchedule { f_s: 0.0, ..s };
        assert_relative_eq!(annealed_level(700, 0.03f64, 0.01, &flat), (3.0f64).log2(), epsilon = 1e-14);
    }

    #[test]
    fn validation() {
        assert!(AnnealSchedule::default().validate().is_ok());
        assert!(AnnealSchedule { theta: 0.0, ..Default::default() }.validate().is_err());
        assert!(AnnealSchedule { n_split: 0, ..Default::default() }.validate().is_err());
        assert!(AnnealSchedule { f_s: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn final_gap_versus_theta() {
        let gap = |theta: f64, n: u64| 0.15 / 2f64.powf(theta * (n - 1) as f64);
        // Fixed N_split: faster decay leaves a smaller final gap.
        for w in [0.05, 0.1, 0.2, 0.35].windows(2) {
            assert!(gap(w[1], 30) < gap(w[0], 30));
        }
        // Fixed ϑ·N_split = 6: the gap f_s·2^(ϑ−6) grows with ϑ.
        let pairs = [(0.1, 60), (0.2, 30), (0.3, 20), (0.6, 10)];
        for w in pairs.windows(2) {
            assert!(gap(w[1].0, w[1].1) > gap(w[0].0, w[0].1));
        }
    }

    #[test]
    fn disabled_policy_matches_base_bitwise() {
        let anneal = AnnealedFootprint {
            schedule: AnnealSchedule::disabled(),
            sh_degrees: None,
        };
        for i in [0u64, 10, 1999, 3000] {
            for tau in [1e-4f64, 0.013, 0.7] {
                let a = FootprintPolicy::<f64>::level(&anneal, i, tau, 0.0117);
                let b = FootprintPolicy::<f64>::level(&BaseFootprint, i, tau, 0.0117);
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    proptest! {
        #[test]
        fn radius_nonincreasing_and_terminates(
            tau in 1e-4f64..1.0, f_s in 0.0f64..0.5, theta in 0.01f64..1.0,
            n_split in 1u64..60, t_stop in 1u64..4000, a in 0u64..5000, b in 0u64..5000
        ) {
            let s = AnnealSchedule { enabled: true, f_s, theta, n_split, t_stop };
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(annealed_radius(hi, tau, &s) <= annealed_radius(lo, tau, &s));
            prop_assert_eq!(annealed_radius(t_stop + a, tau, &s), tau);
        }

        #[test]
        fn level_is_log_of_radius(
            i in 0u64..5000, tau in 1e-4f64..1.0, base in 1e-3f64..0.1, f_s in 0.0f64..0.5,
            theta in 0.01f64..1.0, n_split in 1u64..60, t_stop in 1u64..4000
        ) {
            let s = AnnealSchedule { enabled: true, f_s, theta, n_split, t_stop };
            let direct = annealed_level(i, tau, base, &s);
            let via_radius = (annealed_radius(i, tau, &s) / base).log2();
            prop_assert!((direct - via_radius).abs() <= 1e-12);
        }
    }
}
