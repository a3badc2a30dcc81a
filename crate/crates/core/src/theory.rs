//! Randomized numeric certification of two divergence lower bounds:
//!
//! - the Pinsker chain `JSD(p, q) >= ||p - q||_1^2 / 8 >= ||p - q||_2^2 / 8`
//! - the logit bound `JSD(p, q) >= kappa^2 / 8 * ||Pi (z - z')||_2^2`, where
//!   `p = softmax(z)`, `q = softmax(z')`, `Pi` removes the all-ones direction and
//!   `kappa` is the smallest curvature proxy along the segment from `z'` to `z`
//!
//! `kappa` is approximated by a grid minimum over the segment. The grid starts
//! at 200 points and is refined (doubling the interval count) until the
//! estimate moves by less than [`KAPPA_TOLERANCE`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{stream_rng, uniform, unit_f64};
use crate::signal::{jsd_aligned, softmax_jacobian_min_eigenvalue};

pub const INITIAL_GRID: usize = 200;
pub const KAPPA_TOLERANCE: f64 = 1e-6;
const MAX_REFINEMENTS: usize = 10;
/// Absolute slack allowed before a trial counts as a violation.
pub const VIOLATION_TOLERANCE: f64 = 1e-9;
pub const LOGIT_RANGE: f64 = 5.0;

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Squared norm of `v` after removing its mean.
pub fn projected_norm_sq(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - mean).powi(2)).sum()
}

fn kappa_on_grid(z: &[f64], z_prev: &[f64], intervals: usize) -> f64 {
    let mut point = vec![0.0; z.len()];
    (0..=intervals)
        .map(|i| {
            let s = i as f64 / intervals as f64;
            for ((p, a), b) in point.iter_mut().zip(z).zip(z_prev) {
                *p = b + s * (a - b);
            }
            softmax_jacobian_min_eigenvalue(&softmax(&point))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Grid estimate of the minimum curvature along `z_prev + s (z - z_prev)`.
pub fn trajectory_kappa(z: &[f64], z_prev: &[f64]) -> f64 {
    let mut intervals = INITIAL_GRID - 1;
    let mut kappa = kappa_on_grid(z, z_prev, intervals);
    for _ in 0..MAX_REFINEMENTS {
        intervals *= 2;
        let refined = kappa_on_grid(z, z_prev, intervals);
        let moved = (kappa - refined).abs();
        kappa = refined.min(kappa);
        if moved < KAPPA_TOLERANCE {
            break;
        }
    }
    kappa
}

/// Both sides of the logit bound for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub jsd: f64,
    pub kappa: f64,
    pub bound: f64,
    pub slack: f64,
}

pub fn check_logit_bound(z: &[f64], z_prev: &[f64]) -> LemmaCheck {
    assert_eq!(z.len(), z_prev.len());
    let p = softmax(z);
    let q = softmax(z_prev);
    let jsd = jsd_aligned(&p, &q);
    let kappa = trajectory_kappa(z, z_prev);
    let diff: Vec<f64> = z.iter().zip(z_prev).map(|(a, b)| a - b).collect();
    let bound = kappa * kappa / 8.0 * projected_norm_sq(&diff);
    LemmaCheck {
        jsd,
        kappa,
        bound,
        slack: jsd - bound,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub trials: usize,
    pub dim: usize,
    pub seed: u64,
    pub violations: usize,
    pub min_slack: f64,
    pub min_kappa: f64,
    pub max_kappa: f64,
}

fn check_args(trials: usize, dim: usize) -> Result<()> {
    if trials < 1 {
        return Err(Error::InvalidArgument("trials ≥ 1".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidArgument("dim ≥ 2".into()));
    }
    Ok(())
}

/// Logits uniform in `[-5, 5]^dim`, trial `i` on stream `(seed, i)`.
pub fn verify_lemma_jsd(trials: usize, dim: usize, seed: u64) -> Result<LemmaReport> {
    check_args(trials, dim)?;
    let checks: Vec<LemmaCheck> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let z: Vec<f64> = (0..dim).map(|_| uniform(&mut rng, -LOGIT_RANGE, LOGIT_RANGE)).collect();
            let z_prev: Vec<f64> = (0..dim).map(|_| uniform(&mut rng, -LOGIT_RANGE, LOGIT_RANGE)).collect();
            check_logit_bound(&z, &z_prev)
        })
        .collect();
    Ok(LemmaReport {
        trials,
        dim,
        seed,
        violations: checks.iter().filter(|c| c.slack < -VIOLATION_TOLERANCE).count(),
        min_slack: checks.iter().map(|c| c.slack).fold(f64::INFINITY, f64::min),
        min_kappa: checks.iter().map(|c| c.kappa).fold(f64::INFINITY, f64::min),
        max_kappa: checks.iter().map(|c| c.kappa).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerCheck {
    pub jsd: f64,
    pub l1_bound: f64,
    pub l2_bound: f64,
}

impl PinskerCheck {
    /// `JSD - ||p - q||_1^2 / 8`
    pub fn l1_slack(&self) -> f64 {
        self.jsd - self.l1_bound
    }

    /// `||p - q||_1^2 / 8 - ||p - q||_2^2 / 8`
    pub fn l2_slack(&self) -> f64 {
        self.l1_bound - self.l2_bound
    }
}

pub fn check_pinsker(p: &[f64], q: &[f64]) -> PinskerCheck {
    let l1: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    let l2_sq: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
    PinskerCheck {
        jsd: jsd_aligned(p, q),
        l1_bound: l1 * l1 / 8.0,
        l2_bound: l2_sq / 8.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinskerReport {
    pub trials: usize,
    pub dim: usize,
    pub seed: u64,
    pub violations_l1: usize,
    pub violations_l2: usize,
    pub min_slack_l1: f64,
    pub min_slack_l2: f64,
}

impl PinskerReport {
    pub fn violations(&self) -> usize {
        self.violations_l1 + self.violations_l2
    }
}

/// Random simplex point: flat Dirichlet, with a random subset of coordinates
/// zeroed out about a third of the time so sparse and disjoint supports occur.
fn random_simplex<R: rand_core::RngCore>(rng: &mut R, dim: usize) -> Vec<f64> {
    let sparse = unit_f64(rng) < 1.0 / 3.0;
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            let e = -(1.0 - unit_f64(rng)).ln();
            if sparse && unit_f64(rng) < 0.5 {
                0.0
            } else {
                e
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        let i = (unit_f64(rng) * dim as f64) as usize % dim;
        v[i] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

pub fn verify_pinsker_chain(trials: usize, dim: usize, seed: u64) -> Result<PinskerReport> {
    check_args(trials, dim)?;
    let checks: Vec<PinskerCheck> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let p = random_simplex(&mut rng, dim);
            let q = random_simplex(&mut rng, dim);
            check_pinsker(&p, &q)
        })
        .collect();
    Ok(PinskerReport {
        trials,
        dim,
        seed,
        violations_l1: checks.iter().filter(|c| c.l1_slack() < -VIOLATION_TOLERANCE).count(),
        violations_l2: checks.iter().filter(|c| c.l2_slack() < -VIOLATION_TOLERANCE).count(),
        min_slack_l1: checks.iter().map(PinskerCheck::l1_slack).fold(f64::INFINITY, f64::min),
        min_slack_l2: checks.iter().map(PinskerCheck::l2_slack).fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn identical_logits_have_zero_slack() {
        let z = [0.3, -1.2, 2.0, 0.0];
        let c = check_logit_bound(&z, &z);
        assert_eq!(c.jsd, 0.0);
        assert_eq!(c.bound, 0.0);
        assert_eq!(c.slack, 0.0);
    }

    #[test]
    fn shifted_logits_are_identical_distributions() {
        let z = [0.3, -1.2, 2.0];
        let shifted: Vec<f64> = z.iter().map(|x| x + 4.0).collect();
        let c = check_logit_bound(&z, &shifted);
        assert!(c.jsd < 1e-15 && c.bound < 1e-20);
    }

    #[test]
    fn near_one_hot_is_vacuous() {
        let z = [20.0, 0.0, 0.0];
        let z_prev = [0.0, 20.0, 0.0];
        let c = check_logit_bound(&z, &z_prev);
        assert!(c.kappa < 1e-6, "{}", c.kappa);
        assert!(c.slack >= 0.0);
    }

    #[test]
    fn disjoint_point_masses() {
        let c = check_pinsker(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((c.jsd - LN_2).abs() < 1e-15);
        assert_eq!(c.l1_bound, 0.5);
        assert!(c.l1_slack() > 0.0 && c.l2_slack() > 0.0);
        let same = check_pinsker(&[0.2, 0.8], &[0.2, 0.8]);
        assert_eq!((same.jsd, same.l1_bound, same.l2_bound), (0.0, 0.0, 0.0));
    }

    #[test]
    fn small_runs_have_no_violations() {
        assert_eq!(verify_lemma_jsd(200, 5, 1).unwrap().violations, 0);
        assert_eq!(verify_pinsker_chain(500, 6, 1).unwrap().violations(), 0);
    }

    #[test]
    fn zero_trials_is_an_error() {
        let e = verify_lemma_jsd(0, 3, 0).unwrap_err();
        assert!(e.to_string().contains("trials ≥ 1"));
        assert!(verify_pinsker_chain(10, 1, 0).is_err());
    }
}
