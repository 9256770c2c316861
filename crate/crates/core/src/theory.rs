//! Executable forms of the structural results about KL-prior attention:
//! collapse to the prior, sink margins and context sensitivity, the
//! max-entropy recency prior, lag/key bias equivalence under causal masking
//! and the rank of key-only priors.

use alloc::vec;
use alloc::vec::Vec;

// Float math for concrete f64 when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

use crate::eot::{kl_prior_attention, softmax_in_place, ProbVector, TransportProblem};
use crate::error::check_len;
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Elementwise bound check `pi e^{-omega} <= p <= pi e^{omega}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    /// Dynamic range `max s - min s` of the content scores.
    pub omega: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub posterior: ProbVector,
    /// Whether every entry is inside its bounds, up to [`BOUND_SLACK`].
    pub holds: bool,
    /// Largest amount by which an entry leaves its bound (0 when inside).
    pub max_violation: f64,
}

/// Relative slack for bound comparisons; covers the rounding of `exp`,
/// `ln` and the softmax normalization, which makes the bounds collide
/// with the posterior at `omega = 0`.
pub const BOUND_SLACK: f64 = 1e-13;

/// Posterior at `tau = 1` together with its collapse bounds.
pub fn collapse_bounds(scores: &[f64], prior: &ProbVector) -> Result<CollapseReport> {
    let problem = TransportProblem::new(scores.to_vec(), prior.clone(), 1.0)?;
    let posterior = kl_prior_attention(&problem);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let omega = max - min;
    let (down, up) = ((-omega).exp(), omega.exp());
    let lower: Vec<f64> = prior.as_slice().iter().map(|p| p * down).collect();
    let upper: Vec<f64> = prior.as_slice().iter().map(|p| p * up).collect();
    let mut max_violation = 0.0f64;
    let mut holds = true;
    for ((&p, &lo), &hi) in posterior.as_slice().iter().zip(&lower).zip(&upper) {
        let excess = f64::max(lo - p, p - hi).max(0.0);
        max_violation = max_violation.max(excess);
        if p < lo * (1.0 - BOUND_SLACK) || p > hi * (1.0 + BOUND_SLACK) {
            holds = false;
        }
    }
    Ok(CollapseReport {
        omega,
        lower,
        upper,
        posterior,
        holds,
        max_violation,
    })
}

/// `min_{k != j*} (z_{j*} - z_k)`; positive iff `j*` strictly dominates.
pub fn sink_margin(logits: &[f64], j_star: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::domain("sink margin needs at least two keys"));
    }
    if j_star >= logits.len() {
        return Err(Error::domain("sink index out of range"));
    }
    let top = logits[j_star];
    Ok(logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j_star)
        .map(|(_, &z)| top - z)
        .fold(f64::INFINITY, f64::min))
}

/// Mass floor implied by a positive margin: `1 / (1 + (L - 1) e^{-m})`.
pub fn margin_mass_floor(len: usize, margin: f64) -> f64 {
    1.0 / (1.0 + (len as f64 - 1.0) * (-margin).exp())
}

/// Total context sensitivity `1 - p_{j*}`.
pub fn context_sensitivity(weights_row: &ProbVector, j_star: usize) -> Result<f64> {
    if j_star >= weights_row.len() {
        return Err(Error::domain("sink index out of range"));
    }
    Ok(1.0 - weights_row[j_star])
}

/// Sensitivity computed straight from logits as
/// `sum_{k != j*} w_k / sum_k w_k` with `w = exp(z - max z)`; avoids the
/// cancellation in `1 - p_{j*}` when the sink dominates.
pub fn sensitivity_from_logits(logits: &[f64], j_star: usize) -> Result<f64> {
    if j_star >= logits.len() {
        return Err(Error::domain("sink index out of range"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let context = compensated_sum(
        weights
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j_star)
            .map(|(_, &w)| w),
    );
    Ok(context / (context + weights[j_star]))
}

/// Neumaier summation: error stays at a few ulps independent of the
/// number of terms, where a plain sum drifts by up to `n eps / 2`.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

/// Closed-form bound `(L - 1) / (e^delta + L - 1)`.
pub fn sensitivity_bound(len: usize, delta: f64) -> f64 {
    let l1 = len as f64 - 1.0;
    l1 / (delta.exp() + l1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityCheck {
    pub bound: f64,
    pub empirical: f64,
    pub holds: bool,
}

/// Zero content scores with a log-prior of `delta` on the sink (`j* = 0`)
/// and `0` on every other key: the margin is exactly `delta` on all
/// context keys, which is the equality case of the bound.
pub fn sensitivity_bound_check(len: usize, delta: f64) -> Result<SensitivityCheck> {
    if len < 2 {
        return Err(Error::domain("sensitivity check needs L >= 2"));
    }
    if !delta.is_finite() {
        return Err(Error::domain("margin must be finite"));
    }
    let mut logits = vec![0.0; len];
    logits[0] = delta;
    let empirical = sensitivity_from_logits(&logits, 0)?;
    let bound = sensitivity_bound(len, delta);
    Ok(SensitivityCheck {
        bound,
        empirical,
        holds: empirical <= bound * (1.0 + BOUND_SLACK),
    })
}

/// Max-entropy lag distribution with a prescribed mean lag.
#[derive(Debug, Clone, PartialEq)]
pub struct RecencyPrior {
    pub lambda: f64,
    pub distribution: ProbVector,
    pub mean_lag: f64,
}

/// Mean and variance of the lag under `q_d ∝ e^{-lambda d}`, `d < L`.
pub fn recency_moments(len: usize, lambda: f64) -> (f64, f64) {
    let shift = if lambda >= 0.0 {
        0.0
    } else {
        -lambda * (len as f64 - 1.0)
    };
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for d in 0..len {
        let d = d as f64;
        let w = (-lambda * d - shift).exp();
        z += w;
        m1 += d * w;
        m2 += d * d * w;
    }
    let mean = m1 / z;
    (mean, (m2 / z - mean * mean).max(0.0))
}

pub fn recency_distribution(len: usize, lambda: f64) -> Result<ProbVector> {
    let shift = if lambda >= 0.0 {
        0.0
    } else {
        -lambda * (len as f64 - 1.0)
    };
    ProbVector::normalize((0..len).map(|d| (-lambda * d as f64 - shift).exp()).collect())
}

const MEAN_TOL: f64 = 1e-12;

/// Solves `m(lambda) = mu` for the truncated geometric family: bisection on
/// the strictly decreasing mean map (bracket `[-50, 50]`, expanded if
/// needed), then up to five Newton steps using `m'(lambda) = -Var`.
pub fn maxent_recency(len: usize, mu: f64) -> Result<RecencyPrior> {
    if len < 2 || !(mu > 0.0 && mu < len as f64 - 1.0) {
        return Err(Error::domain(alloc::format!(
            "mean lag must lie in (0, L - 1) = (0, {}), got {mu}",
            len as f64 - 1.0
        )));
    }
    let mean = |lambda: f64| recency_moments(len, lambda).0;
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    let mut expansions = 0;
    while !(mean(lo) > mu && mean(hi) < mu) {
        expansions += 1;
        if expansions > 60 {
            return Err(Error::domain("could not bracket the mean constraint"));
        }
        lo *= 2.0;
        hi *= 2.0;
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..200 {
        lambda = 0.5 * (lo + hi);
        let m = mean(lambda);
        if (m - mu).abs() <= MEAN_TOL {
            break;
        }
        if m > mu {
            lo = lambda;
        } else {
            hi = lambda;
        }
        if hi - lo <= f64::EPSILON * lambda.abs().max(1.0) {
            break;
        }
    }
    for _ in 0..5 {
        let (m, var) = recency_moments(len, lambda);
        if (m - mu).abs() <= MEAN_TOL * 1e-2 || var <= 0.0 {
            break;
        }
        let next = lambda + (m - mu) / var;
        if (mean(next) - mu).abs() >= (m - mu).abs() {
            break;
        }
        lambda = next;
    }
    let distribution = recency_distribution(len, lambda)?;
    let mean_lag = distribution
        .as_slice()
        .iter()
        .enumerate()
        .map(|(d, q)| d as f64 * q)
        .sum();
    Ok(RecencyPrior {
        lambda,
        distribution,
        mean_lag,
    })
}

/// Causal softmaxes under the lag bias `-m (i - j)` and the key bias `m j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlibiEquivalence {
    pub p_lag: ProbVector,
    pub p_key: ProbVector,
    pub max_diff: f64,
}

/// Compares both biases over the admissible keys `j in 0..=i`.
pub fn alibi_equivalence(scores_row: &[f64], m: f64, i: usize) -> Result<AlibiEquivalence> {
    if i >= scores_row.len() {
        return Err(Error::domain("query index beyond the scores row"));
    }
    let admissible = &scores_row[..=i];
    let mut lag: Vec<f64> = admissible
        .iter()
        .enumerate()
        .map(|(j, s)| s - m * (i - j) as f64)
        .collect();
    let mut key: Vec<f64> = admissible
        .iter()
        .enumerate()
        .map(|(j, s)| s + m * j as f64)
        .collect();
    softmax_in_place(&mut lag);
    softmax_in_place(&mut key);
    let p_lag = ProbVector::new(lag)?;
    let p_key = ProbVector::new(key)?;
    let max_diff = p_lag.max_abs_diff(&p_key);
    Ok(AlibiEquivalence {
        p_lag,
        p_key,
        max_diff,
    })
}

/// Leading singular values of a matrix and the resulting rank verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReport {
    pub sigma1: f64,
    pub sigma2: f64,
    /// `sigma2 / sigma1`, or `0` for the zero matrix.
    pub second_singular_ratio: f64,
    pub rank_le_one: bool,
}

pub const RANK_ONE_RATIO: f64 = 1e-9;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 10_000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest singular triplet of `a` by power iteration on `a^T a`, applied
/// as `a^T (a v)` so that `sigma` is read off `|a v|` without squaring.
fn leading_singular(a: &Matrix<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let (rows, cols) = (a.rows(), a.cols());
    // Deterministic start with no special alignment.
    let mut v: Vec<f64> = (0..cols).map(|k| 1.0 + 0.5 * ((k as f64 + 1.0) * 0.7).sin()).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = crate::linalg::dot(a.row(r), &v);
        }
        let s = norm(&u);
        if s == 0.0 {
            return (0.0, u, v);
        }
        u.iter_mut().for_each(|x| *x /= s);
        let mut next = vec![0.0; cols];
        for (r, &ur) in u.iter().enumerate() {
            for (nv, &arc) in next.iter_mut().zip(a.row(r)) {
                *nv += ur * arc;
            }
        }
        let t = norm(&next);
        if t == 0.0 {
            return (0.0, u, v);
        }
        next.iter_mut().for_each(|x| *x /= t);
        v = next;
        let converged = (t - sigma).abs() <= POWER_TOL * t;
        sigma = t;
        if converged {
            break;
        }
    }
    (sigma, u, v)
}

/// Top two singular values via power iteration with deflation.
pub fn top_two_singular_values(a: &Matrix<f64>) -> (f64, f64) {
    let (s1, u1, v1) = leading_singular(a);
    if s1 == 0.0 {
        return (0.0, 0.0);
    }
    let deflated = Matrix::from_fn(a.rows(), a.cols(), |r, c| a[(r, c)] - s1 * u1[r] * v1[c]);
    let (s2, _, _) = leading_singular(&deflated);
    (s1, s2)
}

/// Rank verdict for an arbitrary matrix (`sigma2 / sigma1 <= 1e-9`).
pub fn rank_one_check(a: &Matrix<f64>) -> RankReport {
    let (sigma1, sigma2) = top_two_singular_values(a);
    let ratio = if sigma1 == 0.0 { 0.0 } else { sigma2 / sigma1 };
    RankReport {
        sigma1,
        sigma2,
        second_singular_ratio: ratio,
        rank_le_one: ratio <= RANK_ONE_RATIO,
    }
}

/// Builds `U = 1 u^T` (`U_ij = u_j`) and checks that it has rank at most one.
pub fn key_only_rank(u: &[f64], len: usize) -> Result<RankReport> {
    check_len("key-only bias", len, u.len())?;
    let a = Matrix::from_fn(len, len, |_, j| u[j]);
    Ok(rank_one_check(&a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_scores_collapse_exactly() {
        let pi = ProbVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = collapse_bounds(&[2.5; 4], &pi).unwrap();
        assert_eq!(r.omega, 0.0);
        assert!(r.holds);
        assert!(r.posterior.max_abs_diff(&pi) < 1e-15);
        assert_eq!(r.lower, r.upper);
    }

    #[test]
    fn small_omega_sweep_respects_bound_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.01)).collect();
            let pi = ProbVector::normalize((0..n).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
            let r = collapse_bounds(&scores, &pi).unwrap();
            assert!(r.holds && r.omega <= 0.01);
            assert!(r.posterior.max_abs_diff(&pi) <= 0.01f64.exp_m1());
        }
    }

    #[test]
    fn margin_examples() {
        assert_eq!(sink_margin(&[5.0, 1.0, 1.0], 0).unwrap(), 4.0);
        assert_eq!(sink_margin(&[2.0; 5], 3).unwrap(), 0.0);
        assert!(sink_margin(&[1.0], 0).is_err());
        assert!(sink_margin(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn positive_margin_implies_mass_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let n = rng.random_range(2..64);
            let mut z: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            z[0] = 3.0 + rng.random_range(0.0..4.0);
            let m = sink_margin(&z, 0).unwrap();
            assert!(m > 0.0);
            let p = crate::eot::softmax_attention(&z, 1.0).unwrap();
            assert!(p[0] >= margin_mass_floor(n, m) * (1.0 - 1e-14));
        }
    }

    #[test]
    fn sensitivity_examples() {
        let mut one_hot = vec![0.0; 5];
        one_hot[2] = 1.0;
        assert_eq!(context_sensitivity(&ProbVector::new(one_hot).unwrap(), 2).unwrap(), 0.0);
        for n in [2usize, 3, 7, 100] {
            let psi = context_sensitivity(&ProbVector::uniform(n).unwrap(), 0).unwrap();
            assert!((psi - (n as f64 - 1.0) / n as f64).abs() <= 2.0 * f64::EPSILON);
        }
        // L = 9, delta = ln 8: (L-1)/(e^delta + L - 1) = 8/16.
        assert!((sensitivity_bound(9, 8f64.ln()) - 0.5).abs() < 1e-15);
        let c = sensitivity_bound_check(9, 8f64.ln()).unwrap();
        assert!(c.holds && (c.empirical - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_limits() {
        let c = sensitivity_bound_check(64, 30.0).unwrap();
        assert!(c.holds && c.empirical < 1e-10);
        // Long equality cases: a plain sum of ~1000 equal tiny weights
        // drifts past the slack.
        for n in [942, 1024, 4096] {
            let c = sensitivity_bound_check(n, 30.0).unwrap();
            assert!((c.empirical - c.bound).abs() <= 4.0 * f64::EPSILON * c.bound, "L = {n}");
        }
        for n in 2..=300 {
            let c = sensitivity_bound_check(n, 0.0).unwrap();
            assert_eq!(c.empirical, (n as f64 - 1.0) / n as f64);
            let log = sensitivity_bound(n, (n as f64).ln());
            assert!(log <= (n as f64 - 1.0) / (2.0 * n as f64 - 1.0) + 1e-15 && log < 0.5);
        }
    }

    #[test]
    fn maxent_examples() {
        let r = maxent_recency(3, 1.0).unwrap();
        assert!(r.lambda.abs() < 1e-10);
        for &q in r.distribution.as_slice() {
            assert!((q - 1.0 / 3.0).abs() < 1e-12);
        }
        let r = maxent_recency(2, 0.25).unwrap();
        assert!((r.lambda - 3f64.ln()).abs() < 1e-10);
        assert!((r.distribution[0] - 0.75).abs() < 1e-12);
        assert!((r.mean_lag - 0.25).abs() < 1e-10);
        assert!(maxent_recency(5, 0.0).is_err());
        assert!(maxent_recency(5, 4.0).is_err());
        assert!(maxent_recency(1, 0.5).is_err());
    }

    #[test]
    fn maxent_handles_extreme_means() {
        for (n, mu) in [(1024usize, 1e-3), (1024, 1022.99), (64, 0.5), (64, 62.0), (10, 4.5)] {
            let r = maxent_recency(n, mu).unwrap();
            assert!((r.mean_lag - mu).abs() <= 1e-10, "L={n} mu={mu}: {}", r.mean_lag);
        }
    }

    #[test]
    fn alibi_examples() {
        let s = [0.3, -1.2, 0.8, 2.0];
        let r = alibi_equivalence(&s, 0.0, 3).unwrap();
        let plain = crate::eot::softmax_attention(&s, 1.0).unwrap();
        assert!(r.p_lag.max_abs_diff(&plain) < 1e-16 && r.max_diff == 0.0);
        let r = alibi_equivalence(&s, -0.7, 2).unwrap();
        assert_eq!(r.p_key.len(), 3);
        assert!(r.max_diff <= 1e-14);
        assert!(alibi_equivalence(&s, 0.5, 4).is_err());
    }

    #[test]
    fn rank_examples() {
        let r = key_only_rank(&[0.0; 16], 16).unwrap();
        assert!(r.rank_le_one && r.sigma1 == 0.0);
        let u: Vec<f64> = (0..16).map(|j| (j as f64 * 0.3).cos() - 0.2).collect();
        let r = key_only_rank(&u, 16).unwrap();
        assert!(r.rank_le_one, "{r:?}");
        let expect = 4.0 * norm(&u);
        assert!((r.sigma1 - expect).abs() < 1e-10 * expect);

        let bumped = Matrix::from_fn(16, 16, |i, j| {
            u[j] + 0.3 * (i as f64).sin() * (j as f64 * 0.5).cos() + 0.2 * (i as f64 * 0.2) * (j as f64).sin()
        });
        let r = rank_one_check(&bumped);
        assert!(!r.rank_le_one && r.second_singular_ratio > 1e-3);
        assert!(key_only_rank(&u, 15).is_err());
    }
}
