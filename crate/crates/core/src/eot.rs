//! One-sided entropic optimal transport for a single query row.
//!
//! A query distributes unit mass over `L` keys. With scores `s`, prior `pi`
//! and temperature `tau` the plan minimizes
//!
//! ```text
//! J(p) = -<p, s> + tau * KL(p || pi)
//! ```
//!
//! over the simplex; the minimizer is `softmax(s / tau + log pi)`. With a
//! uniform prior this reduces to ordinary softmax attention.

use alloc::vec::Vec;

// Float math for concrete f64 when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::check_len;
use crate::{Error, Real, Result};

/// Tolerance on `|sum - 1|` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("probability vector must be non-empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(alloc::format!(
                "probability entries must be finite and non-negative, got {v}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(alloc::format!(
                "probability entries sum to {sum}, not 1"
            )));
        }
        Ok(Self(values))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::domain("probability vector must be non-empty"));
        }
        Ok(Self(alloc::vec![1.0 / len as f64; len]))
    }

    /// Normalizes non-negative weights onto the simplex.
    pub fn normalize(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::domain("weights must have a positive finite sum"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    pub fn max_abs_diff(&self, other: &ProbVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

impl core::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Scores, prior and temperature of one query row.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportProblem {
    scores: Vec<f64>,
    prior: ProbVector,
    temperature: f64,
}

impl TransportProblem {
    /// Masked keys are expressed by leaving them out; every prior entry must
    /// be strictly positive so that `log pi` is finite.
    pub fn new(scores: Vec<f64>, prior: ProbVector, temperature: f64) -> Result<Self> {
        check_len("transport problem prior", scores.len(), prior.len())?;
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::domain("temperature must be positive and finite"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::domain("scores must be finite"));
        }
        if prior.as_slice().iter().any(|&p| p <= 0.0) {
            return Err(Error::domain(
                "prior has zero mass; remove masked keys instead",
            ));
        }
        Ok(Self {
            scores,
            prior,
            temperature,
        })
    }

    pub fn uniform_prior(scores: Vec<f64>, temperature: f64) -> Result<Self> {
        let prior = ProbVector::uniform(scores.len())?;
        Self::new(scores, prior, temperature)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn prior(&self) -> &ProbVector {
        &self.prior
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Numerically stable in-place softmax. Entries equal to `-inf` are treated
/// as excluded and receive exactly zero mass. Returns `false` when every
/// entry is excluded.
pub fn softmax_in_place<T: Real>(logits: &mut [T]) -> bool {
    let max = logits
        .iter()
        .fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    if max == T::neg_infinity() {
        return false;
    }
    let mut total = T::zero();
    for x in logits.iter_mut() {
        *x = if *x == T::neg_infinity() {
            T::zero()
        } else {
            (*x - max).exp()
        };
        total += *x;
    }
    for x in logits.iter_mut() {
        *x /= total;
    }
    true
}

/// `exp(s_j / tau) / sum_k exp(s_k / tau)`.
pub fn softmax_attention(scores: &[f64], temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::domain("temperature must be positive and finite"));
    }
    if scores.is_empty() {
        return Err(Error::domain("scores must be non-empty"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("scores must be finite"));
    }
    let mut logits: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    softmax_in_place(&mut logits);
    Ok(ProbVector(logits))
}

/// Closed-form minimizer `softmax(s / tau + log pi)`.
pub fn kl_prior_attention(problem: &TransportProblem) -> ProbVector {
    let tau = problem.temperature;
    let mut logits: Vec<f64> = problem
        .scores
        .iter()
        .zip(problem.prior.as_slice())
        .map(|(s, p)| s / tau + p.ln())
        .collect();
    softmax_in_place(&mut logits);
    ProbVector(logits)
}

/// `-<p, s> + tau * KL(p || pi)` with the `0 log 0 = 0` convention.
pub fn eot_objective(p: &ProbVector, problem: &TransportProblem) -> Result<f64> {
    check_len("objective plan", problem.len(), p.len())?;
    let tau = problem.temperature;
    let mut cost = 0.0;
    let mut kl = 0.0;
    for ((&pj, &sj), &pij) in p
        .as_slice()
        .iter()
        .zip(&problem.scores)
        .zip(problem.prior.as_slice())
    {
        cost -= pj * sj;
        if pj > 0.0 {
            kl += pj * (pj / pij).ln();
        }
    }
    Ok(cost + tau * kl)
}

/// Minimizes [`eot_objective`] by entropic mirror descent from the uniform
/// plan. Each step multiplies `p` by `exp(-step * grad)` and renormalizes,
/// so every iterate stays strictly inside the simplex.
///
/// The log-iterate contracts towards the optimum by `|1 - step * tau|` per
/// step, so `0 < step * tau < 2` is required for convergence.
pub fn brute_force_minimize(
    problem: &TransportProblem,
    iters: usize,
    step: f64,
) -> Result<ProbVector> {
    if iters == 0 {
        return Err(Error::domain("iters must be at least 1"));
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::domain("step must be positive and finite"));
    }
    let tau = problem.temperature;
    let n = problem.len();
    let log_prior: Vec<f64> = problem.prior.as_slice().iter().map(|p| p.ln()).collect();
    let mut log_p = alloc::vec![-(n as f64).ln(); n];
    let mut p = alloc::vec![0.0; n];
    for _ in 0..iters {
        for j in 0..n {
            // d/dp_j of the objective, minus the constant tau that the
            // normalization absorbs.
            let grad = -problem.scores[j] + tau * (log_p[j] - log_prior[j]);
            log_p[j] -= step * grad;
        }
        // Renormalize in log space.
        p.copy_from_slice(&log_p);
        softmax_in_place(&mut p);
        for (lp, &pj) in log_p.iter_mut().zip(&p) {
            *lp = pj.ln();
        }
    }
    Ok(ProbVector(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_scores_give_uniform() {
        for c in [-3.0, 0.0, 7.5] {
            let p = softmax_attention(&[c; 4], 1.0).unwrap();
            for &v in p.as_slice() {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn ln3_gives_three_quarters() {
        let p = softmax_attention(&[3f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs_are_domain_errors() {
        assert!(softmax_attention(&[1.0, f64::NAN], 1.0).is_err());
        assert!(softmax_attention(&[1.0, f64::INFINITY], 1.0).is_err());
        assert!(softmax_attention(&[1.0], 0.0).is_err());
        assert!(softmax_attention(&[1.0], -1.0).is_err());
        let zero_mass = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert!(TransportProblem::new(vec![0.0, 0.0], zero_mass, 1.0).is_err());
        let pi = ProbVector::uniform(3).unwrap();
        let prob = TransportProblem::new(vec![0.0; 3], pi, 1.0).unwrap();
        assert!(eot_objective(&ProbVector::uniform(2).unwrap(), &prob).is_err());
        assert!(brute_force_minimize(&prob, 0, 0.5).is_err());
    }

    #[test]
    fn zero_scores_return_prior() {
        let pi = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let prob = TransportProblem::new(vec![0.0; 3], pi.clone(), 1.3).unwrap();
        assert!(kl_prior_attention(&prob).max_abs_diff(&pi) < 1e-15);
        assert!(eot_objective(&pi, &prob).unwrap().abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_three_key_problem() {
        // pi_j e^{s_j} with s = (1, 0, -1), pi = (0.5, 0.3, 0.2).
        let w = [0.5 * 1f64.exp(), 0.3, 0.2 * (-1f64).exp()];
        let z: f64 = w.iter().sum();
        let pi = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let prob = TransportProblem::new(vec![1.0, 0.0, -1.0], pi, 1.0).unwrap();
        let oracle = brute_force_minimize(&prob, 400, 0.3).unwrap();
        let closed = kl_prior_attention(&prob);
        for j in 0..3 {
            assert!((oracle[j] - w[j] / z).abs() < 1e-6);
            assert!((closed[j] - w[j] / z).abs() < 1e-15);
        }
    }

    #[test]
    fn mirror_descent_uniform_fixed_point() {
        let prob = TransportProblem::uniform_prior(vec![0.0; 5], 0.7).unwrap();
        let p = brute_force_minimize(&prob, 10, 0.5).unwrap();
        for &v in p.as_slice() {
            assert!((v - 0.2).abs() < 1e-10);
        }
    }

    #[test]
    fn masked_entries_get_zero_mass() {
        let mut x = [1.0f64, f64::NEG_INFINITY, 2.0];
        assert!(softmax_in_place(&mut x));
        assert_eq!(x[1], 0.0);
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut all = [f64::NEG_INFINITY; 2];
        assert!(!softmax_in_place(&mut all));
    }
}
