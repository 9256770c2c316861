//! Seeded randomized sweeps over the closed forms and theorem checks.
//!
//! Each suite pits a library routine against an independent oracle (mirror
//! descent, direct trigonometric evaluation, dense bias matrices, random
//! probes, power iteration, finite differences) and reports how many cases
//! it ran, how many failed, and the largest observed error.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};

use crate::attention::{explicit_bias_attention, composite_matrices, dense_log_prior, logit_pair, sdpa, AttentionBatch};
use crate::eot::{brute_force_minimize, eot_objective, kl_prior_attention, ProbVector, TransportProblem};
use crate::linalg::Matrix;
use crate::prior::{
    fourier_key, geometric_frequencies, relative_log_prior, spectral_rotate_query, GoatHeadConfig,
    SinkBiasParams, SpectralPriorParams, DEFAULT_OMEGA_MAX, DEFAULT_OMEGA_MIN,
};
use crate::theory::{
    alibi_equivalence, collapse_bounds, key_only_rank, maxent_recency, rank_one_check, sensitivity_bound,
    sensitivity_bound_check, sensitivity_from_logits,
};
use crate::toy_lm::{random_gradcheck, PositionMode};
use crate::{Error, Result};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub check_name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest error metric seen, in the suite's own units (see
    /// [`SUITES`]).
    pub max_violation: f64,
}

impl CheckReport {
    fn new(name: &str) -> Self {
        Self {
            check_name: name.into(),
            cases: 0,
            failures: 0,
            max_violation: 0.0,
        }
    }

    /// Records one case whose error metric is `err`; it fails when
    /// `err > tol` or `err` is NaN.
    fn record(&mut self, err: f64, tol: f64) {
        self.cases += 1;
        if !(err <= tol) {
            self.failures += 1;
        }
        if err > self.max_violation || err.is_nan() {
            self.max_violation = err;
        }
    }

    /// Records a boolean case without an error metric.
    fn record_bool(&mut self, ok: bool) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Suite names with the metric reported as `max_violation`.
pub const SUITES: &[(&str, &str)] = &[
    ("eot", "L-inf gap to mirror descent; objective deficit against probes"),
    ("factorization", "|<q_rel, k_rel> - kappa(i - j)|"),
    ("scaling", "composite logit / weight gap to the dense-bias route"),
    ("collapse", "relative excursion outside pi e^{-omega}..pi e^{omega}"),
    ("sensitivity", "excess over (L-1)/(e^delta + L-1); equality gap"),
    ("maxent", "mean-lag error; entropy deficit against probes"),
    ("alibi", "L-inf gap between lag- and key-linear softmax"),
    ("rank_one", "sigma2 / sigma1 of 1 u^T"),
    ("gradient", "max relative finite-difference error"),
];

pub fn suite_names() -> impl Iterator<Item = &'static str> {
    SUITES.iter().map(|(n, _)| *n)
}

/// Runs one suite by name.
pub fn run_suite(name: &str, seed: u64) -> Result<CheckReport> {
    match name {
        "eot" => eot_suite(seed, 100, 1000),
        "factorization" => factorization_suite(seed, 256, &[1, 4, 8]),
        "scaling" => scaling_suite(seed, 100),
        "collapse" => collapse_suite(seed, 10_000),
        "sensitivity" => sensitivity_suite(seed, 1024),
        "maxent" => maxent_suite(seed, 20, 50),
        "alibi" => alibi_suite(seed, 1000),
        "rank_one" => rank_one_suite(seed, 100),
        "gradient" => gradient_suite(seed, 5),
        other => Err(Error::domain(alloc::format!("unknown suite `{other}`"))),
    }
}

fn rng_for(seed: u64, suite: &str) -> ChaCha8Rng {
    let salt = suite.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Uniform draw from the simplex (flat Dirichlet).
fn random_simplex<R: Rng>(len: usize, rng: &mut R) -> ProbVector {
    let w: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    ProbVector::normalize(w).expect("exponential draws are positive")
}

/// Strictly positive random prior with a wide dynamic range.
fn random_prior<R: Rng>(len: usize, rng: &mut R) -> ProbVector {
    let w: Vec<f64> = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (1.5 * z).exp()
        })
        .collect();
    ProbVector::normalize(w).expect("positive weights")
}

fn gaussian_vec<R: Rng>(len: usize, std: f64, rng: &mut R) -> Vec<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| n.sample(rng)).collect()
}

/// Closed form against mirror descent, and optimality against simplex
/// probes. `J(p) - J(p*) = tau KL(p || p*) >= 0` for every probe.
pub fn eot_suite(seed: u64, problems: usize, probes: usize) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "eot");
    let mut report = CheckReport::new("eot");
    for _ in 0..problems {
        let len = rng.random_range(1..=64);
        let tau = rng.random_range(0.2..2.0);
        let scores = gaussian_vec(len, 2.0, &mut rng);
        let prior = if rng.random_bool(0.3) {
            ProbVector::uniform(len)?
        } else {
            random_prior(len, &mut rng)
        };
        let problem = TransportProblem::new(scores, prior, tau)?;
        let closed = kl_prior_attention(&problem);
        // Step 0.5 / tau halves the log-space error each iteration.
        let oracle = brute_force_minimize(&problem, 80, 0.5 / tau)?;
        report.record(closed.max_abs_diff(&oracle), 1e-6);
        let best = eot_objective(&closed, &problem)?;
        let scale = 1e-12 * (1.0 + best.abs());
        let mut deficit = f64::NEG_INFINITY;
        for k in 0..probes {
            let probe = if k % 2 == 0 {
                random_simplex(len, &mut rng)
            } else {
                // Multiplicative jitter around the optimum probes the
                // neighbourhood where a wrong minimizer would show.
                let eps = 10f64.powf(rng.random_range(-4.0..0.0));
                let w: Vec<f64> = closed
                    .as_slice()
                    .iter()
                    .map(|&p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        p * (eps * z).exp()
                    })
                    .collect();
                ProbVector::normalize(w)?
            };
            deficit = deficit.max(best - eot_objective(&probe, &problem)?);
        }
        report.record(deficit.max(0.0), scale);
    }
    Ok(report)
}

/// Exhaustive `i, j < len` for each rank: rotated query against Fourier key
/// versus direct evaluation of `kappa(i - j)`.
pub fn factorization_suite(seed: u64, len: usize, ranks: &[usize]) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "factorization");
    let mut report = CheckReport::new("factorization");
    for &r in ranks {
        let freqs = geometric_frequencies(r, DEFAULT_OMEGA_MIN, DEFAULT_OMEGA_MAX)?;
        let params = SpectralPriorParams::random(freqs.clone(), 1.0, &mut rng)?;
        let keys: Vec<Vec<f64>> = (0..len).map(|j| fourier_key(j, &freqs)).collect();
        for i in 0..len {
            let q = spectral_rotate_query(i, &params);
            for (j, k) in keys.iter().enumerate() {
                let inner: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
                report.record((inner - relative_log_prior(i, j, &params)).abs(), 1e-10);
            }
        }
    }
    Ok(report)
}

/// Random head configurations: every composite logit against the explicit
/// `s / sqrt(d_c) + K`, and causal composite SDPA weights against
/// dense-bias attention.
pub fn scaling_suite(seed: u64, configs: usize) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "scaling");
    let mut report = CheckReport::new("scaling");
    for _ in 0..configs {
        let r = rng.random_range(0..=6);
        let d_h = rng.random_range(2 * r + 3..=64);
        let len = rng.random_range(1..=48);
        let cfg = GoatHeadConfig::new(d_h, r, true)?;
        let freqs = geometric_frequencies(r, DEFAULT_OMEGA_MIN, DEFAULT_OMEGA_MAX)?;
        let spectral = SpectralPriorParams::random(freqs, 1.0, &mut rng)?;
        let sink = SinkBiasParams::random(8, 16, 64, 1.0, &mut rng)?;
        let d_c = cfg.d_c();
        let q_c = Matrix::from_vec(len, d_c, gaussian_vec(len * d_c, 1.0, &mut rng))?;
        let k_c = Matrix::from_vec(len, d_c, gaussian_vec(len * d_c, 1.0, &mut rng))?;
        let values = Matrix::from_vec(len, d_h, gaussian_vec(len * d_h, 1.0, &mut rng))?;
        let mut logit_err = 0.0f64;
        for i in 0..len {
            for j in 0..len {
                let (a, b) = logit_pair(q_c.row(i), k_c.row(j), i, j, &spectral, &sink, &cfg)?;
                logit_err = logit_err.max((a - b).abs());
            }
        }
        report.record(logit_err, 1e-10);
        let (q, k) = composite_matrices(&q_c, &k_c, &spectral, &sink, &cfg)?;
        let (_, w_comp) = sdpa(&AttentionBatch::new(q, k, values.clone(), true)?)?;
        let bias = dense_log_prior(len, &spectral, &sink);
        let (_, w_dense) = explicit_bias_attention(&q_c, &k_c, &values, &bias, true)?;
        report.record(w_comp.max_abs_diff(&w_dense), 1e-10);
    }
    Ok(report)
}

/// Random instances of the collapse bound, plus `omega = 0` instances
/// where the posterior must equal the prior.
pub fn collapse_suite(seed: u64, instances: usize) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "collapse");
    let mut report = CheckReport::new("collapse");
    for _ in 0..instances {
        let len = rng.random_range(1..=64);
        let range = 10f64.powf(rng.random_range(-6.0..1.0));
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(-range..=range)).collect();
        let prior = random_prior(len, &mut rng);
        let rep = collapse_bounds(&scores, &prior)?;
        report.record(rep.max_violation, 0.0);
        if !rep.holds {
            report.failures += 1;
        }
    }
    for _ in 0..instances / 100 {
        let len = rng.random_range(1..=64);
        let c = rng.random_range(-5.0..5.0);
        let prior = random_prior(len, &mut rng);
        let rep = collapse_bounds(&vec![c; len], &prior)?;
        report.record(rep.posterior.max_abs_diff(&prior), 1e-15);
    }
    Ok(report)
}

/// Uniform case `(L-1)/L` exactly, equality case of the bound, and random
/// logits with margin at least `delta` staying under the bound.
pub fn sensitivity_suite(seed: u64, max_len: usize) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "sensitivity");
    let mut report = CheckReport::new("sensitivity");
    for len in 2..=max_len {
        let l = len as f64;
        let uniform = sensitivity_from_logits(&vec![0.0; len], 0)?;
        report.record_bool(uniform == (l - 1.0) / l);
        for delta in [0.0, 1.0, l.ln(), 30.0] {
            let check = sensitivity_bound_check(len, delta)?;
            report.record((check.empirical - check.bound).abs(), 1e-12);
            if !check.holds {
                report.failures += 1;
            }
            let j_star = rng.random_range(0..len);
            let mut logits: Vec<f64> = (0..len)
                .map(|_| -delta - rng.random_range(0.0..3.0))
                .collect();
            logits[j_star] = 0.0;
            let s = sensitivity_from_logits(&logits, j_star)?;
            let bound = sensitivity_bound(len, delta);
            report.record(((s - bound) / bound).max(0.0), 1e-13);
        }
    }
    Ok(report)
}

/// Random `(L, mu)`; the solver's mean against `mu`, the `L = 2` closed
/// form, and entropy against probes that satisfy both constraints.
pub fn maxent_suite(seed: u64, instances: usize, probes: usize) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "maxent");
    let mut report = CheckReport::new("maxent");
    let two = maxent_recency(2, 0.25)?;
    report.record((two.lambda - 3f64.ln()).abs(), 1e-10);
    for _ in 0..instances {
        let len = rng.random_range(2..=64);
        let top = len as f64 - 1.0;
        let mu = rng.random_range(0.02 * top..0.98 * top);
        let sol = maxent_recency(len, mu)?;
        report.record((sol.mean_lag - mu).abs(), 1e-10);
        let p = sol.distribution.as_slice();
        let h_star = sol.distribution.entropy();
        // Orthonormal basis of span{1, d} by Gram-Schmidt.
        let ones = vec![1.0 / (len as f64).sqrt(); len];
        let mean_d = (len as f64 - 1.0) / 2.0;
        let mut lag: Vec<f64> = (0..len).map(|d| d as f64 - mean_d).collect();
        let n = lag.iter().map(|x| x * x).sum::<f64>().sqrt();
        lag.iter_mut().for_each(|x| *x /= n);
        for _ in 0..probes {
            let mut v = gaussian_vec(len, 1.0, &mut rng);
            for basis in [&ones, &lag] {
                let c: f64 = v.iter().zip(basis.iter()).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(basis.iter()).for_each(|(a, b)| *a -= c * b);
            }
            // Largest step keeping every entry non-negative, then a random
            // fraction of it.
            let limit = p
                .iter()
                .zip(&v)
                .filter(|(_, &vi)| vi < 0.0)
                .map(|(&pi, &vi)| -pi / vi)
                .fold(f64::INFINITY, f64::min);
            let t = rng.random_range(0.0..1.0) * limit.min(1e3);
            let q: Vec<f64> = p.iter().zip(&v).map(|(a, b)| (a + t * b).max(0.0)).collect();
            let h: f64 = -q.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
            report.record((h - h_star).max(0.0), 1e-12);
        }
    }
    Ok(report)
}

pub fn alibi_suite(seed: u64, rows: usize) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "alibi");
    let mut report = CheckReport::new("alibi");
    for _ in 0..rows {
        let i = rng.random_range(0..32);
        let m = rng.random_range(-1.0..1.0);
        let scores = gaussian_vec(i + 1, 1.0, &mut rng);
        report.record(alibi_equivalence(&scores, m, i)?.max_diff, 1e-14);
    }
    Ok(report)
}

/// `1 u^T` must read as rank one; a rank-two perturbation must not.
pub fn rank_one_suite(seed: u64, instances: usize) -> Result<CheckReport> {
    let mut rng = rng_for(seed, "rank_one");
    let mut report = CheckReport::new("rank_one");
    for _ in 0..instances {
        let len = rng.random_range(2..=64);
        let u = gaussian_vec(len, 1.0, &mut rng);
        let rep = key_only_rank(&u, len)?;
        report.record(rep.second_singular_ratio, crate::theory::RANK_ONE_RATIO);
        let a = gaussian_vec(len, 1.0, &mut rng);
        let b = gaussian_vec(len, 1.0, &mut rng);
        let perturbed = Matrix::from_fn(len, len, |i, j| u[j] + 0.1 * a[i] * b[j]);
        report.record_bool(!rank_one_check(&perturbed).rank_le_one);
    }
    Ok(report)
}

/// Finite-difference gradient checks of the toy model, every head variant.
pub fn gradient_suite(seed: u64, seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("gradient");
    for mode in [PositionMode::Goat, PositionMode::KeyLinear, PositionMode::LearnedAbsolute] {
        for s in 0..seeds {
            let rep = random_gradcheck(mode, seed.wrapping_add(s))?;
            report.record(rep.max_rel_error, crate::toy_lm::GRAD_REL_TOL);
        }
    }
    Ok(report)
}
