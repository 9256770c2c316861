//! Property tests over random inputs. Each property checks an identity
//! against an independent computation, not against the code under test.

use goat_core::attention::{composite_matrices, dense_log_prior, explicit_bias_attention, sdpa, AttentionBatch};
use goat_core::eot::{eot_objective, kl_prior_attention, ProbVector, TransportProblem};
use goat_core::linalg::{dot, Matrix};
use goat_core::prior::{
    fourier_key, geometric_frequencies, relative_log_prior, spectral_rotate_query, GoatHeadConfig,
    SinkBiasParams, SpectralPriorParams,
};
use goat_core::theory::{collapse_bounds, maxent_recency, sensitivity_bound, sensitivity_from_logits};
use goat_core::toy_lm::decompose_parts;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spectral(r: usize, coeffs: &[f64]) -> SpectralPriorParams {
    let freqs = geometric_frequencies(r, 0.01, 3.0).unwrap();
    SpectralPriorParams::new(freqs, coeffs[..r].to_vec(), coeffs[r..2 * r].to_vec()).unwrap()
}

/// Scores, a strictly positive prior and a temperature of matching length.
fn problem() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..24).prop_flat_map(|n| (vec(-5.0..5.0f64, n), vec(0.01..10.0f64, n), 0.1..4.0f64))
}

proptest! {
    #[test]
    fn closed_form_is_a_distribution_and_beats_neighbours(
        (scores, w, tau) in problem(),
        mix in 0.0..1.0f64,
        probe in vec(0.01..1.0f64, 24),
    ) {
        let prior = ProbVector::normalize(w).unwrap();
        let pb = TransportProblem::new(scores.clone(), prior, tau).unwrap();
        let p = kl_prior_attention(&pb);
        let sum: f64 = p.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|&x| x > 0.0));
        // Any point on the segment towards another distribution is no better.
        let q = ProbVector::normalize(probe[..scores.len()].to_vec()).unwrap();
        let mixed: Vec<f64> = p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (1.0 - mix) * a + mix * b).collect();
        let mixed = ProbVector::normalize(mixed).unwrap();
        let f_star = eot_objective(&p, &pb).unwrap();
        prop_assert!(f_star <= eot_objective(&mixed, &pb).unwrap() + 1e-12 * (1.0 + f_star.abs()));
    }

    #[test]
    fn closed_form_ignores_score_shifts((scores, w, tau) in problem(), c in -50.0..50.0f64) {
        let prior = ProbVector::normalize(w).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let a = kl_prior_attention(&TransportProblem::new(scores, prior.clone(), tau).unwrap());
        let b = kl_prior_attention(&TransportProblem::new(shifted, prior, tau).unwrap());
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn rotated_query_and_fourier_key_factorize_kappa(
        r in 1usize..8,
        coeffs in vec(-2.0..2.0f64, 16),
        i in 0usize..512,
        j in 0usize..512,
    ) {
        let p = spectral(r, &coeffs);
        let got = dot(&spectral_rotate_query(i, &p), &fourier_key(j, p.frequencies()));
        // Direct trigonometric sum over the displacement.
        let d = i as f64 - j as f64;
        let want: f64 = (0..r)
            .map(|k| coeffs[k] * (p.frequencies()[k] * d).cos() + coeffs[r + k] * (p.frequencies()[k] * d).sin())
            .sum();
        prop_assert!((got - want).abs() <= 1e-10);
        prop_assert!((relative_log_prior(i, j, &p) - want).abs() <= 1e-10);
    }

    #[test]
    fn collapse_bounds_hold(
        (scores, w, _) in problem(),
    ) {
        let prior = ProbVector::normalize(w).unwrap();
        let rep = collapse_bounds(&scores, &prior).unwrap();
        prop_assert!(rep.holds, "violation {}", rep.max_violation);
    }

    #[test]
    fn sensitivity_never_exceeds_bound(
        n in 2usize..200,
        delta in 0.0..30.0f64,
        gaps in vec(0.0..5.0f64, 200),
        star in 0usize..200,
    ) {
        let star = star % n;
        let mut logits: Vec<f64> = gaps[..n].iter().map(|g| -delta - g).collect();
        logits[star] = 0.0;
        let s = sensitivity_from_logits(&logits, star).unwrap();
        prop_assert!(s <= sensitivity_bound(n, delta) * (1.0 + 1e-13));
    }

    #[test]
    fn maxent_solution_hits_the_mean(n in 2usize..128, t in 0.01..0.99f64) {
        let mu = t * (n as f64 - 1.0);
        let sol = maxent_recency(n, mu).unwrap();
        let mean: f64 = sol.distribution.as_slice().iter().enumerate().map(|(d, p)| d as f64 * p).sum();
        prop_assert!((mean - mu).abs() < 1e-9);
        // Successive lag ratios are all e^{-lambda}.
        let p = sol.distribution.as_slice();
        for w in p.windows(2) {
            prop_assert!((w[1] / w[0] - (-sol.lambda).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_route_matches_dense_bias(len in 1usize..40, r in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = GoatHeadConfig::new(24, r, true).unwrap();
        let sp = SpectralPriorParams::random(geometric_frequencies(r, 0.01, 3.0).unwrap(), 0.7, &mut rng).unwrap();
        let sink = SinkBiasParams::random(4, 6, 64, 0.7, &mut rng).unwrap();
        let q_c = Matrix::from_fn(len, cfg.d_c(), |a, b| ((a * 7 + b * 3 + seed as usize % 11) as f64).sin());
        let k_c = Matrix::from_fn(len, cfg.d_c(), |a, b| ((a * 5 + b * 2) as f64).cos());
        let v = Matrix::from_fn(len, 24, |a, b| (a + b) as f64 / 10.0);
        let (q, k) = composite_matrices(&q_c, &k_c, &sp, &sink, &cfg).unwrap();
        let (_, w1) = sdpa(&AttentionBatch::new(q, k, v.clone(), true).unwrap()).unwrap();
        let bias = dense_log_prior(len, &sp, &sink);
        let (_, w2) = explicit_bias_attention(&q_c, &k_c, &v, &bias, true).unwrap();
        prop_assert!(w1.max_abs_diff(&w2) <= 1e-10);
    }

    #[test]
    fn decomposition_rows_are_causal_distributions(len in 1usize..48, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = SpectralPriorParams::random(geometric_frequencies(3, 0.01, 3.0).unwrap(), 1.0, &mut rng).unwrap();
        let sink = SinkBiasParams::random(4, 6, 32, 1.0, &mut rng).unwrap();
        let d = decompose_parts(&sp, &sink, len).unwrap();
        for i in 0..len {
            let row = d.induced_prior.row(i);
            prop_assert!((row[..=i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row[i + 1..].iter().all(|&x| x == 0.0));
            // Translation equivariance of the relative part.
            if i + 1 < len {
                prop_assert!((d.k_rel[(i + 1, 1)] - d.k_rel[(i, 0)]).abs() < 1e-12);
            }
        }
    }
}
