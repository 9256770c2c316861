//! Central finite-difference check of [`ToyModel::loss_and_grad`].

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{gen_copy_mixture, PositionMode, ToyModel, ToyModelConfig, ToyTaskSpec};
use crate::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Maximum accepted relative error.
pub const GRAD_REL_TOL: f64 = 1e-5;
/// Denominator floor of [`relative_error`]. Some gradients vanish exactly
/// (a constant sink offset shifts every logit of a row equally), and there the
/// numeric side is pure roundoff of order `eps * loss / h`, about `1e-11`.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self) -> bool {
        self.max_rel_error <= GRAD_REL_TOL
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares every analytic gradient entry against the fourth-order central
/// difference
///
/// ```text
/// (8 (f(x + h) - f(x - h)) - (f(x + 2h) - f(x - 2h))) / 12h
/// ```
///
/// whose truncation error is `O(h^4)`. With `h = 1e-4` the two-point stencil
/// leaves `O(h^2)` errors near `1e-8`, which is comparable to the smallest
/// gradients of interest.
pub fn finite_difference_check(
    model: &ToyModel<f64>,
    batch: &[Vec<usize>],
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grad(batch)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .params()
        .into_iter()
        .map(|p| (p.name, p.data.to_vec()))
        .collect();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: String::new(),
    };
    for (pi, (name, values)) in analytic.iter().enumerate() {
        for (ei, &a) in values.iter().enumerate() {
            let orig = probe.params()[pi].data[ei];
            let mut loss_at = |offset: f64| -> Result<f64> {
                probe.params_mut()[pi].data[ei] = orig + offset;
                probe.batch_loss(batch)
            };
            let (p1, m1) = (loss_at(step)?, loss_at(-step)?);
            let (p2, m2) = (loss_at(2.0 * step)?, loss_at(-2.0 * step)?);
            probe.params_mut()[pi].data[ei] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let rel = relative_error(a, numeric);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = rel;
                report.worst = alloc::format!("{name}[{ei}]");
            }
        }
    }
    Ok(report)
}

/// A model small enough to finite-difference every parameter.
pub fn gradcheck_config(position: PositionMode, seed: u64) -> ToyModelConfig {
    let mut cfg = ToyModelConfig::desk(7, 6, position);
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.d_h = 12;
    cfg.d_model = 24;
    cfg.r = 2;
    cfg.mlp_hidden = 16;
    cfg.sink_features = 4;
    cfg.sink_hidden = 5;
    cfg.max_positions = 8;
    cfg.init_seed = seed;
    cfg
}

/// Gradient check of a randomly perturbed small model on a copy-mixture
/// batch. Every parameter, including the prior weights that start at zero,
/// is moved off its initial value so no gradient is trivially zero.
pub fn random_gradcheck(position: PositionMode, seed: u64) -> Result<GradCheckReport> {
    let cfg = gradcheck_config(position, seed);
    let mut model = ToyModel::<f64>::init(&cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, 0.3).expect("finite std");
    for p in model.params_mut() {
        // Unit-scale embeddings keep the first LayerNorm well conditioned;
        // a tiny row variance there makes third derivatives, and with them
        // the O(h^2) truncation error, blow up.
        let scale = if p.name.ends_with("_emb") { 1.0 / 0.3 } else { 1.0 };
        for v in p.data.iter_mut() {
            *v += scale * noise.sample(&mut rng);
        }
    }
    let spec = ToyTaskSpec::copy_mixture(cfg.vocab_size, 6, seed);
    let batch = gen_copy_mixture(&spec, 2)?;
    finite_difference_check(&model, &batch, FD_STEP)
}
