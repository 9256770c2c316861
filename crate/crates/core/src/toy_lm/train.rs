use alloc::vec::Vec;

use super::optim::{lr_at, AdamW};
use super::{CopyMixture, ToyModel, ToyTaskSpec};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Snapshot interval in steps; `0` keeps no intermediate checkpoints.
    pub checkpoint_every: usize,
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ToyModel<T>,
    pub trace: Vec<TrainRecord>,
    /// `(step, parameters after that step)`.
    pub checkpoints: Vec<(usize, ToyModel<T>)>,
}

/// Trains on fresh copy-mixture batches drawn from `spec.seed`.
///
/// Deterministic: the model seed, the data seed and the step count fix
/// every float operation, so the trace is bitwise reproducible.
pub fn train<T: Real>(
    mut model: ToyModel<T>,
    spec: &ToyTaskSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if cfg.batch_size == 0 {
        return Err(Error::domain("batch_size must be positive"));
    }
    if spec.vocab_size != model.cfg.vocab_size {
        return Err(Error::domain("task and model vocabularies differ"));
    }
    let mut data = CopyMixture::new(*spec)?;
    let mut opt = AdamW::new(model.cfg.optim, &model);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut checkpoints = Vec::new();
    for step in 0..cfg.steps {
        let batch: Vec<Vec<usize>> = (0..cfg.batch_size).map(|_| data.sample().tokens).collect();
        let (loss, grads) = match model.loss_and_grad(&batch) {
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step }),
            other => other?,
        };
        let loss = Real::to_f64(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let lr = lr_at(&model.cfg.optim, step, cfg.steps);
        let grad_norm = opt.step(&mut model, &grads, lr);
        let finite = || model.params().iter().all(|p| p.data.iter().all(|v| v.is_finite()));
        if !grad_norm.is_finite() || !finite() {
            return Err(Error::Diverged { step });
        }
        trace.push(TrainRecord {
            step,
            loss,
            grad_norm,
            lr,
        });
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push((step + 1, model.clone()));
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_lm::{gradcheck_config, OptimConfig, PositionMode};

    fn small(mode: PositionMode) -> (ToyModel<f32>, ToyTaskSpec) {
        let mut cfg = gradcheck_config(mode, 5);
        cfg.max_positions = 16;
        cfg.l_ref = 16;
        (
            ToyModel::init(&cfg).unwrap(),
            ToyTaskSpec::copy_mixture(cfg.vocab_size, 16, 9),
        )
    }

    #[test]
    fn loss_decreases_and_is_deterministic() {
        let (model, spec) = small(PositionMode::Goat);
        let tc = TrainConfig {
            steps: 60,
            batch_size: 4,
            checkpoint_every: 20,
        };
        let a = train(model.clone(), &spec, &tc).unwrap();
        let b = train(model, &spec, &tc).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.checkpoints.len(), 3);
        let head: f64 = a.trace[..10].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        let tail: f64 = a.trace[50..].iter().map(|r| r.loss).sum::<f64>() / 10.0;
        assert!(tail < head, "{head} -> {tail}");
        assert!(a.trace.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn absurd_learning_rate_reports_step() {
        let (mut model, spec) = small(PositionMode::LearnedAbsolute);
        model.cfg.optim = OptimConfig {
            lr: 1e30,
            clip_norm: 0.0,
            warmup: 0,
            ..OptimConfig::default()
        };
        let tc = TrainConfig {
            steps: 50,
            batch_size: 2,
            checkpoint_every: 0,
        };
        match train(model, &spec, &tc) {
            Err(Error::Diverged { step }) => assert!(step > 0 && step < 50),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.trace.len())),
        }
    }
}
