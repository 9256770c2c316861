use alloc::vec::Vec;

use super::{CopyMixture, ToyModel, ToyTaskSpec};
use crate::{Error, Real, Result};

/// Next-token accuracy at one evaluation length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrapolationPoint {
    pub len: usize,
    /// Top-1 accuracy over positions whose token was copied (first or
    /// previous token), predicted from the preceding row.
    pub copy_accuracy: f64,
    pub copy_targets: usize,
    /// Top-1 accuracy over every position `t >= 1`.
    pub all_accuracy: f64,
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Evaluates `n_sequences` fresh samples per length, drawn from `spec` with
/// its sequence length replaced.
pub fn eval_extrapolation<T: Real>(
    model: &ToyModel<T>,
    spec: &ToyTaskSpec,
    lengths: &[usize],
    n_sequences: usize,
) -> Result<Vec<ExtrapolationPoint>> {
    if n_sequences == 0 {
        return Err(Error::domain("n_sequences must be positive"));
    }
    let mut out = Vec::with_capacity(lengths.len());
    for &len in lengths {
        if len < 2 {
            return Err(Error::domain("evaluation length must be at least 2"));
        }
        let mut data = CopyMixture::new(spec.with_seq_len(len))?;
        let (mut copy_hits, mut copy_total, mut hits, mut total) = (0usize, 0usize, 0usize, 0usize);
        for _ in 0..n_sequences {
            let sample = data.sample();
            let cache = model.forward(&sample.tokens)?;
            for t in 1..len {
                let ok = argmax(cache.logits.row(t - 1)) == sample.tokens[t];
                hits += ok as usize;
                total += 1;
                if sample.sources[t].is_copy() {
                    copy_hits += ok as usize;
                    copy_total += 1;
                }
            }
        }
        out.push(ExtrapolationPoint {
            len,
            copy_accuracy: if copy_total > 0 {
                copy_hits as f64 / copy_total as f64
            } else {
                0.0
            },
            copy_targets: copy_total,
            all_accuracy: hits as f64 / total as f64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_lm::{gradcheck_config, PositionMode};

    #[test]
    fn counts_and_bounds() {
        let cfg = gradcheck_config(PositionMode::Goat, 2);
        let model = ToyModel::<f32>::init(&cfg).unwrap();
        let spec = ToyTaskSpec::copy_mixture(cfg.vocab_size, 6, 3);
        let pts = eval_extrapolation(&model, &spec, &[6, 12], 5).unwrap();
        assert_eq!(pts.len(), 2);
        for p in &pts {
            assert!((0.0..=1.0).contains(&p.copy_accuracy));
            assert!(p.copy_targets <= 5 * (p.len - 1));
        }
        let again = eval_extrapolation(&model, &spec, &[6, 12], 5).unwrap();
        assert_eq!(pts, again);
        assert!(eval_extrapolation(&model, &spec, &[1], 5).is_err());
    }
}
