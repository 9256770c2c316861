use alloc::vec::Vec;

use super::{HeadPrior, ToyModel};
use crate::eot::softmax_in_place;
use crate::linalg::Matrix;
use crate::prior::{relative_log_prior, sink_bias, SinkBiasParams, SpectralPriorParams};
use crate::{Error, Real, Result};

/// The log-prior of one head on an `L x L` grid, split into its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDecomposition {
    /// `u(j)` broadcast down every row.
    pub k_sink: Matrix<f64>,
    /// `kappa(i - j)`.
    pub k_rel: Matrix<f64>,
    /// `k_sink + k_rel` with each full row's mean removed.
    pub k_total_centered: Matrix<f64>,
    /// Row softmax of the total log-prior over `j <= i`; zero above the
    /// diagonal.
    pub induced_prior: Matrix<f64>,
}

impl PriorDecomposition {
    /// `u(j)` for `j < L`.
    pub fn sink_profile(&self) -> Vec<f64> {
        self.k_sink.row(0).to_vec()
    }

    /// Fraction of rows `i >= from` whose induced-prior argmax is the first
    /// key or the previous key.
    pub fn global_or_local_fraction(&self, from: usize) -> f64 {
        let n = self.induced_prior.rows();
        if from >= n {
            return 0.0;
        }
        let hits = (from..n)
            .filter(|&i| {
                let row = &self.induced_prior.row(i)[..=i];
                let arg = argmax(row);
                arg == 0 || arg + 1 == i
            })
            .count();
        hits as f64 / (n - from) as f64
    }
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Evaluates `u` and `kappa` of one head prior on the grid.
pub fn decompose_prior<T: Real>(prior: &HeadPrior<T>, len: usize) -> Result<PriorDecomposition> {
    decompose_parts(&prior.spectral, &prior.sink, len)
}

/// [`decompose_prior`] from bare prior parameters.
pub fn decompose_parts<T: Real>(
    spectral: &SpectralPriorParams<T>,
    sink: &SinkBiasParams<T>,
    len: usize,
) -> Result<PriorDecomposition> {
    if len == 0 {
        return Err(Error::domain("grid length must be positive"));
    }
    let u: Vec<f64> = (0..len).map(|j| Real::to_f64(sink_bias(j, sink))).collect();
    let k_sink = Matrix::from_fn(len, len, |_, j| u[j]);
    let k_rel = Matrix::from_fn(len, len, |i, j| Real::to_f64(relative_log_prior(i, j, spectral)));
    let mut k_total_centered = Matrix::from_fn(len, len, |i, j| k_sink[(i, j)] + k_rel[(i, j)]);
    let mut induced_prior = Matrix::zeros(len, len);
    for i in 0..len {
        let row = k_total_centered.row_mut(i);
        let mean = row.iter().sum::<f64>() / len as f64;
        row.iter_mut().for_each(|v| *v -= mean);
        let out = &mut induced_prior.row_mut(i)[..=i];
        out.copy_from_slice(&k_total_centered.row(i)[..=i]);
        softmax_in_place(out);
    }
    Ok(PriorDecomposition {
        k_sink,
        k_rel,
        k_total_centered,
        induced_prior,
    })
}

/// [`decompose_prior`] of head `head` in layer `layer`.
pub fn extract_prior_decomposition<T: Real>(
    model: &ToyModel<T>,
    layer: usize,
    head: usize,
    len: usize,
) -> Result<PriorDecomposition> {
    decompose_prior(model.head_prior(layer, head)?, len)
}
