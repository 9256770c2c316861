//! Reference scaled dot-product attention over composite vectors.
//!
//! [`sdpa`] is the product path: an unmodified `softmax(q'k'^T / sqrt(d_h))`
//! kernel applied to composite queries and keys. [`explicit_bias_attention`]
//! adds a dense `L x L` bias to content scores instead; it costs `O(L^2)`
//! memory and exists to cross-check the composite path.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

// Float math for concrete f64 when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

use crate::eot::softmax_in_place;
use crate::error::check_len;
use crate::linalg::{dot, Matrix};
use crate::prior::{
    compose_key, compose_query, log_prior, GoatHeadConfig, SinkBiasParams, SpectralPriorParams,
};
use crate::{Error, Real, Result};

/// Composite queries and keys (`L x d_h`) with content-only values.
#[derive(Debug, Clone)]
pub struct AttentionBatch<T> {
    pub queries: Matrix<T>,
    pub keys: Matrix<T>,
    pub values: Matrix<T>,
    pub causal: bool,
}

impl<T: Real> AttentionBatch<T> {
    pub fn new(queries: Matrix<T>, keys: Matrix<T>, values: Matrix<T>, causal: bool) -> Result<Self> {
        check_len("key rows", queries.rows(), keys.rows())?;
        check_len("value rows", queries.rows(), values.rows())?;
        check_len("key width", queries.cols(), keys.cols())?;
        Ok(Self {
            queries,
            keys,
            values,
            causal,
        })
    }
}

/// Fills `logits` (`L x L`, pre-zeroed) with `scale * q_i·k_j` and masks
/// `j > i` with `-inf` when causal, then row-softmaxes in place.
pub(crate) fn masked_softmax_rows<T: Real>(logits: &mut Matrix<T>, causal: bool) -> Result<()> {
    let n = logits.rows();
    for i in 0..n {
        let row = logits.row_mut(i);
        if causal {
            for v in &mut row[i + 1..] {
                *v = T::neg_infinity();
            }
        }
        if !softmax_in_place(row) {
            return Err(Error::domain(alloc::format!(
                "row {i} has no admissible keys"
            )));
        }
    }
    Ok(())
}

/// Returns `(weights · values, weights)` with
/// `weights = softmax(q' k'^T / sqrt(d_h))` under the optional causal mask.
pub fn sdpa<T: Real>(batch: &AttentionBatch<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let scale = T::one() / T::of(batch.queries.cols() as f64).sqrt();
    let mut weights = batch.queries.matmul_t(&batch.keys)?;
    for v in weights.as_mut_slice() {
        *v *= scale;
    }
    masked_softmax_rows(&mut weights, batch.causal)?;
    let outputs = weights.matmul(&batch.values)?;
    Ok((outputs, weights))
}

/// Row-softmax of `q_c k_c^T / sqrt(d_c) + bias`, then times `values`.
pub fn explicit_bias_attention<T: Real>(
    q_c: &Matrix<T>,
    k_c: &Matrix<T>,
    values: &Matrix<T>,
    bias: &Matrix<T>,
    causal: bool,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let n = q_c.rows();
    check_len("key rows", n, k_c.rows())?;
    check_len("value rows", n, values.rows())?;
    check_len("bias rows", n, bias.rows())?;
    check_len("bias cols", n, bias.cols())?;
    let scale = T::one() / T::of(q_c.cols() as f64).sqrt();
    let mut weights = q_c.matmul_t(k_c)?;
    for (w, &b) in weights.as_mut_slice().iter_mut().zip(bias.as_slice()) {
        *w = *w * scale + b;
    }
    masked_softmax_rows(&mut weights, causal)?;
    let outputs = weights.matmul(values)?;
    Ok((outputs, weights))
}

/// Dense `L x L` log-prior matrix `K(i, j) = kappa(i - j) + u(j)`.
pub fn dense_log_prior<T: Real>(
    len: usize,
    spectral: &SpectralPriorParams<T>,
    sink: &SinkBiasParams<T>,
) -> Matrix<T> {
    let u: Vec<T> = (0..len).map(|j| sink.eval(j)).collect();
    Matrix::from_fn(len, len, |i, j| {
        crate::prior::relative_log_prior(i, j, spectral) + u[j]
    })
}

/// Composite queries and keys for content rows `q_c`, `k_c` at positions
/// `0..L`.
pub fn composite_matrices<T: Real>(
    q_c: &Matrix<T>,
    k_c: &Matrix<T>,
    spectral: &SpectralPriorParams<T>,
    sink: &SinkBiasParams<T>,
    cfg: &GoatHeadConfig,
) -> Result<(Matrix<T>, Matrix<T>)> {
    check_len("key rows", q_c.rows(), k_c.rows())?;
    let n = q_c.rows();
    let mut q = Matrix::zeros(n, cfg.d_h());
    let mut k = Matrix::zeros(n, cfg.d_h());
    for i in 0..n {
        compose_query(q_c.row(i), i, spectral, cfg, q.row_mut(i))?;
        compose_key(k_c.row(i), i, spectral, sink, cfg, k.row_mut(i))?;
    }
    Ok((q, k))
}

/// Parameters of one GOAT head. Query and key projections only produce the
/// content lanes; positional lanes come from the prior, so the effective
/// projection is block-diagonal.
#[derive(Debug, Clone)]
pub struct GoatHead<T> {
    pub cfg: GoatHeadConfig,
    /// `d_model x d_c`.
    pub w_q: Matrix<T>,
    /// `d_model x d_c`.
    pub w_k: Matrix<T>,
    /// `d_model x d_h`; values use the full head width.
    pub w_v: Matrix<T>,
    pub spectral: SpectralPriorParams<T>,
    pub sink: SinkBiasParams<T>,
}

impl<T: Real> GoatHead<T> {
    pub fn new(
        cfg: GoatHeadConfig,
        w_q: Matrix<T>,
        w_k: Matrix<T>,
        w_v: Matrix<T>,
        spectral: SpectralPriorParams<T>,
        sink: SinkBiasParams<T>,
    ) -> Result<Self> {
        let d_model = w_q.rows();
        check_len("w_q cols", cfg.d_c(), w_q.cols())?;
        check_len("w_k rows", d_model, w_k.rows())?;
        check_len("w_k cols", cfg.d_c(), w_k.cols())?;
        check_len("w_v rows", d_model, w_v.rows())?;
        check_len("w_v cols", cfg.d_h(), w_v.cols())?;
        check_len("spectral rank", cfg.r(), spectral.rank())?;
        Ok(Self {
            cfg,
            w_q,
            w_k,
            w_v,
            spectral,
            sink,
        })
    }

    /// Gaussian projections with variance `1/d_model` and the given priors.
    pub fn random<G: Rng + ?Sized>(
        cfg: GoatHeadConfig,
        d_model: usize,
        spectral: SpectralPriorParams<T>,
        sink: SinkBiasParams<T>,
        rng: &mut G,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, 1.0 / (d_model as f64).sqrt())
            .map_err(|_| Error::domain("bad d_model"))?;
        let mut draw = |c: usize| Matrix::from_fn(d_model, c, |_, _| T::of(normal.sample(rng)));
        let w_q = draw(cfg.d_c());
        let w_k = draw(cfg.d_c());
        let w_v = draw(cfg.d_h());
        Self::new(cfg, w_q, w_k, w_v, spectral, sink)
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    /// Content projections `(q_c, k_c, v)` of `hidden` (`L x d_model`).
    pub fn project(&self, hidden: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        check_len("hidden width", self.d_model(), hidden.cols())?;
        Ok((
            hidden.matmul(&self.w_q)?,
            hidden.matmul(&self.w_k)?,
            hidden.matmul(&self.w_v)?,
        ))
    }

    /// Attention weights and output through the composite-vector path.
    pub fn forward_with_weights(&self, hidden: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let (q_c, k_c, v) = self.project(hidden)?;
        let (q, k) = composite_matrices(&q_c, &k_c, &self.spectral, &self.sink, &self.cfg)?;
        sdpa(&AttentionBatch::new(q, k, v, self.cfg.causal)?)
    }

    /// Same computation through the dense-bias reference path.
    pub fn forward_dense(&self, hidden: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let (q_c, k_c, v) = self.project(hidden)?;
        let bias = dense_log_prior(hidden.rows(), &self.spectral, &self.sink);
        explicit_bias_attention(&q_c, &k_c, &v, &bias, self.cfg.causal)
    }
}

/// Output (`L x d_h`) of one GOAT head on `hidden` (`L x d_model`).
pub fn goat_head_forward<T: Real>(hidden: &Matrix<T>, head: &GoatHead<T>) -> Result<Matrix<T>> {
    head.forward_with_weights(hidden).map(|(out, _)| out)
}

/// Several GOAT heads followed by an output projection.
#[derive(Debug, Clone)]
pub struct GoatAttention<T> {
    pub heads: Vec<GoatHead<T>>,
    /// `(heads * d_h) x d_model`.
    pub w_o: Matrix<T>,
}

impl<T: Real> GoatAttention<T> {
    pub fn new(heads: Vec<GoatHead<T>>, w_o: Matrix<T>) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::domain("need at least one head"))?;
        let width: usize = heads.iter().map(|h| h.cfg.d_h()).sum();
        check_len("w_o rows", width, w_o.rows())?;
        for h in &heads {
            check_len("head d_model", first.d_model(), h.d_model())?;
        }
        Ok(Self { heads, w_o })
    }

    pub fn forward(&self, hidden: &Matrix<T>) -> Result<Matrix<T>> {
        let n = hidden.rows();
        let mut concat = Matrix::zeros(n, self.w_o.rows());
        let mut offset = 0;
        for head in &self.heads {
            let out = goat_head_forward(hidden, head)?;
            let w = head.cfg.d_h();
            for i in 0..n {
                concat.row_mut(i)[offset..offset + w].copy_from_slice(out.row(i));
            }
            offset += w;
        }
        concat.matmul(&self.w_o)
    }
}

/// Logit of one `(i, j)` pair through both routes; handy for spot checks.
pub fn logit_pair<T: Real>(
    q_c: &[T],
    k_c: &[T],
    i: usize,
    j: usize,
    spectral: &SpectralPriorParams<T>,
    sink: &SinkBiasParams<T>,
    cfg: &GoatHeadConfig,
) -> Result<(T, T)> {
    let (q, k) = crate::prior::compose_vectors(q_c, k_c, i, j, spectral, sink, cfg)?;
    let composite = dot(&q, &k) / T::of(cfg.d_h() as f64).sqrt();
    let explicit =
        dot(q_c, k_c) / T::of(cfg.d_c() as f64).sqrt() + log_prior(i, j, spectral, sink);
    Ok((composite, explicit))
}

/// Row sums of a weights matrix, for stochasticity checks.
pub fn row_sums<T: Real>(weights: &Matrix<T>) -> Vec<T> {
    (0..weights.rows())
        .map(|i| weights.row(i).iter().copied().sum())
        .collect()
}
