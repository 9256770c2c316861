//! A small pre-norm decoder-only transformer with hand-written backprop.
//!
//! Layout per layer: `x += W_o concat_h(head_h(LN1(x)))`, then
//! `x += W_proj gelu(W_fc LN2(x))`. The head type is chosen by
//! [`PositionMode`]; GOAT and key-linear heads carry their own log-prior and
//! see no other positional signal, learned-absolute heads rely on a position
//! embedding table added to the token embeddings.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

// Float math for concrete f64 when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{PositionMode, ToyModelConfig};
use crate::attention::masked_softmax_rows;
use crate::linalg::{gemm_nn, gemm_nt, gemm_tn, Matrix};
use crate::prior::{
    compose_key, compose_query, geometric_frequencies, GoatHeadConfig, SinkBiasParams,
    SpectralPriorParams,
};
use crate::{Error, Real, Result};

/// Positional prior of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPrior<T> {
    pub cfg: GoatHeadConfig,
    pub spectral: SpectralPriorParams<T>,
    pub sink: SinkBiasParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    /// `d_model x d_c`
    pub w_q: Matrix<T>,
    /// `d_model x d_c`
    pub w_k: Matrix<T>,
    /// `d_model x d_h`
    pub w_v: Matrix<T>,
    pub prior: Option<HeadPrior<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_g: Vec<T>,
    pub ln1_b: Vec<T>,
    pub heads: Vec<HeadParams<T>>,
    /// `(heads * d_h) x d_model`
    pub w_o: Matrix<T>,
    pub b_o: Vec<T>,
    pub ln2_g: Vec<T>,
    pub ln2_b: Vec<T>,
    /// `d_model x mlp_hidden`
    pub w_fc: Matrix<T>,
    pub b_fc: Vec<T>,
    /// `mlp_hidden x d_model`
    pub w_proj: Matrix<T>,
    pub b_proj: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    pub cfg: ToyModelConfig,
    /// `vocab x d_model`
    pub tok_emb: Matrix<T>,
    /// `max_positions x d_model`, learned-absolute mode only.
    pub pos_emb: Option<Matrix<T>>,
    pub layers: Vec<LayerParams<T>>,
    pub lnf_g: Vec<T>,
    pub lnf_b: Vec<T>,
    /// `d_model x vocab`
    pub w_out: Matrix<T>,
    pub b_out: Vec<T>,
}

/// A named parameter tensor viewed as a flat slice.
#[derive(Debug)]
pub struct ParamRef<'a, T> {
    pub name: String,
    pub data: &'a [T],
    /// Whether decoupled weight decay applies (projection matrices only).
    pub decay: bool,
}

#[derive(Debug)]
pub struct ParamMut<'a, T> {
    pub name: String,
    pub data: &'a mut [T],
    pub decay: bool,
}

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const POS_INIT_STD: f64 = 0.01;

fn normal_matrix<T: Real>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| T::of(normal.sample(rng)))
}

impl<T: Real> HeadPrior<T> {
    fn init(cfg: &ToyModelConfig, rng: &mut ChaCha8Rng) -> Result<Option<Self>> {
        let Some(head_cfg) = cfg.head_config()? else {
            return Ok(None);
        };
        let (spectral, sink) = match cfg.position {
            PositionMode::Goat => {
                let freqs = geometric_frequencies(cfg.r, cfg.omega_min, cfg.omega_max)?;
                (
                    SpectralPriorParams::zeros(freqs.into_iter().map(T::of).collect())?,
                    SinkBiasParams::init(cfg.sink_features, cfg.sink_hidden, cfg.l_ref, rng)?,
                )
            }
            PositionMode::KeyLinear => (
                SpectralPriorParams::zeros(Vec::new())?,
                SinkBiasParams::zeros(0, 0, cfg.l_ref)?,
            ),
            PositionMode::LearnedAbsolute => unreachable!("no head prior"),
        };
        Ok(Some(Self {
            cfg: head_cfg,
            spectral,
            sink,
        }))
    }

    fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg,
            spectral: SpectralPriorParams::zeros(self.spectral.frequencies().to_vec())
                .expect("frequencies already validated"),
            sink: self.sink.zeros_like(),
        }
    }
}

impl<T: Real> ToyModel<T> {
    /// Small-Gaussian projections, unit LayerNorm gains, and a prior that
    /// starts uniform (zero spectral weights, zero sink output).
    pub fn init(cfg: &ToyModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let d = cfg.d_model;
        let resid_std = INIT_STD / ((2 * cfg.layers) as f64).sqrt();
        let d_c = cfg.content_dim()?;
        let tok_emb = normal_matrix(cfg.vocab_size, d, INIT_STD, &mut rng);
        let pos_emb = match cfg.position {
            PositionMode::LearnedAbsolute => {
                Some(normal_matrix(cfg.max_positions, d, POS_INIT_STD, &mut rng))
            }
            _ => None,
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let mut heads = Vec::with_capacity(cfg.heads);
            for _ in 0..cfg.heads {
                heads.push(HeadParams {
                    w_q: normal_matrix(d, d_c, INIT_STD, &mut rng),
                    w_k: normal_matrix(d, d_c, INIT_STD, &mut rng),
                    w_v: normal_matrix(d, cfg.d_h, INIT_STD, &mut rng),
                    prior: HeadPrior::init(cfg, &mut rng)?,
                });
            }
            layers.push(LayerParams {
                ln1_g: vec![T::one(); d],
                ln1_b: vec![T::zero(); d],
                heads,
                w_o: normal_matrix(cfg.heads * cfg.d_h, d, resid_std, &mut rng),
                b_o: vec![T::zero(); d],
                ln2_g: vec![T::one(); d],
                ln2_b: vec![T::zero(); d],
                w_fc: normal_matrix(d, cfg.mlp_hidden, INIT_STD, &mut rng),
                b_fc: vec![T::zero(); cfg.mlp_hidden],
                w_proj: normal_matrix(cfg.mlp_hidden, d, resid_std, &mut rng),
                b_proj: vec![T::zero(); d],
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            tok_emb,
            pos_emb,
            layers,
            lnf_g: vec![T::one(); d],
            lnf_b: vec![T::zero(); d],
            w_out: normal_matrix(d, cfg.vocab_size, INIT_STD, &mut rng),
            b_out: vec![T::zero(); cfg.vocab_size],
        })
    }

    /// Same shapes, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.data.iter_mut().for_each(|v| *v = T::zero());
        }
        for layer in &mut z.layers {
            for head in &mut layer.heads {
                if let Some(prior) = &head.prior {
                    head.prior = Some(prior.zeros_like());
                }
            }
        }
        z
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> ToyModel<U> {
        let conv = |m: &Matrix<T>| {
            Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|v| U::of(Real::to_f64(*v))).collect())
                .expect("same shape")
        };
        let conv_v = |v: &[T]| v.iter().map(|x| U::of(Real::to_f64(*x))).collect::<Vec<U>>();
        let conv_prior = |p: &HeadPrior<T>| HeadPrior {
            cfg: p.cfg,
            spectral: SpectralPriorParams::new(
                conv_v(p.spectral.frequencies()),
                conv_v(&p.spectral.alpha),
                conv_v(&p.spectral.beta),
            )
            .expect("validated"),
            sink: SinkBiasParams::new(
                U::of(Real::to_f64(p.sink.slope)),
                conv_v(&p.sink.mlp_w1),
                conv_v(&p.sink.mlp_b1),
                conv_v(&p.sink.mlp_w2),
                U::of(Real::to_f64(p.sink.mlp_b2)),
                p.sink.feature_count(),
                p.sink.l_ref(),
            )
            .expect("validated"),
        };
        ToyModel {
            cfg: self.cfg.clone(),
            tok_emb: conv(&self.tok_emb),
            pos_emb: self.pos_emb.as_ref().map(conv),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_g: conv_v(&l.ln1_g),
                    ln1_b: conv_v(&l.ln1_b),
                    heads: l
                        .heads
                        .iter()
                        .map(|h| HeadParams {
                            w_q: conv(&h.w_q),
                            w_k: conv(&h.w_k),
                            w_v: conv(&h.w_v),
                            prior: h.prior.as_ref().map(conv_prior),
                        })
                        .collect(),
                    w_o: conv(&l.w_o),
                    b_o: conv_v(&l.b_o),
                    ln2_g: conv_v(&l.ln2_g),
                    ln2_b: conv_v(&l.ln2_b),
                    w_fc: conv(&l.w_fc),
                    b_fc: conv_v(&l.b_fc),
                    w_proj: conv(&l.w_proj),
                    b_proj: conv_v(&l.b_proj),
                })
                .collect(),
            lnf_g: conv_v(&self.lnf_g),
            lnf_b: conv_v(&self.lnf_b),
            w_out: conv(&self.w_out),
            b_out: conv_v(&self.b_out),
        }
    }

    /// Every trainable tensor in a fixed order. Prior frequencies are fixed
    /// and not listed.
    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name: String, data: &'_ [T], decay: bool| {
            out.push((name, data as *const [T], decay));
        };
        // Collect raw pointers first so the closure does not need to outlive
        // the borrow of `self`; converted back below.
        push("tok_emb".into(), self.tok_emb.as_slice(), false);
        if let Some(p) = &self.pos_emb {
            push("pos_emb".into(), p.as_slice(), false);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            push(format!("layers.{l}.ln1_g"), &layer.ln1_g, false);
            push(format!("layers.{l}.ln1_b"), &layer.ln1_b, false);
            for (h, head) in layer.heads.iter().enumerate() {
                let pre = format!("layers.{l}.heads.{h}");
                push(format!("{pre}.w_q"), head.w_q.as_slice(), true);
                push(format!("{pre}.w_k"), head.w_k.as_slice(), true);
                push(format!("{pre}.w_v"), head.w_v.as_slice(), true);
                if let Some(p) = &head.prior {
                    push(format!("{pre}.alpha"), &p.spectral.alpha, false);
                    push(format!("{pre}.beta"), &p.spectral.beta, false);
                    push(format!("{pre}.slope"), core::slice::from_ref(&p.sink.slope), false);
                    push(format!("{pre}.mlp_w1"), &p.sink.mlp_w1, false);
                    push(format!("{pre}.mlp_b1"), &p.sink.mlp_b1, false);
                    push(format!("{pre}.mlp_w2"), &p.sink.mlp_w2, false);
                    push(format!("{pre}.mlp_b2"), core::slice::from_ref(&p.sink.mlp_b2), false);
                }
            }
            push(format!("layers.{l}.w_o"), layer.w_o.as_slice(), true);
            push(format!("layers.{l}.b_o"), &layer.b_o, false);
            push(format!("layers.{l}.ln2_g"), &layer.ln2_g, false);
            push(format!("layers.{l}.ln2_b"), &layer.ln2_b, false);
            push(format!("layers.{l}.w_fc"), layer.w_fc.as_slice(), true);
            push(format!("layers.{l}.b_fc"), &layer.b_fc, false);
            push(format!("layers.{l}.w_proj"), layer.w_proj.as_slice(), true);
            push(format!("layers.{l}.b_proj"), &layer.b_proj, false);
        }
        push("lnf_g".into(), &self.lnf_g, false);
        push("lnf_b".into(), &self.lnf_b, false);
        push("w_out".into(), self.w_out.as_slice(), true);
        push("b_out".into(), &self.b_out, false);
        out.into_iter()
            .map(|(name, ptr, decay)| ParamRef {
                name,
                // SAFETY: every pointer was derived from a shared borrow of
                // `self` that is still alive for the returned lifetime.
                data: unsafe { &*ptr },
                decay,
            })
            .collect()
    }

    /// Mutable views in the same order as [`ToyModel::params`].
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out: Vec<ParamMut<'_, T>> = Vec::new();
        let (tok_emb, pos_emb, layers, lnf_g, lnf_b, w_out, b_out) = (
            &mut self.tok_emb,
            &mut self.pos_emb,
            &mut self.layers,
            &mut self.lnf_g,
            &mut self.lnf_b,
            &mut self.w_out,
            &mut self.b_out,
        );
        let mut push = |name: String, data, decay| out.push(ParamMut { name, data, decay });
        push("tok_emb".into(), tok_emb.as_mut_slice(), false);
        if let Some(p) = pos_emb {
            push("pos_emb".into(), p.as_mut_slice(), false);
        }
        for (l, layer) in layers.iter_mut().enumerate() {
            push(format!("layers.{l}.ln1_g"), &mut layer.ln1_g[..], false);
            push(format!("layers.{l}.ln1_b"), &mut layer.ln1_b[..], false);
            for (h, head) in layer.heads.iter_mut().enumerate() {
                let pre = format!("layers.{l}.heads.{h}");
                push(format!("{pre}.w_q"), head.w_q.as_mut_slice(), true);
                push(format!("{pre}.w_k"), head.w_k.as_mut_slice(), true);
                push(format!("{pre}.w_v"), head.w_v.as_mut_slice(), true);
                if let Some(p) = &mut head.prior {
                    push(format!("{pre}.alpha"), &mut p.spectral.alpha[..], false);
                    push(format!("{pre}.beta"), &mut p.spectral.beta[..], false);
                    push(format!("{pre}.slope"), core::slice::from_mut(&mut p.sink.slope), false);
                    push(format!("{pre}.mlp_w1"), &mut p.sink.mlp_w1[..], false);
                    push(format!("{pre}.mlp_b1"), &mut p.sink.mlp_b1[..], false);
                    push(format!("{pre}.mlp_w2"), &mut p.sink.mlp_w2[..], false);
                    push(format!("{pre}.mlp_b2"), core::slice::from_mut(&mut p.sink.mlp_b2), false);
                }
            }
            push(format!("layers.{l}.w_o"), layer.w_o.as_mut_slice(), true);
            push(format!("layers.{l}.b_o"), &mut layer.b_o[..], false);
            push(format!("layers.{l}.ln2_g"), &mut layer.ln2_g[..], false);
            push(format!("layers.{l}.ln2_b"), &mut layer.ln2_b[..], false);
            push(format!("layers.{l}.w_fc"), layer.w_fc.as_mut_slice(), true);
            push(format!("layers.{l}.b_fc"), &mut layer.b_fc[..], false);
            push(format!("layers.{l}.w_proj"), layer.w_proj.as_mut_slice(), true);
            push(format!("layers.{l}.b_proj"), &mut layer.b_proj[..], false);
        }
        push("lnf_g".into(), &mut lnf_g[..], false);
        push("lnf_b".into(), &mut lnf_b[..], false);
        push("w_out".into(), w_out.as_mut_slice(), true);
        push("b_out".into(), &mut b_out[..], false);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    pub fn head_prior(&self, layer: usize, head: usize) -> Result<&HeadPrior<T>> {
        self.layers
            .get(layer)
            .and_then(|l| l.heads.get(head))
            .ok_or_else(|| Error::domain(format!("no head {head} in layer {layer}")))?
            .prior
            .as_ref()
            .ok_or_else(|| Error::domain("head has no positional prior"))
    }
}

/// Saved LayerNorm statistics.
#[derive(Debug, Clone)]
struct LnCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Real>(x: &Matrix<T>, g: &[T], b: &[T]) -> (Matrix<T>, LnCache<T>) {
    let (n, d) = (x.rows(), x.cols());
    let mut xhat = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    let inv_d = T::one() / T::of(d as f64);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + T::of(LN_EPS)).sqrt();
        rstd.push(r);
        for k in 0..d {
            let h = (row[k] - mean) * r;
            xhat[(i, k)] = h;
            y[(i, k)] = h * g[k] + b[k];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx` and accumulates gain/bias gradients.
fn layer_norm_backward<T: Real>(
    dy: &Matrix<T>,
    cache: &LnCache<T>,
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
) -> Matrix<T> {
    let (n, d) = (dy.rows(), dy.cols());
    let inv_d = T::one() / T::of(d as f64);
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let (dyr, xh) = (dy.row(i), cache.xhat.row(i));
        let (mut mean_dxhat, mut mean_dxhat_xhat) = (T::zero(), T::zero());
        for k in 0..d {
            dg[k] += dyr[k] * xh[k];
            db[k] += dyr[k];
            dxhat[k] = dyr[k] * g[k];
            mean_dxhat += dxhat[k];
            mean_dxhat_xhat += dxhat[k] * xh[k];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let r = cache.rstd[i];
        for (k, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = r * (dxhat[k] - mean_dxhat - xh[k] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let k = T::of((2.0 / core::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + T::of(GELU_C) * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let k = T::of((2.0 / core::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let t = (k * (x + T::of(GELU_C) * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::of(3.0 * GELU_C) * x * x)
}

/// `x W + b` for row-major `x: n x k`, `w: k x m`.
fn affine<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: Option<&[T]>) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), w.cols());
    if let Some(b) = b {
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(b);
        }
    }
    gemm_nn(x.as_slice(), w.as_slice(), out.as_mut_slice(), x.rows(), x.cols(), w.cols());
    out
}

#[derive(Debug, Clone)]
struct HeadCache<T> {
    q_comp: Matrix<T>,
    k_comp: Matrix<T>,
    v: Matrix<T>,
    weights: Matrix<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Matrix<T>,
    heads: Vec<HeadCache<T>>,
    concat: Matrix<T>,
    ln2: LnCache<T>,
    b: Matrix<T>,
    h_pre: Matrix<T>,
    h_act: Matrix<T>,
}

/// Activations of one forward pass, needed by [`ToyModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    tokens: Vec<usize>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    y: Matrix<T>,
    /// `L x vocab` next-token logits; row `t` predicts token `t + 1`.
    pub logits: Matrix<T>,
}

impl<T: Real> ForwardCache<T> {
    /// Attention weights of `(layer, head)`.
    pub fn attention_weights(&self, layer: usize, head: usize) -> &Matrix<T> {
        &self.layers[layer].heads[head].weights
    }
}

impl<T: Real> ToyModel<T> {
    fn head_forward(
        &self,
        head: &HeadParams<T>,
        a: &Matrix<T>,
    ) -> Result<HeadCache<T>> {
        let n = a.rows();
        let q_c = affine(a, &head.w_q, None);
        let k_c = affine(a, &head.w_k, None);
        let v = affine(a, &head.w_v, None);
        let d_h = self.cfg.d_h;
        let (q_comp, k_comp) = match &head.prior {
            Some(p) => {
                let mut q = Matrix::zeros(n, d_h);
                let mut k = Matrix::zeros(n, d_h);
                for i in 0..n {
                    compose_query(q_c.row(i), i, &p.spectral, &p.cfg, q.row_mut(i))?;
                    compose_key(k_c.row(i), i, &p.spectral, &p.sink, &p.cfg, k.row_mut(i))?;
                }
                (q, k)
            }
            None => (q_c, k_c),
        };
        let mut weights = Matrix::zeros(n, n);
        gemm_nt(q_comp.as_slice(), k_comp.as_slice(), weights.as_mut_slice(), n, d_h, n);
        let scale = T::one() / T::of(d_h as f64).sqrt();
        for w in weights.as_mut_slice() {
            *w *= scale;
        }
        if weights.as_slice().iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("attention scores"));
        }
        masked_softmax_rows(&mut weights, true)?;
        Ok(HeadCache {
            q_comp,
            k_comp,
            v,
            weights,
        })
    }

    /// Runs the model on one token sequence.
    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardCache<T>> {
        let n = tokens.len();
        let d = self.cfg.d_model;
        if n == 0 {
            return Err(Error::domain("empty token sequence"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::domain(format!(
                "token {bad} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        let mut x = Matrix::zeros(n, d);
        for (t, &tok) in tokens.iter().enumerate() {
            x.row_mut(t).copy_from_slice(self.tok_emb.row(tok));
        }
        if let Some(pe) = &self.pos_emb {
            if n > pe.rows() {
                return Err(Error::domain(format!(
                    "sequence of {n} exceeds the {} learned positions",
                    pe.rows()
                )));
            }
            for t in 0..n {
                for (xv, &pv) in x.row_mut(t).iter_mut().zip(pe.row(t)) {
                    *xv += pv;
                }
            }
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a, ln1) = layer_norm(&x, &layer.ln1_g, &layer.ln1_b);
            let mut heads = Vec::with_capacity(layer.heads.len());
            let width = self.cfg.heads * self.cfg.d_h;
            let mut concat = Matrix::zeros(n, width);
            for (h, head) in layer.heads.iter().enumerate() {
                let hc = self.head_forward(head, &a)?;
                let out = hc.weights.matmul(&hc.v)?;
                let off = h * self.cfg.d_h;
                for i in 0..n {
                    concat.row_mut(i)[off..off + self.cfg.d_h].copy_from_slice(out.row(i));
                }
                heads.push(hc);
            }
            let attn = affine(&concat, &layer.w_o, Some(&layer.b_o));
            for (xv, &av) in x.as_mut_slice().iter_mut().zip(attn.as_slice()) {
                *xv += av;
            }
            let (b, ln2) = layer_norm(&x, &layer.ln2_g, &layer.ln2_b);
            let h_pre = affine(&b, &layer.w_fc, Some(&layer.b_fc));
            let mut h_act = h_pre.clone();
            h_act.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            let mlp = affine(&h_act, &layer.w_proj, Some(&layer.b_proj));
            for (xv, &mv) in x.as_mut_slice().iter_mut().zip(mlp.as_slice()) {
                *xv += mv;
            }
            caches.push(LayerCache {
                ln1,
                a,
                heads,
                concat,
                ln2,
                b,
                h_pre,
                h_act,
            });
        }
        let (y, lnf) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        let logits = affine(&y, &self.w_out, Some(&self.b_out));
        Ok(ForwardCache {
            tokens: tokens.to_vec(),
            layers: caches,
            lnf,
            y,
            logits,
        })
    }

    /// Summed next-token cross-entropy over positions `0..L-1` (each row `t`
    /// predicts token `t + 1`) and the number of terms.
    pub fn sequence_loss(&self, cache: &ForwardCache<T>) -> (T, usize) {
        let n = cache.tokens.len();
        let mut total = T::zero();
        for t in 0..n.saturating_sub(1) {
            let row = cache.logits.row(t);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            total += lse - row[cache.tokens[t + 1]];
        }
        (total, n.saturating_sub(1))
    }

    /// Mean cross-entropy over a batch of sequences.
    pub fn batch_loss(&self, batch: &[Vec<usize>]) -> Result<T> {
        let mut total = T::zero();
        let mut count = 0;
        for seq in batch {
            let cache = self.forward(seq)?;
            let (l, c) = self.sequence_loss(&cache);
            total += l;
            count += c;
        }
        if count == 0 {
            return Err(Error::domain("batch has no prediction targets"));
        }
        Ok(total / T::of(count as f64))
    }

    /// Accumulates `scale * d(sequence_loss)/d(theta)` into `grads`.
    pub fn backward(&self, cache: &ForwardCache<T>, scale: T, grads: &mut ToyModel<T>) -> Result<()> {
        let n = cache.tokens.len();
        let (d, v) = (self.cfg.d_model, self.cfg.vocab_size);

        let mut dlogits = Matrix::zeros(n, v);
        for t in 0..n.saturating_sub(1) {
            let row = dlogits.row_mut(t);
            row.copy_from_slice(cache.logits.row(t));
            crate::eot::softmax_in_place(row);
            row[cache.tokens[t + 1]] -= T::one();
            row.iter_mut().for_each(|g| *g *= scale);
        }
        gemm_tn(cache.y.as_slice(), dlogits.as_slice(), grads.w_out.as_mut_slice(), n, d, v);
        for t in 0..n {
            for (g, &dl) in grads.b_out.iter_mut().zip(dlogits.row(t)) {
                *g += dl;
            }
        }
        let dy = dlogits.matmul_t(&self.w_out)?;
        let mut dx = layer_norm_backward(&dy, &cache.lnf, &self.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);

        for (l, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let gl = &mut grads.layers[l];
            // MLP branch.
            let f = self.cfg.mlp_hidden;
            gemm_tn(lc.h_act.as_slice(), dx.as_slice(), gl.w_proj.as_mut_slice(), n, f, d);
            for t in 0..n {
                for (g, &dv) in gl.b_proj.iter_mut().zip(dx.row(t)) {
                    *g += dv;
                }
            }
            let mut dh = dx.matmul_t(&layer.w_proj)?;
            for (g, &pre) in dh.as_mut_slice().iter_mut().zip(lc.h_pre.as_slice()) {
                *g *= gelu_grad(pre);
            }
            gemm_tn(lc.b.as_slice(), dh.as_slice(), gl.w_fc.as_mut_slice(), n, d, f);
            for t in 0..n {
                for (g, &dv) in gl.b_fc.iter_mut().zip(dh.row(t)) {
                    *g += dv;
                }
            }
            let db = dh.matmul_t(&layer.w_fc)?;
            let dmid = layer_norm_backward(&db, &lc.ln2, &layer.ln2_g, &mut gl.ln2_g, &mut gl.ln2_b);
            for (x, &m) in dx.as_mut_slice().iter_mut().zip(dmid.as_slice()) {
                *x += m;
            }

            // Attention branch.
            let width = self.cfg.heads * self.cfg.d_h;
            gemm_tn(lc.concat.as_slice(), dx.as_slice(), gl.w_o.as_mut_slice(), n, width, d);
            for t in 0..n {
                for (g, &dv) in gl.b_o.iter_mut().zip(dx.row(t)) {
                    *g += dv;
                }
            }
            let dconcat = dx.matmul_t(&layer.w_o)?;
            let mut da = Matrix::zeros(n, d);
            for (h, (head, hc)) in layer.heads.iter().zip(&lc.heads).enumerate() {
                let gh = &mut gl.heads[h];
                let d_h = self.cfg.d_h;
                let off = h * d_h;
                let d_out = Matrix::from_fn(n, d_h, |i, k| dconcat[(i, off + k)]);
                // out = P V
                let mut dv = Matrix::zeros(n, d_h);
                gemm_tn(hc.weights.as_slice(), d_out.as_slice(), dv.as_mut_slice(), n, n, d_h);
                let dp = d_out.matmul_t(&hc.v)?;
                let scale_qk = T::one() / T::of(d_h as f64).sqrt();
                let mut dz = Matrix::zeros(n, n);
                for i in 0..n {
                    let (p, g) = (hc.weights.row(i), dp.row(i));
                    let inner: T = p[..=i].iter().zip(&g[..=i]).map(|(&a, &b)| a * b).sum();
                    let row = dz.row_mut(i);
                    for j in 0..=i {
                        row[j] = p[j] * (g[j] - inner) * scale_qk;
                    }
                }
                let dq_comp = dz.matmul(&hc.k_comp)?;
                let mut dk_comp = Matrix::zeros(n, d_h);
                gemm_tn(dz.as_slice(), hc.q_comp.as_slice(), dk_comp.as_mut_slice(), n, n, d_h);

                let (dq_c, dk_c) = match &head.prior {
                    Some(p) => {
                        let gp = gh.prior.as_mut().expect("gradient mirrors model");
                        split_composite_grads(p, gp, &dq_comp, &dk_comp)
                    }
                    None => (dq_comp, dk_comp),
                };
                let d_c = dq_c.cols();
                gemm_tn(lc.a.as_slice(), dq_c.as_slice(), gh.w_q.as_mut_slice(), n, d, d_c);
                gemm_tn(lc.a.as_slice(), dk_c.as_slice(), gh.w_k.as_mut_slice(), n, d, d_c);
                gemm_tn(lc.a.as_slice(), dv.as_slice(), gh.w_v.as_mut_slice(), n, d, d_h);
                gemm_nt(dq_c.as_slice(), head.w_q.as_slice(), da.as_mut_slice(), n, d_c, d);
                gemm_nt(dk_c.as_slice(), head.w_k.as_slice(), da.as_mut_slice(), n, d_c, d);
                gemm_nt(dv.as_slice(), head.w_v.as_slice(), da.as_mut_slice(), n, d_h, d);
            }
            let din = layer_norm_backward(&da, &lc.ln1, &layer.ln1_g, &mut gl.ln1_g, &mut gl.ln1_b);
            for (x, &m) in dx.as_mut_slice().iter_mut().zip(din.as_slice()) {
                *x += m;
            }
        }

        for (t, &tok) in cache.tokens.iter().enumerate() {
            for (g, &dv) in grads.tok_emb.row_mut(tok).iter_mut().zip(dx.row(t)) {
                *g += dv;
            }
        }
        if let Some(gpe) = &mut grads.pos_emb {
            for t in 0..n {
                for (g, &dv) in gpe.row_mut(t).iter_mut().zip(dx.row(t)) {
                    *g += dv;
                }
            }
        }
        Ok(())
    }

    /// Mean batch loss and its gradient.
    pub fn loss_and_grad(&self, batch: &[Vec<usize>]) -> Result<(T, ToyModel<T>)> {
        let mut grads = self.zeros_like();
        let count: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
        if count == 0 {
            return Err(Error::domain("batch has no prediction targets"));
        }
        let scale = T::one() / T::of(count as f64);
        let mut total = T::zero();
        for seq in batch {
            let cache = self.forward(seq)?;
            total += self.sequence_loss(&cache).0;
            self.backward(&cache, scale, &mut grads)?;
        }
        Ok((total * scale, grads))
    }
}

/// Splits composite-lane gradients into content gradients and accumulates
/// the prior parameter gradients.
fn split_composite_grads<T: Real>(
    prior: &HeadPrior<T>,
    grad: &mut HeadPrior<T>,
    dq_comp: &Matrix<T>,
    dk_comp: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>) {
    let cfg = &prior.cfg;
    let (n, d_c, r) = (dq_comp.rows(), cfg.d_c(), cfg.r());
    let sqrt_dh = T::of(cfg.d_h() as f64).sqrt();
    let content_scale = T::of(cfg.d_h() as f64 / d_c as f64).sqrt();
    let dq_c = Matrix::from_fn(n, d_c, |i, k| dq_comp[(i, k)] * content_scale);
    let dk_c = Matrix::from_fn(n, d_c, |i, k| dk_comp[(i, k)]);
    let freqs = prior.spectral.frequencies();
    for i in 0..n {
        let row = &dq_comp.row(i)[d_c..d_c + 2 * r];
        let pos = T::of(i as f64);
        for k in 0..r {
            let (s, c) = (freqs[k] * pos).sin_cos();
            let (g0, g1) = (row[2 * k] * sqrt_dh, row[2 * k + 1] * sqrt_dh);
            grad.spectral.alpha[k] += g0 * c + g1 * s;
            grad.spectral.beta[k] += g0 * s - g1 * c;
        }
    }
    for j in 0..n {
        let du = dk_comp[(j, cfg.sink_lane())];
        prior.sink.accumulate_grad(j, du, &mut grad.sink);
    }
    (dq_c, dk_c)
}
