//! The GOAT log-prior `K(i, j) = kappa(i - j) + u(j)`.
//!
//! `kappa` is a finite trigonometric polynomial over fixed frequencies,
//!
//! ```text
//! kappa(d) = sum_r alpha_r cos(w_r d) + beta_r sin(w_r d)
//! ```
//!
//! and factors exactly as `<q_rel(i), k_rel(j)>` where `k_rel` is the Fourier
//! feature of `j` and `q_rel` is a rotation of it scaled by `(alpha, beta)`.
//! `u` is a key-only bias (linear trend plus a small tanh MLP over
//! sinusoidal features), realized with one constant query lane.
//!
//! Composite vectors use the lane layout
//! `[content (d_c) | relative (2R) | sink (1) | zero pad (1)]`, pre-scaled so
//! that an unmodified `q'·k'/sqrt(d_h)` kernel yields
//! `q_c·k_c/sqrt(d_c) + K(i, j)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

// Float math for concrete f64 when std is not linked.
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::check_len;
use crate::{Error, Real, Result};

/// Smallest default frequency: one full period over 4096 positions.
pub const DEFAULT_OMEGA_MIN: f64 = 2.0 * PI / 4096.0;
/// Largest default frequency: the Nyquist rate on the integer lattice.
pub const DEFAULT_OMEGA_MAX: f64 = PI;
pub const DEFAULT_SINK_HIDDEN: usize = 16;
pub const DEFAULT_SINK_FEATURES: usize = 8;

/// `R` frequencies in geometric progression from `omega_min` to `omega_max`
/// inclusive.
pub fn geometric_frequencies(r: usize, omega_min: f64, omega_max: f64) -> Result<Vec<f64>> {
    if r == 0 {
        return Ok(Vec::new());
    }
    if !(omega_min > 0.0 && omega_min < omega_max && omega_max <= PI) {
        return Err(Error::domain(alloc::format!(
            "need 0 < omega_min < omega_max <= pi, got [{omega_min}, {omega_max}]"
        )));
    }
    if r == 1 {
        return Ok(vec![omega_min]);
    }
    let ratio = omega_max / omega_min;
    let mut out: Vec<f64> = (0..r)
        .map(|k| omega_min * ratio.powf(k as f64 / (r - 1) as f64))
        .collect();
    out[r - 1] = omega_max;
    Ok(out)
}

#[inline]
fn displacement<T: Real>(i: usize, j: usize) -> T {
    T::of(i as f64 - j as f64)
}

/// Frequencies and spectral weights of the relative log-prior.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPriorParams<T = f64> {
    frequencies: Vec<T>,
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> SpectralPriorParams<T> {
    pub fn new(frequencies: Vec<T>, alpha: Vec<T>, beta: Vec<T>) -> Result<Self> {
        check_len("spectral alpha", frequencies.len(), alpha.len())?;
        check_len("spectral beta", frequencies.len(), beta.len())?;
        if frequencies.iter().any(|w| !(*w > T::zero())) {
            return Err(Error::domain("frequencies must be strictly positive"));
        }
        if frequencies.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("frequencies must be strictly increasing"));
        }
        Ok(Self {
            frequencies,
            alpha,
            beta,
        })
    }

    /// Zero weights: the relative prior is identically zero.
    pub fn zeros(frequencies: Vec<T>) -> Result<Self> {
        let r = frequencies.len();
        Self::new(frequencies, vec![T::zero(); r], vec![T::zero(); r])
    }

    pub fn random<G: Rng + ?Sized>(frequencies: Vec<T>, scale: f64, rng: &mut G) -> Result<Self> {
        let r = frequencies.len();
        let normal = Normal::new(0.0, scale).map_err(|_| Error::domain("bad scale"))?;
        let alpha = (0..r).map(|_| T::of(normal.sample(rng))).collect();
        let beta = (0..r).map(|_| T::of(normal.sample(rng))).collect();
        Self::new(frequencies, alpha, beta)
    }

    #[inline]
    pub fn frequencies(&self) -> &[T] {
        &self.frequencies
    }

    /// Number of frequencies `R`.
    #[inline]
    pub fn rank(&self) -> usize {
        self.frequencies.len()
    }

    /// `kappa(d)` for an integer displacement `d = i - j`.
    pub fn kappa(&self, d: T) -> T {
        let mut acc = T::zero();
        for r in 0..self.rank() {
            let phase = self.frequencies[r] * d;
            acc += self.alpha[r] * phase.cos() + self.beta[r] * phase.sin();
        }
        acc
    }
}

/// `sum_r alpha_r cos(w_r (i - j)) + beta_r sin(w_r (i - j))`.
pub fn relative_log_prior<T: Real>(i: usize, j: usize, params: &SpectralPriorParams<T>) -> T {
    params.kappa(displacement(i, j))
}

/// Writes `(cos(w_r j), sin(w_r j))` for each frequency into `out`.
pub fn write_fourier_key<T: Real>(j: usize, frequencies: &[T], out: &mut [T]) {
    let pos = T::of(j as f64);
    for (r, &w) in frequencies.iter().enumerate() {
        let (s, c) = (w * pos).sin_cos();
        out[2 * r] = c;
        out[2 * r + 1] = s;
    }
}

pub fn fourier_key<T: Real>(j: usize, frequencies: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); 2 * frequencies.len()];
    write_fourier_key(j, frequencies, &mut out);
    out
}

/// Writes the rotated query
/// `(a cos(w i) + b sin(w i), a sin(w i) - b cos(w i))` per frequency.
pub fn write_rotated_query<T: Real>(i: usize, params: &SpectralPriorParams<T>, out: &mut [T]) {
    let pos = T::of(i as f64);
    for r in 0..params.rank() {
        let (s, c) = (params.frequencies[r] * pos).sin_cos();
        let (a, b) = (params.alpha[r], params.beta[r]);
        out[2 * r] = a * c + b * s;
        out[2 * r + 1] = a * s - b * c;
    }
}

pub fn spectral_rotate_query<T: Real>(i: usize, params: &SpectralPriorParams<T>) -> Vec<T> {
    let mut out = vec![T::zero(); 2 * params.rank()];
    write_rotated_query(i, params, &mut out);
    out
}

/// Key-only sink bias `u(j) = slope * j / L_ref + MLP(features(j))`.
///
/// The MLP input is `feature_count` sinusoids of `j` (sin/cos pairs with
/// wavelengths geometric between 2 and `2 L_ref`) followed by `j / L_ref`.
/// One hidden tanh layer of width `hidden`, scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkBiasParams<T = f64> {
    pub slope: T,
    /// `hidden x (feature_count + 1)`, row-major.
    pub mlp_w1: Vec<T>,
    pub mlp_b1: Vec<T>,
    pub mlp_w2: Vec<T>,
    pub mlp_b2: T,
    feature_count: usize,
    l_ref: usize,
    feature_freqs: Vec<f64>,
}

/// Angular frequencies of the sinusoidal sink features.
fn sink_feature_frequencies(feature_count: usize, l_ref: usize) -> Vec<f64> {
    let pairs = feature_count / 2;
    let longest = 2.0 * l_ref as f64;
    (0..pairs)
        .map(|k| {
            let wavelength = if pairs == 1 {
                2.0
            } else {
                2.0 * (longest / 2.0).powf(k as f64 / (pairs - 1) as f64)
            };
            2.0 * PI / wavelength
        })
        .collect()
}

impl<T: Real> SinkBiasParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        slope: T,
        mlp_w1: Vec<T>,
        mlp_b1: Vec<T>,
        mlp_w2: Vec<T>,
        mlp_b2: T,
        feature_count: usize,
        l_ref: usize,
    ) -> Result<Self> {
        if !feature_count.is_multiple_of(2) {
            return Err(Error::domain("feature_count must be even (sin/cos pairs)"));
        }
        if l_ref == 0 {
            return Err(Error::domain("l_ref must be positive"));
        }
        let hidden = mlp_b1.len();
        check_len("sink mlp_w1", hidden * (feature_count + 1), mlp_w1.len())?;
        check_len("sink mlp_w2", hidden, mlp_w2.len())?;
        let all_finite = mlp_w1
            .iter()
            .chain(&mlp_b1)
            .chain(&mlp_w2)
            .chain([&slope, &mlp_b2])
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::domain("sink parameters must be finite"));
        }
        Ok(Self {
            slope,
            mlp_w1,
            mlp_b1,
            mlp_w2,
            mlp_b2,
            feature_count,
            l_ref,
            feature_freqs: sink_feature_frequencies(feature_count, l_ref),
        })
    }

    /// All-zero parameters: `u(j) = 0`.
    pub fn zeros(feature_count: usize, hidden: usize, l_ref: usize) -> Result<Self> {
        Self::new(
            T::zero(),
            vec![T::zero(); hidden * (feature_count + 1)],
            vec![T::zero(); hidden],
            vec![T::zero(); hidden],
            T::zero(),
            feature_count,
            l_ref,
        )
    }

    /// Hidden-layer weights drawn from `N(0, 1/fan_in)`, output layer and
    /// slope at zero, so `u` starts identically zero but has live gradients.
    pub fn init<G: Rng + ?Sized>(
        feature_count: usize,
        hidden: usize,
        l_ref: usize,
        rng: &mut G,
    ) -> Result<Self> {
        let mut p = Self::zeros(feature_count, hidden, l_ref)?;
        let std = 1.0 / ((feature_count + 1) as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|_| Error::domain("bad init scale"))?;
        for w in &mut p.mlp_w1 {
            *w = T::of(normal.sample(rng));
        }
        Ok(p)
    }

    /// Negative slope and zero MLP: a key-linear recency bias, equivalent
    /// under causal masking to a lag-linear (max-entropy) prior.
    pub fn alibi_init(slope: T, feature_count: usize, hidden: usize, l_ref: usize) -> Result<Self> {
        let mut p = Self::zeros(feature_count, hidden, l_ref)?;
        p.slope = slope;
        Ok(p)
    }

    pub fn random<G: Rng + ?Sized>(
        feature_count: usize,
        hidden: usize,
        l_ref: usize,
        scale: f64,
        rng: &mut G,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, scale).map_err(|_| Error::domain("bad scale"))?;
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(normal.sample(rng))).collect() };
        let w1 = draw(hidden * (feature_count + 1));
        let b1 = draw(hidden);
        let w2 = draw(hidden);
        let rest = draw(2);
        Self::new(rest[0], w1, b1, w2, rest[1], feature_count, l_ref)
    }

    #[inline]
    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    #[inline]
    pub fn hidden(&self) -> usize {
        self.mlp_b1.len()
    }

    #[inline]
    pub fn l_ref(&self) -> usize {
        self.l_ref
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.feature_count + 1
    }

    /// MLP input for key position `j`.
    pub fn features(&self, j: usize) -> Vec<T> {
        let mut x = Vec::with_capacity(self.input_dim());
        for &w in &self.feature_freqs {
            let (s, c) = (w * j as f64).sin_cos();
            x.push(T::of(s));
            x.push(T::of(c));
        }
        x.push(T::of(j as f64 / self.l_ref as f64));
        x
    }

    fn hidden_activations(&self, x: &[T]) -> Vec<T> {
        let d = self.input_dim();
        (0..self.hidden())
            .map(|h| {
                let row = &self.mlp_w1[h * d..(h + 1) * d];
                (crate::linalg::dot(row, x) + self.mlp_b1[h]).tanh()
            })
            .collect()
    }

    /// `u(j)`.
    pub fn eval(&self, j: usize) -> T {
        let x = self.features(j);
        let h = self.hidden_activations(&x);
        self.slope * x[self.feature_count] + crate::linalg::dot(&self.mlp_w2, &h) + self.mlp_b2
    }

    /// Accumulates `upstream * du(j)/dtheta` into `grad`.
    pub fn accumulate_grad(&self, j: usize, upstream: T, grad: &mut SinkBiasParams<T>) {
        let x = self.features(j);
        let h = self.hidden_activations(&x);
        let d = self.input_dim();
        grad.slope += upstream * x[self.feature_count];
        grad.mlp_b2 += upstream;
        for (k, &hk) in h.iter().enumerate() {
            grad.mlp_w2[k] += upstream * hk;
            let pre = upstream * self.mlp_w2[k] * (T::one() - hk * hk);
            grad.mlp_b1[k] += pre;
            for (g, &xv) in grad.mlp_w1[k * d..(k + 1) * d].iter_mut().zip(&x) {
                *g += pre * xv;
            }
        }
    }

    /// Same shape, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.slope = T::zero();
        z.mlp_b2 = T::zero();
        for v in z
            .mlp_w1
            .iter_mut()
            .chain(z.mlp_b1.iter_mut())
            .chain(z.mlp_w2.iter_mut())
        {
            *v = T::zero();
        }
        z
    }
}

/// `u(j)`.
pub fn sink_bias<T: Real>(j: usize, params: &SinkBiasParams<T>) -> T {
    params.eval(j)
}

/// Lane split of one attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoatHeadConfig {
    d_h: usize,
    r: usize,
    pub causal: bool,
}

impl GoatHeadConfig {
    pub fn new(d_h: usize, r: usize, causal: bool) -> Result<Self> {
        if d_h < 2 * r + 3 {
            return Err(Error::domain(alloc::format!(
                "head dimension {d_h} leaves no content lanes for R = {r} (need > {})",
                2 * r + 2
            )));
        }
        Ok(Self { d_h, r, causal })
    }

    #[inline]
    pub fn d_h(&self) -> usize {
        self.d_h
    }

    /// Frequency count `R`.
    #[inline]
    pub fn r(&self) -> usize {
        self.r
    }

    /// Positional lanes: `2R` relative, one sink, one zero pad.
    #[inline]
    pub fn d_p(&self) -> usize {
        2 * self.r + 2
    }

    #[inline]
    pub fn d_c(&self) -> usize {
        self.d_h - self.d_p()
    }

    #[inline]
    pub fn sink_lane(&self) -> usize {
        self.d_c() + 2 * self.r
    }
}

/// Composite query `[q_c sqrt(d_h/d_c) | q_rel(i) sqrt(d_h) | sqrt(d_h) | 0]`.
pub fn compose_query<T: Real>(
    q_c: &[T],
    i: usize,
    spectral: &SpectralPriorParams<T>,
    cfg: &GoatHeadConfig,
    out: &mut [T],
) -> Result<()> {
    check_len("query content", cfg.d_c(), q_c.len())?;
    check_len("composite query", cfg.d_h(), out.len())?;
    check_len("spectral rank", cfg.r(), spectral.rank())?;
    let d_c = cfg.d_c();
    let sqrt_dh = T::of(cfg.d_h() as f64).sqrt();
    let content_scale = T::of(cfg.d_h() as f64 / d_c as f64).sqrt();
    for (o, &q) in out[..d_c].iter_mut().zip(q_c) {
        *o = q * content_scale;
    }
    let rel = &mut out[d_c..d_c + 2 * cfg.r()];
    write_rotated_query(i, spectral, rel);
    for v in rel.iter_mut() {
        *v *= sqrt_dh;
    }
    out[cfg.sink_lane()] = sqrt_dh;
    out[cfg.d_h() - 1] = T::zero();
    Ok(())
}

/// Composite key `[k_c | k_rel(j) | u(j) | 0]`.
pub fn compose_key<T: Real>(
    k_c: &[T],
    j: usize,
    spectral: &SpectralPriorParams<T>,
    sink: &SinkBiasParams<T>,
    cfg: &GoatHeadConfig,
    out: &mut [T],
) -> Result<()> {
    check_len("key content", cfg.d_c(), k_c.len())?;
    check_len("composite key", cfg.d_h(), out.len())?;
    check_len("spectral rank", cfg.r(), spectral.rank())?;
    let d_c = cfg.d_c();
    out[..d_c].copy_from_slice(k_c);
    write_fourier_key(j, spectral.frequencies(), &mut out[d_c..d_c + 2 * cfg.r()]);
    out[cfg.sink_lane()] = sink.eval(j);
    out[cfg.d_h() - 1] = T::zero();
    Ok(())
}

/// Builds the composite pair `(q', k')` for query position `i` and key
/// position `j`.
#[allow(clippy::too_many_arguments)]
pub fn compose_vectors<T: Real>(
    q_c: &[T],
    k_c: &[T],
    i: usize,
    j: usize,
    spectral: &SpectralPriorParams<T>,
    sink: &SinkBiasParams<T>,
    cfg: &GoatHeadConfig,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut q = vec![T::zero(); cfg.d_h()];
    let mut k = vec![T::zero(); cfg.d_h()];
    compose_query(q_c, i, spectral, cfg, &mut q)?;
    compose_key(k_c, j, spectral, sink, cfg, &mut k)?;
    Ok((q, k))
}

/// `K(i, j) = kappa(i - j) + u(j)`.
pub fn log_prior<T: Real>(
    i: usize,
    j: usize,
    spectral: &SpectralPriorParams<T>,
    sink: &SinkBiasParams<T>,
) -> T {
    relative_log_prior(i, j, spectral) + sink.eval(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn geometric_frequency_examples() {
        assert_eq!(geometric_frequencies(1, 0.3, 1.0).unwrap(), vec![0.3]);
        let f = geometric_frequencies(3, 0.01, 1.0).unwrap();
        for (a, b) in f.iter().zip([0.01, 0.1, 1.0]) {
            assert!((a - b).abs() < 1e-15, "{f:?}");
        }
        assert_eq!(geometric_frequencies(2, 0.25, 1.0).unwrap(), vec![0.25, 1.0]);
        assert!(geometric_frequencies(0, 1.0, 0.5).unwrap().is_empty());
        assert!(geometric_frequencies(3, 1.0, 0.5).is_err());
        assert!(geometric_frequencies(3, 0.0, 0.5).is_err());
        assert!(geometric_frequencies(3, 0.1, 4.0).is_err());
    }

    #[test]
    fn spectral_params_validate_frequencies() {
        assert!(SpectralPriorParams::<f64>::zeros(vec![0.2, 0.1]).is_err());
        assert!(SpectralPriorParams::<f64>::zeros(vec![0.0, 0.1]).is_err());
        assert!(SpectralPriorParams::new(vec![0.1], vec![1.0, 2.0], vec![0.0]).is_err());
    }

    #[test]
    fn diagonal_is_sum_of_alpha() {
        let p = SpectralPriorParams::<f64>::new(vec![0.1, 0.7], vec![1.5, -0.25], vec![3.0, 2.0]).unwrap();
        for i in [0, 5, 300] {
            assert!((relative_log_prior(i, i, &p) - 1.25).abs() < 1e-15);
        }
        let z = SpectralPriorParams::<f64>::zeros(vec![0.1, 0.7]).unwrap();
        assert_eq!(relative_log_prior(9, 2, &z), 0.0);
    }

    #[test]
    fn fourier_key_examples() {
        assert_eq!(fourier_key(0, &[0.1, 0.2]), vec![1.0, 0.0, 1.0, 0.0]);
        let k = fourier_key(1, &[PI]);
        assert!((k[0] + 1.0).abs() < 1e-15 && k[1].abs() < 1e-15);
        let k = fourier_key(123, &[0.013f64, 0.4, 2.9]);
        for pair in k.chunks(2) {
            assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rotated_query_examples() {
        let p = SpectralPriorParams::new(vec![0.5], vec![1.0], vec![0.0]).unwrap();
        assert_eq!(spectral_rotate_query(0, &p), vec![1.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let freqs = geometric_frequencies(5, 0.01, 3.0).unwrap();
        let p = SpectralPriorParams::random(freqs, 2.0, &mut rng).unwrap();
        for i in [0usize, 1, 17, 999] {
            let q = spectral_rotate_query(i, &p);
            for r in 0..5 {
                let norm = (q[2 * r].powi(2) + q[2 * r + 1].powi(2)).sqrt();
                let expect = (p.alpha[r].powi(2) + p.beta[r].powi(2)).sqrt();
                assert!((norm - expect).abs() < 1e-12);
            }
            for j in [0usize, 3, 64, 1000] {
                let via_dot = dot(&q, &fourier_key(j, p.frequencies()));
                assert!((via_dot - relative_log_prior(i, j, &p)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sink_bias_examples() {
        let z = SinkBiasParams::<f64>::zeros(8, 16, 64).unwrap();
        assert!((0..200).all(|j| z.eval(j) == 0.0));

        let lin = SinkBiasParams::<f64>::alibi_init(-1.0, 8, 16, 1024).unwrap();
        assert_eq!(lin.eval(0), 0.0);
        assert!((lin.eval(1024) + 1.0).abs() < 1e-15);
        assert!((lin.eval(512) + 0.5).abs() < 1e-15);

        assert!(SinkBiasParams::<f64>::zeros(3, 4, 64).is_err());
        assert!(SinkBiasParams::<f64>::zeros(4, 4, 0).is_err());
    }

    #[test]
    fn sink_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = SinkBiasParams::<f64>::random(8, 6, 64, 0.7, &mut rng).unwrap();
        for j in [0usize, 1, 9, 63, 200] {
            let mut grad = p.zeros_like();
            p.accumulate_grad(j, 1.0, &mut grad);
            let h = 1e-6;
            let bump = |f: &dyn Fn(&mut SinkBiasParams<f64>, f64)| {
                let mut a = p.clone();
                let mut b = p.clone();
                f(&mut a, h);
                f(&mut b, -h);
                (a.eval(j) - b.eval(j)) / (2.0 * h)
            };
            assert!((bump(&|q, d| q.slope += d) - grad.slope).abs() < 1e-8);
            assert!((bump(&|q, d| q.mlp_b2 += d) - grad.mlp_b2).abs() < 1e-8);
            assert!((bump(&|q, d| q.mlp_w1[13] += d) - grad.mlp_w1[13]).abs() < 1e-8);
            assert!((bump(&|q, d| q.mlp_b1[4] += d) - grad.mlp_b1[4]).abs() < 1e-8);
            assert!((bump(&|q, d| q.mlp_w2[2] += d) - grad.mlp_w2[2]).abs() < 1e-8);
        }
    }

    #[test]
    fn head_config_lanes() {
        let cfg = GoatHeadConfig::new(32, 4, true).unwrap();
        assert_eq!((cfg.d_p(), cfg.d_c(), cfg.sink_lane()), (10, 22, 30));
        assert!(GoatHeadConfig::new(10, 4, true).is_err());
        assert!(GoatHeadConfig::new(11, 4, true).is_ok());
    }

    #[test]
    fn composite_vectors_reproduce_scaled_scores_plus_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = GoatHeadConfig::new(24, 3, true).unwrap();
        let freqs = geometric_frequencies(3, DEFAULT_OMEGA_MIN, DEFAULT_OMEGA_MAX).unwrap();
        let spectral = SpectralPriorParams::random(freqs, 1.0, &mut rng).unwrap();
        let sink = SinkBiasParams::random(8, 16, 128, 0.5, &mut rng).unwrap();
        let q_c: Vec<f64> = (0..cfg.d_c()).map(|k| (k as f64 * 0.37).sin()).collect();
        let k_c: Vec<f64> = (0..cfg.d_c()).map(|k| (k as f64 * 0.91).cos()).collect();
        let (q, k) = compose_vectors(&q_c, &k_c, 40, 7, &spectral, &sink, &cfg).unwrap();
        assert_eq!((q[cfg.d_h() - 1], k[cfg.d_h() - 1]), (0.0, 0.0));
        let lhs = dot(&q, &k) / (cfg.d_h() as f64).sqrt();
        let rhs = dot(&q_c, &k_c) / (cfg.d_c() as f64).sqrt() + log_prior(40, 7, &spectral, &sink);
        assert!((lhs - rhs).abs() < 1e-10);

        assert!(compose_vectors(&q_c[1..], &k_c, 0, 0, &spectral, &sink, &cfg).is_err());
    }
}
