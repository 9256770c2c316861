//! Memory and wall-time comparison of composite-lane attention against
//! attention with a materialized `L x L` bias.

use std::time::Instant;

use anyhow::Result;
use goat_core::attention::{composite_matrices, dense_log_prior, explicit_bias_attention, sdpa, AttentionBatch};
use goat_core::linalg::Matrix;
use goat_core::Real;
use goat_core::prior::{geometric_frequencies, GoatHeadConfig, SinkBiasParams, SpectralPriorParams, DEFAULT_OMEGA_MAX, DEFAULT_OMEGA_MIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counts payload bytes of matrices registered with it.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Meter {
    current: usize,
    peak: usize,
}

impl Meter {
    pub fn alloc<T: Real>(&mut self, m: &Matrix<T>) {
        self.current += m.rows() * m.cols() * std::mem::size_of::<T>();
        self.peak = self.peak.max(self.current);
    }

    pub fn free<T: Real>(&mut self, m: &Matrix<T>) {
        self.current -= m.rows() * m.cols() * std::mem::size_of::<T>();
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchPath {
    Dense,
    Composite,
}

impl BenchPath {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dense => "dense",
            Self::Composite => "composite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub len: usize,
    pub path: BenchPath,
    /// Peak bytes held for positional information beyond the content
    /// queries and keys: the bias matrix, or the extra composite lanes.
    pub bytes: usize,
    /// Median wall time per query token, or `None` when timing is off.
    pub ns_per_token: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub d_h: usize,
    pub r: usize,
    /// Timed repetitions per point; `0` records bytes only.
    pub reps: usize,
    pub seed: u64,
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Positional bytes of the dense route: the materialized bias.
fn dense_bytes(
    len: usize,
    spectral: &SpectralPriorParams,
    sink: &SinkBiasParams,
) -> (usize, Matrix<f64>) {
    let mut meter = Meter::default();
    let bias = dense_log_prior(len, spectral, sink);
    meter.alloc(&bias);
    (meter.peak(), bias)
}

/// Positional bytes of the composite route: composite queries and keys
/// minus the content parts they replace.
fn composite_bytes(
    q_c: &Matrix<f64>,
    k_c: &Matrix<f64>,
    spectral: &SpectralPriorParams,
    sink: &SinkBiasParams,
    cfg: &GoatHeadConfig,
) -> Result<(usize, Matrix<f64>, Matrix<f64>)> {
    let mut meter = Meter::default();
    let (q, k) = composite_matrices(q_c, k_c, spectral, sink, cfg)?;
    meter.alloc(&q);
    meter.alloc(&k);
    // Content rows exist on both routes; only the lanes beyond them count.
    meter.free(q_c);
    meter.free(k_c);
    Ok((meter.current(), q, k))
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let head = GoatHeadConfig::new(cfg.d_h, cfg.r, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let freqs = geometric_frequencies(cfg.r, DEFAULT_OMEGA_MIN, DEFAULT_OMEGA_MAX)?;
    let spectral = SpectralPriorParams::random(freqs, 1.0, &mut rng)?;
    let sink = SinkBiasParams::random(8, 16, 1024, 1.0, &mut rng)?;
    let mut rows = Vec::new();
    for &len in &cfg.lengths {
        anyhow::ensure!(len > 0, "benchmark lengths must be positive");
        let q_c = random_matrix(len, head.d_c(), &mut rng);
        let k_c = random_matrix(len, head.d_c(), &mut rng);
        let v = random_matrix(len, cfg.d_h, &mut rng);

        let (bytes, _) = dense_bytes(len, &spectral, &sink);
        let mut times = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let t = Instant::now();
            let bias = dense_log_prior(len, &spectral, &sink);
            let out = explicit_bias_attention(&q_c, &k_c, &v, &bias, true)?;
            std::hint::black_box(out);
            times.push(t.elapsed().as_nanos() as f64 / len as f64);
        }
        rows.push(BenchRow {
            len,
            path: BenchPath::Dense,
            bytes,
            ns_per_token: (!times.is_empty()).then(|| median(times)),
        });

        let (bytes, _, _) = composite_bytes(&q_c, &k_c, &spectral, &sink, &head)?;
        let mut times = Vec::with_capacity(cfg.reps);
        for _ in 0..cfg.reps {
            let t = Instant::now();
            let (q, k) = composite_matrices(&q_c, &k_c, &spectral, &sink, &head)?;
            let out = sdpa(&AttentionBatch::new(q, k, v.clone(), true)?)?;
            std::hint::black_box(out);
            times.push(t.elapsed().as_nanos() as f64 / len as f64);
        }
        rows.push(BenchRow {
            len,
            path: BenchPath::Composite,
            bytes,
            ns_per_token: (!times.is_empty()).then(|| median(times)),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_counts_follow_shapes() {
        let rows = run_bench(&BenchConfig {
            lengths: vec![3, 10],
            d_h: 16,
            r: 2,
            reps: 1,
            seed: 0,
        })
        .unwrap();
        // d_p = 2r + 2 = 6 lanes on queries and keys.
        assert_eq!(rows[0].bytes, 3 * 3 * 8);
        assert_eq!(rows[1].bytes, 2 * 3 * 6 * 8);
        assert_eq!(rows[2].bytes, 10 * 10 * 8);
        assert_eq!(rows[3].bytes, 2 * 10 * 6 * 8);
        assert!(rows.iter().all(|r| r.ns_per_token.is_some()));
    }

    #[test]
    fn meter_tracks_peak() {
        let mut m = Meter::default();
        let a = Matrix::<f64>::zeros(2, 2);
        let b = Matrix::<f32>::zeros(4, 1);
        m.alloc(&a);
        m.alloc(&b);
        m.free(&a);
        assert_eq!((m.current(), m.peak()), (16, 48));
    }
}
