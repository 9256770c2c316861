//! The copy-mixture sequence task.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// How a token was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    /// Token 0, drawn uniformly.
    First,
    /// Copy of token 0.
    Global,
    /// Copy of the previous token.
    Local,
    /// Fresh uniform draw.
    Noise,
}

impl TokenSource {
    pub fn is_copy(self) -> bool {
        matches!(self, TokenSource::Global | TokenSource::Local)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTaskSpec {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub p_global: f64,
    pub p_local: f64,
    pub p_noise: f64,
    pub seed: u64,
}

impl ToyTaskSpec {
    pub fn new(
        vocab_size: usize,
        seq_len: usize,
        p_global: f64,
        p_local: f64,
        p_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            vocab_size,
            seq_len,
            p_global,
            p_local,
            p_noise,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The mixture used for prior-recovery runs: 0.45 / 0.45 / 0.1.
    pub fn copy_mixture(vocab_size: usize, seq_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            seq_len,
            p_global: 0.45,
            p_local: 0.45,
            p_noise: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.seq_len == 0 {
            return Err(Error::domain("vocab_size and seq_len must be positive"));
        }
        let ps = [self.p_global, self.p_local, self.p_noise];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("mixture probabilities must lie in [0, 1]"));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::domain("mixture probabilities must sum to 1"));
        }
        Ok(())
    }

    pub fn with_seq_len(mut self, seq_len: usize) -> Self {
        self.seq_len = seq_len;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// One generated sequence and the provenance of every token.
#[derive(Debug, Clone, PartialEq)]
pub struct CopySample {
    pub tokens: Vec<usize>,
    pub sources: Vec<TokenSource>,
}

/// Streaming generator; successive calls continue the same random stream.
#[derive(Debug, Clone)]
pub struct CopyMixture {
    spec: ToyTaskSpec,
    rng: ChaCha8Rng,
}

impl CopyMixture {
    pub fn new(spec: ToyTaskSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    pub fn spec(&self) -> &ToyTaskSpec {
        &self.spec
    }

    pub fn sample(&mut self) -> CopySample {
        let v = self.spec.vocab_size;
        let n = self.spec.seq_len;
        let mut tokens = Vec::with_capacity(n);
        let mut sources = Vec::with_capacity(n);
        tokens.push(self.rng.random_range(0..v));
        sources.push(TokenSource::First);
        for t in 1..n {
            let u: f64 = self.rng.random();
            let (tok, src) = if u < self.spec.p_global {
                (tokens[0], TokenSource::Global)
            } else if u < self.spec.p_global + self.spec.p_local {
                (tokens[t - 1], TokenSource::Local)
            } else {
                (self.rng.random_range(0..v), TokenSource::Noise)
            };
            tokens.push(tok);
            sources.push(src);
        }
        CopySample { tokens, sources }
    }
}

/// `n_sequences` token rows, fully determined by `spec.seed`.
pub fn gen_copy_mixture(spec: &ToyTaskSpec, n_sequences: usize) -> Result<Vec<Vec<usize>>> {
    let mut g = CopyMixture::new(*spec)?;
    Ok((0..n_sequences).map(|_| g.sample().tokens).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pure_noise_is_uniform() {
        let spec = ToyTaskSpec::new(8, 64, 0.0, 0.0, 1.0, 1).unwrap();
        let rows = gen_copy_mixture(&spec, 200).unwrap();
        let mut counts = vec![0usize; 8];
        for t in rows.iter().flatten() {
            counts[*t] += 1;
        }
        let n = (200 * 64) as f64;
        let (mean, sd) = (n / 8.0, (n * (1.0 / 8.0) * (7.0 / 8.0)).sqrt());
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{c} vs {mean} ± {sd}");
        }
    }

    #[test]
    fn pure_global_and_pure_local_are_constant() {
        for (g, l) in [(1.0, 0.0), (0.0, 1.0)] {
            let spec = ToyTaskSpec::new(32, 20, g, l, 0.0, 9).unwrap();
            for row in gen_copy_mixture(&spec, 10).unwrap() {
                assert!(row.iter().all(|&t| t == row[0]));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ToyTaskSpec::copy_mixture(32, 16, 42);
        assert_eq!(gen_copy_mixture(&spec, 5).unwrap(), gen_copy_mixture(&spec, 5).unwrap());
        assert_ne!(
            gen_copy_mixture(&spec, 5).unwrap(),
            gen_copy_mixture(&spec.with_seed(43), 5).unwrap()
        );
    }

    #[test]
    fn sources_explain_tokens() {
        let mut g = CopyMixture::new(ToyTaskSpec::copy_mixture(5, 50, 3)).unwrap();
        for _ in 0..20 {
            let s = g.sample();
            for t in 1..50 {
                match s.sources[t] {
                    TokenSource::Global => assert_eq!(s.tokens[t], s.tokens[0]),
                    TokenSource::Local => assert_eq!(s.tokens[t], s.tokens[t - 1]),
                    TokenSource::Noise => {}
                    TokenSource::First => panic!("only position 0 is First"),
                }
            }
        }
    }

    #[test]
    fn invalid_mixture_rejected() {
        assert!(ToyTaskSpec::new(4, 8, 0.5, 0.5, 0.5, 0).is_err());
        assert!(ToyTaskSpec::new(4, 8, -0.1, 1.0, 0.1, 0).is_err());
        assert!(ToyTaskSpec::new(0, 8, 0.5, 0.5, 0.0, 0).is_err());
    }
}
