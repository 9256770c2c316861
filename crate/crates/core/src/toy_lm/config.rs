use alloc::format;

use crate::prior::{GoatHeadConfig, DEFAULT_OMEGA_MAX, DEFAULT_OMEGA_MIN, DEFAULT_SINK_FEATURES, DEFAULT_SINK_HIDDEN};
use crate::{Error, Result};

/// How the toy model sees token positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositionMode {
    /// Spectral relative prior plus sink MLP, folded into composite lanes.
    Goat,
    /// Learned absolute position embeddings added to the residual stream.
    LearnedAbsolute,
    /// A single per-head slope on the key index (ALiBi-like).
    KeyLinear,
}

impl PositionMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Goat => "goat",
            Self::LearnedAbsolute => "learned_absolute",
            Self::KeyLinear => "key_linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "goat" => Some(Self::Goat),
            "learned_absolute" | "abs" => Some(Self::LearnedAbsolute),
            "key_linear" | "alibi" => Some(Self::KeyLinear),
            _ => None,
        }
    }
}

/// AdamW hyperparameters with global gradient-norm clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Clip threshold on the global L2 gradient norm; `0` disables clipping.
    pub clip_norm: f64,
    /// Linear warmup length in steps.
    pub warmup: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_h: usize,
    /// Spectral rank per head (GOAT mode).
    pub r: usize,
    pub mlp_hidden: usize,
    pub position: PositionMode,
    pub sink_features: usize,
    pub sink_hidden: usize,
    /// Position scale of the sink features; the training length.
    pub l_ref: usize,
    /// Rows in the learned position table (learned-absolute mode).
    pub max_positions: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub init_seed: u64,
    pub optim: OptimConfig,
}

impl ToyModelConfig {
    /// Two layers, two 32-wide heads, rank-4 spectral prior.
    pub fn desk(vocab_size: usize, seq_len: usize, position: PositionMode) -> Self {
        Self {
            vocab_size,
            layers: 2,
            heads: 2,
            d_model: 64,
            d_h: 32,
            r: 4,
            mlp_hidden: 128,
            position,
            sink_features: DEFAULT_SINK_FEATURES,
            sink_hidden: DEFAULT_SINK_HIDDEN,
            l_ref: seq_len,
            max_positions: 4 * seq_len,
            omega_min: DEFAULT_OMEGA_MIN,
            omega_max: DEFAULT_OMEGA_MAX,
            init_seed: 0,
            optim: OptimConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_h", self.d_h),
            ("mlp_hidden", self.mlp_hidden),
            ("l_ref", self.l_ref),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::domain(format!("{name} must be positive")));
        }
        if self.d_model != self.heads * self.d_h {
            return Err(Error::domain(format!(
                "d_model = {} must equal heads * d_h = {}",
                self.d_model,
                self.heads * self.d_h
            )));
        }
        if self.position == PositionMode::LearnedAbsolute && self.max_positions == 0 {
            return Err(Error::domain("max_positions must be positive"));
        }
        let o = &self.optim;
        let ok = o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0
            && o.clip_norm >= 0.0
            && [o.lr, o.eps, o.weight_decay, o.clip_norm].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::domain("invalid optimizer hyperparameters"));
        }
        self.content_dim().map(|_| ())
    }

    /// Per-head prior layout, `None` when heads carry no prior.
    pub fn head_config(&self) -> Result<Option<GoatHeadConfig>> {
        match self.position {
            PositionMode::Goat => GoatHeadConfig::new(self.d_h, self.r, true).map(Some),
            PositionMode::KeyLinear => GoatHeadConfig::new(self.d_h, 0, true).map(Some),
            PositionMode::LearnedAbsolute => Ok(None),
        }
    }

    /// Width of the content query/key projections.
    pub fn content_dim(&self) -> Result<usize> {
        Ok(self.head_config()?.map_or(self.d_h, |c| c.d_c()))
    }
}
