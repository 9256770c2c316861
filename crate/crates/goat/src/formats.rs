//! On-disk formats: prior JSON, model checkpoints, CSV tables and P5 PGM.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use goat_core::linalg::Matrix;
use goat_core::prior::{SinkBiasParams, SpectralPriorParams};
use goat_core::toy_lm::{OptimConfig, PositionMode, ToyModel, ToyModelConfig, ToyTaskSpec};
use goat_core::Real;
use serde::{Deserialize, Serialize};

/// Flat JSON form of one head's spectral and sink parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorJson {
    pub frequencies: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub slope: f64,
    pub mlp_w1: Vec<f64>,
    pub mlp_b1: Vec<f64>,
    pub mlp_w2: Vec<f64>,
    pub mlp_b2: f64,
    pub feature_count: usize,
    pub l_ref: usize,
}

impl PriorJson {
    pub fn from_params<T: Real>(spectral: &SpectralPriorParams<T>, sink: &SinkBiasParams<T>) -> Self {
        let v = |xs: &[T]| xs.iter().map(|&x| Real::to_f64(x)).collect();
        Self {
            frequencies: v(spectral.frequencies()),
            alpha: v(&spectral.alpha),
            beta: v(&spectral.beta),
            slope: Real::to_f64(sink.slope),
            mlp_w1: v(&sink.mlp_w1),
            mlp_b1: v(&sink.mlp_b1),
            mlp_w2: v(&sink.mlp_w2),
            mlp_b2: Real::to_f64(sink.mlp_b2),
            feature_count: sink.feature_count(),
            l_ref: sink.l_ref(),
        }
    }

    /// Validating conversion back into parameter containers.
    pub fn to_params(&self) -> Result<(SpectralPriorParams<f64>, SinkBiasParams<f64>)> {
        let spectral =
            SpectralPriorParams::new(self.frequencies.clone(), self.alpha.clone(), self.beta.clone())?;
        let sink = SinkBiasParams::new(
            self.slope,
            self.mlp_w1.clone(),
            self.mlp_b1.clone(),
            self.mlp_w2.clone(),
            self.mlp_b2,
            self.feature_count,
            self.l_ref,
        )?;
        Ok((spectral, sink))
    }
}

/// Serializable mirror of [`ToyModelConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigJson {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_h: usize,
    pub r: usize,
    pub mlp_hidden: usize,
    pub position: String,
    pub sink_features: usize,
    pub sink_hidden: usize,
    pub l_ref: usize,
    pub max_positions: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub init_seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub warmup: usize,
}

impl From<&ToyModelConfig> for ModelConfigJson {
    fn from(c: &ToyModelConfig) -> Self {
        Self {
            vocab_size: c.vocab_size,
            layers: c.layers,
            heads: c.heads,
            d_model: c.d_model,
            d_h: c.d_h,
            r: c.r,
            mlp_hidden: c.mlp_hidden,
            position: c.position.name().into(),
            sink_features: c.sink_features,
            sink_hidden: c.sink_hidden,
            l_ref: c.l_ref,
            max_positions: c.max_positions,
            omega_min: c.omega_min,
            omega_max: c.omega_max,
            init_seed: c.init_seed,
            lr: c.optim.lr,
            beta1: c.optim.beta1,
            beta2: c.optim.beta2,
            eps: c.optim.eps,
            weight_decay: c.optim.weight_decay,
            clip_norm: c.optim.clip_norm,
            warmup: c.optim.warmup,
        }
    }
}

impl TryFrom<&ModelConfigJson> for ToyModelConfig {
    type Error = anyhow::Error;

    fn try_from(c: &ModelConfigJson) -> Result<Self> {
        let position = PositionMode::parse(&c.position)
            .with_context(|| format!("unknown position mode `{}`", c.position))?;
        let cfg = ToyModelConfig {
            vocab_size: c.vocab_size,
            layers: c.layers,
            heads: c.heads,
            d_model: c.d_model,
            d_h: c.d_h,
            r: c.r,
            mlp_hidden: c.mlp_hidden,
            position,
            sink_features: c.sink_features,
            sink_hidden: c.sink_hidden,
            l_ref: c.l_ref,
            max_positions: c.max_positions,
            omega_min: c.omega_min,
            omega_max: c.omega_max,
            init_seed: c.init_seed,
            optim: OptimConfig {
                lr: c.lr,
                beta1: c.beta1,
                beta2: c.beta2,
                eps: c.eps,
                weight_decay: c.weight_decay,
                clip_norm: c.clip_norm,
                warmup: c.warmup,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskJson {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub p_global: f64,
    pub p_local: f64,
    pub p_noise: f64,
    pub seed: u64,
}

impl From<&ToyTaskSpec> for TaskJson {
    fn from(s: &ToyTaskSpec) -> Self {
        Self {
            vocab_size: s.vocab_size,
            seq_len: s.seq_len,
            p_global: s.p_global,
            p_local: s.p_local,
            p_noise: s.p_noise,
            seed: s.seed,
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "goat-toy-checkpoint";

/// Named flat parameter arrays plus a config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub step: usize,
    pub config: ModelConfigJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskJson>,
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &ToyModel<T>, step: usize, task: Option<&ToyTaskSpec>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            step,
            config: (&model.cfg).into(),
            task: task.map(Into::into),
            params: model
                .params()
                .into_iter()
                .map(|p| (p.name, p.data.iter().map(|&v| Real::to_f64(v)).collect()))
                .collect(),
        }
    }

    /// Rebuilds the model: shapes and fixed frequencies come from the
    /// config, every trainable tensor from `params`.
    pub fn to_model<T: Real>(&self) -> Result<ToyModel<T>> {
        ensure!(
            self.format == CHECKPOINT_FORMAT,
            "not a checkpoint: format is `{}`",
            self.format
        );
        let cfg = ToyModelConfig::try_from(&self.config)?;
        let mut model = ToyModel::<T>::init(&cfg)?;
        let mut seen = 0;
        for p in model.params_mut() {
            let Some(values) = self.params.get(&p.name) else {
                bail!("checkpoint lacks parameter `{}`", p.name);
            };
            ensure!(
                values.len() == p.data.len(),
                "parameter `{}` has {} values, expected {}",
                p.name,
                values.len(),
                p.data.len()
            );
            for (dst, &src) in p.data.iter_mut().zip(values) {
                *dst = T::of(src);
            }
            seen += 1;
        }
        ensure!(
            seen == self.params.len(),
            "checkpoint has {} parameters the model does not know",
            self.params.len() - seen
        );
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Writes a header row and records through the `csv` crate.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A matrix as headerless CSV, full round-trip precision.
pub fn write_matrix_csv(path: &Path, m: &Matrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Binary grayscale PGM bytes, min-max normalized to 0..=255. A constant
/// matrix maps to all zeros.
pub fn pgm_bytes(m: &Matrix<f64>) -> Vec<u8> {
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    out.extend(m.as_slice().iter().map(|&v| {
        if span > 0.0 && span.is_finite() {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, m: &Matrix<f64>) -> Result<()> {
    std::fs::write(path, pgm_bytes(m)).with_context(|| format!("writing {}", path.display()))
}
