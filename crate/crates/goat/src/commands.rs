//! The four subcommands. Each takes a merged [`RunConfig`] and an output
//! directory and reports its exit status through [`CommandError`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use goat_core::toy_lm::{
    decompose_parts, eval_extrapolation, train, PositionMode, ToyModel, ToyModelConfig,
    ToyTaskSpec, TrainConfig,
};
use goat_core::verify::{run_suite, suite_names, CheckReport};
use serde_json::json;

use crate::bench::{run_bench, BenchConfig};
use crate::config::{ConfigError, RunConfig};
use crate::formats::{write_csv, write_matrix_csv, write_pgm, Checkpoint, PriorJson};
use crate::threads::{par_map, worker_count};

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Bad or missing input: exit code 2.
    #[error("{0:#}")]
    Input(anyhow::Error),
    /// The command ran and something failed: exit code 1.
    #[error("{0:#}")]
    Failed(anyhow::Error),
}

impl CommandError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Failed(_) => 1,
            Self::Config(_) | Self::Input(_) => 2,
        }
    }
}

pub type CmdResult = Result<(), CommandError>;

fn failed(e: impl Into<anyhow::Error>) -> CommandError {
    CommandError::Failed(e.into())
}

fn input(e: impl Into<anyhow::Error>) -> CommandError {
    CommandError::Input(e.into())
}

fn create_out(out: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(failed)
}

pub const VERIFY_KEYS: &[&str] = &["suite", "seed"];
pub const TRAIN_KEYS: &[&str] = &[
    "seed",
    "steps",
    "batch_size",
    "position",
    "vocab_size",
    "seq_len",
    "p_global",
    "p_local",
    "p_noise",
    "layers",
    "heads",
    "d_h",
    "r",
    "lr",
    "warmup",
    "eval_lengths",
    "eval_sequences",
    "checkpoint_every",
];
pub const DUMP_KEYS: &[&str] = &["checkpoint", "prior", "layer", "head", "len"];
pub const BENCH_KEYS: &[&str] = &["lengths", "d_h", "r", "reps", "seed"];

fn report_json(reports: &[CheckReport]) -> serde_json::Value {
    reports
        .iter()
        .map(|r| {
            json!({
                "check_name": r.check_name,
                "cases": r.cases,
                "failures": r.failures,
                "max_violation": r.max_violation,
            })
        })
        .collect()
}

/// Runs the selected suites (`suite = all` or a comma list) and writes
/// `verify_report.json`.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> CmdResult {
    let seed = cfg.get_or("seed", 0u64)?;
    let selected: Vec<String> = match cfg.get_list::<String>("suite")? {
        None => suite_names().map(String::from).collect(),
        Some(list) if list.iter().any(|s| s == "all") => suite_names().map(String::from).collect(),
        Some(list) => list,
    };
    if let Some(bad) = selected.iter().find(|s| !suite_names().any(|n| n == s.as_str())) {
        let known: Vec<&str> = suite_names().collect();
        return Err(cfg
            .invalid("suite", format!("unknown suite `{bad}` (known: {})", known.join(", ")))
            .into());
    }
    let results = par_map(&selected, worker_count(), |name| run_suite(name, seed));
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        reports.push(r.map_err(|e| failed(anyhow!("{e}")))?);
    }
    for r in &reports {
        println!(
            "{:<14} cases={:<8} failures={:<4} max_violation={:.3e} {}",
            r.check_name,
            r.cases,
            r.failures,
            r.max_violation,
            if r.passed() { "ok" } else { "FAILED" }
        );
    }
    create_out(out)?;
    let path = out.join("verify_report.json");
    let text = serde_json::to_string_pretty(&report_json(&reports)).map_err(failed)?;
    fs::write(&path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(failed)?;
    let failures: usize = reports.iter().map(|r| r.failures).sum();
    if failures > 0 {
        return Err(failed(anyhow!("{failures} verification case(s) failed")));
    }
    Ok(())
}

/// Settings of one `train-toy` run, resolved from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub model: ToyModelConfig,
    pub task: ToyTaskSpec,
    pub train: TrainConfig,
    pub eval_lengths: Vec<usize>,
    pub eval_sequences: usize,
    pub eval_seed: u64,
}

impl TrainPlan {
    /// Model init uses `seed`, training data `seed + 1000` and evaluation
    /// data `seed + 2000`, so the three streams never coincide.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ConfigError> {
        let seed = cfg.get_or("seed", 0u64)?;
        let vocab = cfg.get_or("vocab_size", 32usize)?;
        let seq_len = cfg.get_or("seq_len", 64usize)?;
        let position = match cfg.raw("position") {
            None => PositionMode::Goat,
            Some(s) => PositionMode::parse(s)
                .ok_or_else(|| cfg.invalid("position", "expected goat, learned_absolute or key_linear"))?,
        };
        let mut model = ToyModelConfig::desk(vocab, seq_len, position);
        model.init_seed = seed;
        model.layers = cfg.get_or("layers", model.layers)?;
        model.heads = cfg.get_or("heads", model.heads)?;
        model.d_h = cfg.get_or("d_h", model.d_h)?;
        model.d_model = model.heads * model.d_h;
        model.r = cfg.get_or("r", model.r)?;
        model.optim.lr = cfg.get_or("lr", model.optim.lr)?;
        model.optim.warmup = cfg.get_or("warmup", model.optim.warmup)?;
        let eval_lengths = cfg
            .get_list("eval_lengths")?
            .unwrap_or_else(|| vec![seq_len, 2 * seq_len, 4 * seq_len]);
        if let Some(&too_short) = eval_lengths.iter().find(|&&l| l < seq_len) {
            return Err(cfg.invalid(
                "eval_lengths",
                format!("{too_short} is below the training length {seq_len}"),
            ));
        }
        model.max_positions = model
            .max_positions
            .max(eval_lengths.iter().copied().max().unwrap_or(0));
        model.validate().map_err(|e| cfg.invalid("position", e.to_string()))?;
        let task = ToyTaskSpec::new(
            vocab,
            seq_len,
            cfg.get_or("p_global", 0.45)?,
            cfg.get_or("p_local", 0.45)?,
            cfg.get_or("p_noise", 0.10)?,
            seed + 1000,
        )
        .map_err(|e| cfg.invalid("p_global", e.to_string()))?;
        let train = TrainConfig {
            steps: cfg.get_or("steps", 3000)?,
            batch_size: cfg.get_or("batch_size", 8)?,
            checkpoint_every: cfg.get_or("checkpoint_every", 0)?,
        };
        if train.batch_size == 0 {
            return Err(cfg.invalid("batch_size", "must be positive"));
        }
        Ok(Self {
            model,
            task,
            train,
            eval_lengths,
            eval_sequences: cfg.get_or("eval_sequences", 128)?,
            eval_seed: seed + 2000,
        })
    }
}

/// Trains the toy model and writes `checkpoint.json`, `loss.csv`,
/// `eval.csv` and optional `snapshots/step_N.json`.
pub fn cmd_train_toy(cfg: &RunConfig, out: &Path) -> CmdResult {
    let plan = TrainPlan::from_config(cfg)?;
    let model = ToyModel::<f32>::init(&plan.model).map_err(|e| input(anyhow!("{e}")))?;
    let outcome = train(model, &plan.task, &plan.train).map_err(|e| failed(anyhow!("{e}")))?;
    create_out(out)?;

    let loss_rows: Vec<Vec<String>> = outcome
        .trace
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.loss.to_string(),
                r.grad_norm.to_string(),
                r.lr.to_string(),
            ]
        })
        .collect();
    write_csv(out.join("loss.csv"), &["step", "loss", "grad_norm", "lr"], &loss_rows)
        .map_err(failed)?;

    let eval_spec = plan.task.with_seed(plan.eval_seed);
    let points = par_map(&plan.eval_lengths, worker_count(), |&len| {
        eval_extrapolation(&outcome.model, &eval_spec, &[len], plan.eval_sequences)
    });
    let mut eval_rows = Vec::new();
    for p in points {
        let p = p.map_err(|e| failed(anyhow!("{e}")))?[0];
        eval_rows.push(vec![
            p.len.to_string(),
            p.copy_accuracy.to_string(),
            p.copy_targets.to_string(),
            p.all_accuracy.to_string(),
        ]);
    }
    write_csv(
        out.join("eval.csv"),
        &["len", "copy_accuracy", "copy_targets", "all_accuracy"],
        &eval_rows,
    )
    .map_err(failed)?;

    if !outcome.checkpoints.is_empty() {
        let dir = out.join("snapshots");
        create_out(&dir)?;
        for (step, m) in &outcome.checkpoints {
            Checkpoint::from_model(m, *step, Some(&plan.task))
                .save(&dir.join(format!("step_{step}.json")))
                .map_err(failed)?;
        }
    }
    Checkpoint::from_model(&outcome.model, plan.train.steps, Some(&plan.task))
        .save(&out.join("checkpoint.json"))
        .map_err(failed)?;
    if let Some(last) = outcome.trace.last() {
        println!("step {} loss {:.4}", last.step, last.loss);
    }
    for row in &eval_rows {
        println!("len {} copy_accuracy {}", row[0], row[1]);
    }
    Ok(())
}

/// Writes the four prior panels of one head as CSV and PGM, plus the head's
/// parameters as `prior.json`. The head comes from `checkpoint` (with
/// `layer`, `head`) or directly from a `prior` JSON file.
pub fn cmd_dump_prior(cfg: &RunConfig, out: &Path) -> CmdResult {
    let len = cfg.get_or("len", 64usize)?;
    if len == 0 {
        return Err(cfg.invalid("len", "must be positive").into());
    }
    let prior = match (cfg.raw("checkpoint"), cfg.raw("prior")) {
        (Some(path), None) => {
            let ckpt = Checkpoint::load(Path::new(path)).map_err(input)?;
            let model: ToyModel<f64> = ckpt.to_model().map_err(input)?;
            let layer = cfg.get_or("layer", 0usize)?;
            let head = cfg.get_or("head", 0usize)?;
            let p = model.head_prior(layer, head).map_err(|e| input(anyhow!("{e}")))?;
            PriorJson::from_params(&p.spectral, &p.sink)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read prior {path}"))
                .map_err(input)?;
            serde_json::from_str::<PriorJson>(&text)
                .with_context(|| format!("malformed prior {path}"))
                .map_err(input)?
        }
        (Some(_), Some(_)) => {
            return Err(cfg.invalid("prior", "give either `checkpoint` or `prior`, not both").into())
        }
        (None, None) => return Err(input(anyhow!("dump-prior needs `checkpoint` or `prior`"))),
    };
    let (spectral, sink) = prior.to_params().map_err(input)?;
    let d = decompose_parts(&spectral, &sink, len).map_err(|e| failed(anyhow!("{e}")))?;
    create_out(out)?;
    for (name, m) in [
        ("k_sink", &d.k_sink),
        ("k_rel", &d.k_rel),
        ("k_centered", &d.k_total_centered),
        ("induced_prior", &d.induced_prior),
    ] {
        write_matrix_csv(&out.join(format!("{name}.csv")), m).map_err(failed)?;
        write_pgm(&out.join(format!("{name}.pgm")), m).map_err(failed)?;
    }
    let text = serde_json::to_string_pretty(&prior).map_err(failed)?;
    fs::write(out.join("prior.json"), text + "\n").map_err(failed)?;
    Ok(())
}

/// Writes `bench.csv` with `L, path, bytes, ns_per_token`. Timing is off
/// unless `reps > 0`; then the column holds wall-clock medians and reruns
/// are no longer byte-identical.
pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> CmdResult {
    let bench = BenchConfig {
        lengths: cfg
            .get_list("lengths")?
            .unwrap_or_else(|| vec![256, 512, 1024, 2048, 4096]),
        d_h: cfg.get_or("d_h", 64)?,
        r: cfg.get_or("r", 4)?,
        reps: cfg.get_or("reps", 0)?,
        seed: cfg.get_or("seed", 0)?,
    };
    let rows = run_bench(&bench).map_err(input)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.len.to_string(),
                r.path.name().to_string(),
                r.bytes.to_string(),
                r.ns_per_token.map(|t| format!("{t:.1}")).unwrap_or_default(),
            ]
        })
        .collect();
    create_out(out)?;
    write_csv(out.join("bench.csv"), &["L", "path", "bytes", "ns_per_token"], &table)
        .map_err(failed)?;
    for row in &table {
        println!("{}", row.join(","));
    }
    Ok(())
}

/// Default output directory for a command.
pub fn default_out(command: &str) -> PathBuf {
    PathBuf::from("runs").join(command)
}
