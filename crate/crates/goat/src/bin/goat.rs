use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use goat::commands::{
    cmd_bench, cmd_dump_prior, cmd_train_toy, cmd_verify, default_out, CommandError, BENCH_KEYS,
    DUMP_KEYS, TRAIN_KEYS, VERIFY_KEYS,
};
use goat::config::RunConfig;

#[derive(Parser)]
#[command(name = "goat", version, about = "Prior-aware attention: checks, toy training, prior dumps, benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Plain-text `key = value` file; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: runs/<command>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Extra `KEY=VALUE` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run property suites and write verify_report.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite name, comma list, or `all`.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Train the toy model on the copy-mixture task.
    TrainToy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
        /// goat, learned_absolute or key_linear.
        #[arg(long)]
        position: Option<String>,
    },
    /// Write the prior panels of one head as CSV and PGM.
    DumpPrior {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Prior parameters as JSON instead of a checkpoint.
        #[arg(long, value_name = "FILE")]
        prior: Option<PathBuf>,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        head: Option<usize>,
        #[arg(long = "len")]
        len: Option<usize>,
    },
    /// Compare positional memory of composite lanes and a dense bias.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sequence lengths.
        #[arg(long)]
        lengths: Option<String>,
        #[arg(long)]
        d_h: Option<usize>,
        #[arg(long)]
        r: Option<usize>,
        /// Timed repetitions; 0 records bytes only.
        #[arg(long)]
        reps: Option<usize>,
    },
}

type Flags = Vec<(&'static str, Option<String>)>;

fn build(
    name: &'static str,
    keys: &'static [&'static str],
    common: &Common,
    flags: Flags,
) -> Result<(RunConfig, PathBuf), CommandError> {
    let mut cfg = RunConfig::new(name, keys);
    if let Some(path) = &common.config {
        cfg.merge_file(path)?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    let out = common.out.clone().unwrap_or_else(|| default_out(name));
    Ok((cfg, out))
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Verify { common, suite } => {
            let (cfg, out) = build("verify", VERIFY_KEYS, &common, vec![("suite", suite)])?;
            cmd_verify(&cfg, &out)
        }
        Command::TrainToy { common, steps, position } => {
            let flags = vec![("steps", steps.map(|s| s.to_string())), ("position", position)];
            let (cfg, out) = build("train-toy", TRAIN_KEYS, &common, flags)?;
            cmd_train_toy(&cfg, &out)
        }
        Command::DumpPrior { common, checkpoint, prior, layer, head, len } => {
            let flags = vec![
                ("checkpoint", path_str(&checkpoint)),
                ("prior", path_str(&prior)),
                ("layer", layer.map(|v| v.to_string())),
                ("head", head.map(|v| v.to_string())),
                ("len", len.map(|v| v.to_string())),
            ];
            let (cfg, out) = build("dump-prior", DUMP_KEYS, &common, flags)?;
            cmd_dump_prior(&cfg, &out)
        }
        Command::Bench { common, lengths, d_h, r, reps } => {
            let flags = vec![
                ("lengths", lengths),
                ("d_h", d_h.map(|v| v.to_string())),
                ("r", r.map(|v| v.to_string())),
                ("reps", reps.map(|v| v.to_string())),
            ];
            let (cfg, out) = build("bench", BENCH_KEYS, &common, flags)?;
            cmd_bench(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
