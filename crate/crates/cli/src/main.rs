//! `dimo` command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Ctx, SampleArgs};
use config::RunConfig;
use dimo::{par, DimoError, Result};

#[derive(Parser, Debug)]
#[command(name = "dimo", version, about = "Discrete diffusion over joint text and motion tokens")]
struct Cli {
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker cap; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Inputs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    codebooks: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic paired corpus.
    Corpus {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train RVQ codebooks, or print token-rate arithmetic with `--rate`.
    Tokenizer {
        #[arg(long)]
        rate: bool,
        #[arg(long, default_value_t = 20.0)]
        fps: f64,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        downsample: Option<usize>,
        #[arg(long)]
        codebook: Option<usize>,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Supervised multi-task training.
    Train {
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Decode one request: t2m, m2t, m2m-inbetween, m2m-continue or caption-correct.
    Sample {
        kind: String,
        /// Caption text (t2m, m2m-continue, caption-correct).
        #[arg(long)]
        caption: Option<String>,
        /// Corpus record supplying motion and a default caption.
        #[arg(long)]
        record: Option<String>,
        /// Motion timesteps for t2m.
        #[arg(long)]
        length: Option<usize>,
        /// Kept timestep ranges for inbetweening, e.g. `0..5,30..40`.
        #[arg(long)]
        keep: Option<String>,
        /// Timesteps appended by m2m-continue.
        #[arg(long)]
        append: Option<usize>,
        /// Agreement threshold for caption-correct.
        #[arg(long)]
        threshold: Option<f64>,
        /// Overrides `decode.steps`.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Also write one CSV per decoded clip.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// GRPO fine-tuning from a supervised checkpoint.
    Grpo {
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Score a checkpoint, or the ground truth against itself.
    Eval {
        #[arg(long)]
        ground_truth: bool,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Quality and latency across decode step counts.
    Pareto {
        /// Overrides `eval.sweep_steps`, e.g. `1,5,10,20`.
        #[arg(long)]
        steps_list: Option<String>,
        #[command(flatten)]
        inputs: Inputs,
    },
}

/// Process exit code for each failure category.
fn exit_code(e: &DimoError) -> u8 {
    match e {
        DimoError::Config(_) => 2,
        DimoError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
        DimoError::Io(_) => 4,
        DimoError::CorruptInput(_) | DimoError::CorruptGrid(_) | DimoError::Format(_) | DimoError::Vocabulary(_) => 5,
        DimoError::Numeric(_) | DimoError::UndefinedLoss => 6,
        DimoError::EmptyInput(_) | DimoError::InsufficientData { .. } | DimoError::Contract(_) => 7,
        DimoError::NoOp(_) => 8,
    }
}

fn apply_inputs(cfg: &mut RunConfig, inputs: &Inputs) -> Result<()> {
    for (key, value) in [("corpus", &inputs.corpus), ("codebooks", &inputs.codebooks), ("checkpoint", &inputs.checkpoint)] {
        if let Some(p) = value {
            cfg.set("io", key, &p.to_string_lossy())?;
        }
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set_dotted(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("run", "seed", &seed.to_string())?;
    }
    if let Some(t) = cli.threads {
        cfg.set("run", "threads", &t.to_string())?;
    }
    let set_opt = |cfg: &mut RunConfig, section: &str, key: &str, v: Option<usize>| match v {
        Some(v) => cfg.set(section, key, &v.to_string()),
        None => Ok(()),
    };
    match &cli.command {
        Command::Corpus { count } => set_opt(&mut cfg, "corpus", "count", *count)?,
        Command::Tokenizer { layers, downsample, codebook, inputs, .. } => {
            set_opt(&mut cfg, "rvq", "layers", *layers)?;
            set_opt(&mut cfg, "rvq", "downsample", *downsample)?;
            set_opt(&mut cfg, "rvq", "codebook", *codebook)?;
            apply_inputs(&mut cfg, inputs)?;
        }
        Command::Train { steps, inputs } => {
            set_opt(&mut cfg, "train", "steps", *steps)?;
            apply_inputs(&mut cfg, inputs)?;
        }
        Command::Sample { steps, inputs, .. } => {
            set_opt(&mut cfg, "decode", "steps", *steps)?;
            apply_inputs(&mut cfg, inputs)?;
        }
        Command::Grpo { steps, inputs } => {
            set_opt(&mut cfg, "grpo", "steps", *steps)?;
            apply_inputs(&mut cfg, inputs)?;
        }
        Command::Eval { inputs, .. } => apply_inputs(&mut cfg, inputs)?,
        Command::Pareto { steps_list, inputs } => {
            if let Some(s) = steps_list {
                cfg.set("eval", "sweep_steps", s)?;
            }
            apply_inputs(&mut cfg, inputs)?;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if let Command::Tokenizer { rate: true, fps, .. } = &cli.command {
        return commands::print_rate(*fps, cfg.int("rvq", "layers"), cfg.int("rvq", "downsample"), cfg.int("rvq", "codebook"));
    }
    let threads = cfg.int("run", "threads");
    let ctx = Ctx { cfg, out: cli.out.clone() };
    ctx.prepare()?;
    par::with_threads(threads, || match &cli.command {
        Command::Corpus { .. } => commands::corpus(&ctx),
        Command::Tokenizer { .. } => commands::tokenizer(&ctx),
        Command::Train { .. } => commands::train(&ctx),
        Command::Sample { kind, caption, record, length, keep, append, threshold, count, csv, .. } => {
            let args = SampleArgs {
                kind: kind.clone(),
                caption: caption.clone(),
                record: record.clone(),
                length: *length,
                keep: keep.clone(),
                append: *append,
                threshold: *threshold,
                count: *count,
                csv: *csv,
            };
            commands::sample(&ctx, &args)
        }
        Command::Grpo { .. } => commands::grpo(&ctx),
        Command::Eval { ground_truth, .. } => commands::eval(&ctx, *ground_truth),
        Command::Pareto { .. } => commands::pareto(&ctx),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIMO_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
