//! Command-line front end. Every subcommand reads a JSON run config plus
//! inputs, writes its outputs and a `<output>.manifest.json` next to the
//! primary output.

mod commands;
mod config;
mod manifest;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub use commands::sibling;
pub use config::{ClassifySection, CorpusSection, DecodeMethod, DecodeSection, EvalSection, MiningSection, RunConfig};
pub use manifest::{digest_file, manifest_path, with_suffix, FileDigest, RunManifest};
pub use report::{collect_grid, write_grid, GridRow};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "signspot", version, about = "Attention-based token localisation and mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config leaf, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a stem vocabulary and encode a raw corpus with it.
    BuildVocab {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the vocabulary (default: `<out stem>.vocab.tsv`).
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Encode with an existing vocabulary instead of building one.
        #[arg(long, conflicts_with = "vocab")]
        vocab_from: Option<PathBuf>,
    },
    /// Train the sequence model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode every clip and dump hypotheses with attention peaks.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine localised spottings into an annotation store.
    Mine {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// gd, gd-unfiltered, bs-all:N, bs-best:N, tf:TAU or tf-pred.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an annotation store for recall, precision and localisation.
    EvalLoc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Annotation store CSV, or `truth` for ground-truth centres.
        #[arg(long)]
        store: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the instance classifier on an annotation store.
    TrainCls {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Annotation store CSV, or `truth` for ground-truth centres.
        #[arg(long)]
        store: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the pooled instances (CSV index plus `.bin` features).
        #[arg(long)]
        instances: Option<PathBuf>,
    },
    /// Evaluate a classifier on instances from an annotation store.
    EvalCls {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "truth")]
        store: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate every localisation evaluation below a directory.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus { .. } => "gen-corpus",
            Command::BuildVocab { .. } => "build-vocab",
            Command::Train { .. } => "train",
            Command::Decode { .. } => "decode",
            Command::Mine { .. } => "mine",
            Command::EvalLoc { .. } => "eval-loc",
            Command::TrainCls { .. } => "train-cls",
            Command::EvalCls { .. } => "eval-cls",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenCorpus { common, .. }
            | Command::BuildVocab { common, .. }
            | Command::Train { common, .. }
            | Command::Decode { common, .. }
            | Command::Mine { common, .. }
            | Command::EvalLoc { common, .. }
            | Command::TrainCls { common, .. }
            | Command::EvalCls { common, .. }
            | Command::Report { common, .. } => common,
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::GenCorpus { out, .. }
            | Command::BuildVocab { out, .. }
            | Command::Train { out, .. }
            | Command::Decode { out, .. }
            | Command::Mine { out, .. }
            | Command::EvalLoc { out, .. }
            | Command::TrainCls { out, .. }
            | Command::EvalCls { out, .. }
            | Command::Report { out, .. } => out,
        }
    }
}

/// Process exit status for an error: 1 for invalid configuration or
/// arguments, 2 for failures while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Contract(_) => 1,
        _ => 2,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    base.with_overrides(&common.set)
}

fn run(cmd: &Command, cfg: &RunConfig) -> Result<commands::Outcome> {
    use commands::*;
    match cmd {
        Command::GenCorpus { out, .. } => gen_corpus(cfg, out),
        Command::BuildVocab {
            corpus,
            out,
            vocab,
            vocab_from,
            ..
        } => build_vocab(cfg, corpus, out, vocab.as_deref(), vocab_from.as_deref()),
        Command::Train { corpus, out, .. } => train_cmd(cfg, corpus, out),
        Command::Decode { model, corpus, out, .. } => decode_cmd(cfg, model, corpus, out),
        Command::Mine {
            model,
            corpus,
            strategy,
            out,
            ..
        } => mine_cmd(cfg, model, corpus, strategy.as_deref(), out),
        Command::EvalLoc { corpus, store, out, .. } => eval_loc(cfg, corpus, store, out),
        Command::TrainCls {
            corpus,
            store,
            out,
            instances,
            ..
        } => train_cls(cfg, corpus, store, out, instances.as_deref()),
        Command::EvalCls {
            model,
            corpus,
            store,
            out,
            ..
        } => eval_cls(cfg, model, corpus, store, out),
        Command::Report { grid, out, .. } => {
            let rows = collect_grid(grid)?;
            write_grid(&rows, out)?;
            Ok(Outcome {
                inputs: vec![],
                outputs: vec![out.clone()],
                details: serde_json::json!({ "runs": rows.len() }),
            })
        }
    }
}

fn execute(cmd: &Command) -> Result<()> {
    let started = Instant::now();
    let common = cmd.common();
    let cfg = load_config(common)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(Error::config("--workers must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let outcome = pool.install(|| run(cmd, &cfg))?;
    let manifest = RunManifest {
        command: cmd.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: outcome.inputs.iter().map(digest_file).collect::<Result<_>>()?,
        outputs: outcome.outputs.iter().map(digest_file).collect::<Result<_>>()?,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        details: outcome.details,
    };
    manifest.write(manifest_path(cmd.out()))
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{}: {e}", cli.command.name());
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
