//! Command-line front end for fixsmith: corpus generation, training,
//! repair and evaluation.

pub mod config;
pub mod eval;
pub mod gen;
pub mod repair;
pub mod report;
pub mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fixsmith::decode::DecodeMode;
use fixsmith::objective::ObjectiveKind;
use thiserror::Error;

use crate::config::{Overrides, RunConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
        move |e| CliError::Io(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "fixsmith", version, about = "Sampling-based repair of syntax errors in a small C subset")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out fold (0-4).
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub mode: Option<DecodeMode>,
    /// Candidate fixes drawn per repair iteration.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a mutation corpus split into folds.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on every fold except the held-out one.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the state checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Repair every `.c` file in a directory.
    Repair {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Write one repair trace per program.
        #[arg(long)]
        trace: bool,
    },
    /// Repair the held-out fold and report fix rates.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trace: bool,
        /// Draw each sweep point independently instead of reusing prefixes.
        #[arg(long)]
        independent_draws: bool,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Share of held-out pairs whose gold fix is among the sampled candidates.
    IntendedFixEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        seed: c.seed,
        fold: c.fold,
        objective: c.objective,
        mode: c.mode,
        samples: c.samples,
        max_iter: c.max_iter,
        out: c.out.clone(),
        ..Default::default()
    }
}

fn resolve(common: &Common, extra: Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    let mut o = overrides(common);
    o.corpus = extra.corpus;
    o.checkpoint = extra.checkpoint;
    o.inputs = extra.inputs;
    o.trace = extra.trace;
    o.epochs = extra.epochs;
    o.resume = extra.resume;
    o.independent_draws = extra.independent_draws;
    o.limit = extra.limit;
    cfg.apply(&o);
    Ok(cfg)
}

/// Thread pool capped by `FIXSMITH_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FIXSMITH_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::Config(format!("FIXSMITH_THREADS must be a count, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Io(e.to_string()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common } => gen::cmd_gen(&resolve(&common, Overrides::default())?).map(|_| ()),
        Command::Train { common, corpus, epochs, resume } => {
            let cfg = resolve(&common, Overrides { corpus, epochs, resume, ..Default::default() })?;
            train::cmd_train(&cfg).map(|_| ())
        }
        Command::Repair { common, checkpoint, inputs, trace } => {
            let cfg = resolve(&common, Overrides { checkpoint, inputs, trace, ..Default::default() })?;
            let report = repair::cmd_repair(&cfg)?;
            for e in &report.programs {
                match &e.error {
                    Some(err) => eprintln!("{}: {err}", e.file),
                    None => println!("{}: {}", e.file, e.status.map(|s| s.name()).unwrap_or("-")),
                }
            }
            Ok(())
        }
        Command::Eval { common, corpus, checkpoint, trace, independent_draws, limit } => {
            let cfg = resolve(&common, Overrides { corpus, checkpoint, trace, independent_draws, limit, ..Default::default() })?;
            let r = eval::cmd_eval(&cfg)?;
            println!(
                "resolved {:.1}%  completely fixed {:.1}%  partially fixed {:.1}%  ({} programs)",
                r.overall.resolved_messages_pct, r.overall.completely_fixed_pct, r.overall.partially_fixed_pct, r.overall.programs
            );
            Ok(())
        }
        Command::IntendedFixEval { common, corpus, checkpoint, limit } => {
            let cfg = resolve(&common, Overrides { corpus, checkpoint, limit, ..Default::default() })?;
            let r = eval::cmd_intended_fix_eval(&cfg)?;
            println!("intended-fix hit rate {:.1}% ({}/{})", r.hit_rate_pct, r.hits, r.pairs);
            Ok(())
        }
    }
}
