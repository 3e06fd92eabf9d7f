//! Command-line surface: corrupt, train, predict, eval, sweep, counts.
//!
//! All settings are flat key=value pairs. A `--config FILE` supplies file
//! values, dedicated flags and repeated `--set key=value` pairs override
//! them, and every run echoes its resolved configuration next to its
//! outputs. Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 solver did not reach tolerance (outputs still written).

pub mod commands;
pub mod config;
pub mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "ambigseq", version, about = "Sequence labeling from partially annotated corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an ambiguously annotated corpus from gold CoNLL data.
    Corrupt {
        #[command(flatten)]
        common: Common,
        /// Gold CoNLL input file.
        #[arg(long)]
        data: Option<String>,
        /// Candidates per ambiguous piece.
        #[arg(long)]
        cl: Option<usize>,
        /// Proportion of pieces kept exactly annotated.
        #[arg(long)]
        p: Option<f64>,
        /// Transition factors per piece.
        #[arg(long)]
        w: Option<usize>,
        #[arg(long)]
        token_column: Option<usize>,
        #[arg(long)]
        label_column: Option<usize>,
    },
    /// Train a model on a corrupted corpus.
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus file produced by `corrupt`.
        #[arg(long)]
        corpus: Option<String>,
        /// wdpsl, ssvm, naive, clpl, plsvm, or cllp.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        c2: Option<f64>,
        /// Neighbor count for confidence initialization.
        #[arg(long)]
        k: Option<usize>,
        /// Confidence initialization: uniform or knn.
        #[arg(long)]
        init: Option<String>,
        /// Confidence updates: weak or avg (frozen).
        #[arg(long)]
        update: Option<String>,
        /// Search C over the builtin grid by held-out F1.
        #[arg(long)]
        grid: bool,
    },
    /// Decode test sequences with a trained model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        features: Option<String>,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        token_column: Option<usize>,
        #[arg(long)]
        label_column: Option<usize>,
    },
    /// Score a prediction file (token gold pred columns).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: Option<String>,
        /// token or chunk.
        #[arg(long)]
        task: Option<String>,
    },
    /// Run the full method x cl x p grid with repeated cross validation.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<String>,
        /// Comma-separated method list; the first is the t-test reference.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        cl_list: Option<String>,
        #[arg(long)]
        p_list: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Parallel cells (capped by AMBIGSEQ_THREADS).
        #[arg(long)]
        jobs: Option<usize>,
        /// token or chunk.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        token_column: Option<usize>,
        #[arg(long)]
        label_column: Option<usize>,
    },
    /// Print constraint counts of the three soft-margin formulations.
    Counts {
        #[command(flatten)]
        common: Common,
        /// Number of sequences N.
        #[arg(long)]
        seqs: Option<u64>,
        /// Sequence length L.
        #[arg(long)]
        seq_len: Option<u64>,
        /// Candidate labels per element k.
        #[arg(long)]
        cand: Option<u64>,
        /// Alphabet size q.
        #[arg(long)]
        labels: Option<u64>,
        #[arg(long)]
        w: Option<u64>,
    },
}

fn push_opt<T: ToString>(pairs: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        pairs.push((key.to_string(), v.to_string()));
    }
}

fn common_pairs(common: &Common) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for item in &common.set {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got '{item}'")))?;
        pairs.push((key.to_string(), value.to_string()));
    }
    push_opt(&mut pairs, "out", common.out.clone());
    push_opt(&mut pairs, "seed", common.seed);
    Ok(pairs)
}

fn build_config(common: &Common, pairs: Vec<(String, String)>) -> Result<RunConfig> {
    let mut all = common_pairs(common)?;
    all.extend(pairs);
    RunConfig::from_sources(common.config.as_deref(), &all)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Corrupt { common, data, cl, p, w, token_column, label_column } => {
            let mut pairs = Vec::new();
            push_opt(&mut pairs, "data", data);
            push_opt(&mut pairs, "cl", cl);
            push_opt(&mut pairs, "p", p);
            push_opt(&mut pairs, "w", w);
            push_opt(&mut pairs, "token_column", token_column);
            push_opt(&mut pairs, "label_column", label_column);
            let mut cfg = build_config(&common, pairs)?;
            commands::run_corrupt(&mut cfg)
        }
        Command::Train { common, corpus, method, c1, c2, k, init, update, grid } => {
            let mut pairs = Vec::new();
            push_opt(&mut pairs, "corpus", corpus);
            push_opt(&mut pairs, "method", method);
            push_opt(&mut pairs, "c1", c1);
            push_opt(&mut pairs, "c2", c2);
            push_opt(&mut pairs, "k", k);
            push_opt(&mut pairs, "init", init);
            push_opt(&mut pairs, "update", update);
            if grid {
                pairs.push(("grid".to_string(), "true".to_string()));
            }
            let mut cfg = build_config(&common, pairs)?;
            commands::run_train(&mut cfg)
        }
        Command::Predict { common, model, features, data, token_column, label_column } => {
            let mut pairs = Vec::new();
            push_opt(&mut pairs, "model", model);
            push_opt(&mut pairs, "features", features);
            push_opt(&mut pairs, "data", data);
            push_opt(&mut pairs, "token_column", token_column);
            push_opt(&mut pairs, "label_column", label_column);
            let mut cfg = build_config(&common, pairs)?;
            commands::run_predict(&mut cfg)
        }
        Command::Eval { common, pred, task } => {
            let mut pairs = Vec::new();
            push_opt(&mut pairs, "pred", pred);
            push_opt(&mut pairs, "task", task);
            let mut cfg = build_config(&common, pairs)?;
            commands::run_eval(&mut cfg)
        }
        Command::Sweep {
            common,
            data,
            methods,
            cl_list,
            p_list,
            folds,
            repeats,
            jobs,
            task,
            token_column,
            label_column,
        } => {
            let mut pairs = Vec::new();
            push_opt(&mut pairs, "data", data);
            push_opt(&mut pairs, "methods", methods);
            push_opt(&mut pairs, "cl_list", cl_list);
            push_opt(&mut pairs, "p_list", p_list);
            push_opt(&mut pairs, "folds", folds);
            push_opt(&mut pairs, "repeats", repeats);
            push_opt(&mut pairs, "jobs", jobs);
            push_opt(&mut pairs, "task", task);
            push_opt(&mut pairs, "token_column", token_column);
            push_opt(&mut pairs, "label_column", label_column);
            let mut cfg = build_config(&common, pairs)?;
            sweep::run_sweep(&mut cfg)
        }
        Command::Counts { common, seqs, seq_len, cand, labels, w } => {
            let mut pairs = Vec::new();
            push_opt(&mut pairs, "seqs", seqs);
            push_opt(&mut pairs, "seq_len", seq_len);
            push_opt(&mut pairs, "cand", cand);
            push_opt(&mut pairs, "labels", labels);
            push_opt(&mut pairs, "w", w);
            let mut cfg = build_config(&common, pairs)?;
            commands::run_counts(&mut cfg)
        }
    }
}

fn exit_code_of(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        _ => 3,
    }
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_of(&err))
        }
    }
}
