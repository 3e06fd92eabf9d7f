//! The corrupt / train / predict / eval / counts commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{self, BaselineConfig, BaselineKind, ClplSign};
use crate::cli::config::RunConfig;
use crate::corpus::{corrupt, parse_conll, parse_corpus, write_corpus, AmbiguousCorpus, LabelAlphabet, Sequence};
use crate::error::{Error, Result};
use crate::evalstats::{chunk_f1, token_f1, EvalReport};
use crate::features::{FeatureIndex, FeatureTemplate};
use crate::model::{SetEnergy, TrainSet, WeightModel};
use crate::wdpsl::{self, InitMode, TrainConfig, UpdateMode};

/// The regularization grid searched by `train --grid`.
pub const C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

pub fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = PathBuf::from(cfg.require("out")?);
    std::fs::create_dir_all(&out)?;
    Ok(out)
}

/// Stable seed derivation for nested runs: FNV-1a over the base seed and tags.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ base.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for tag in tags {
        for &b in tag.as_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash ^= 0xff;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn run_corrupt(cfg: &mut RunConfig) -> Result<i32> {
    cfg.default_value("token_column", "0");
    cfg.default_value("label_column", "1");
    cfg.default_value("w", "1");
    cfg.default_value("cl", "3");
    cfg.default_value("p", "0.5");
    cfg.default_value("seed", "0");

    let data = cfg.require("data")?.to_string();
    let out = ensure_out_dir(cfg)?;
    let token_column = cfg.get_usize("token_column", 0)?;
    let label_column = cfg.get_usize("label_column", 1)?;
    let w = cfg.get_usize("w", 1)?;
    let cl = cfg.get_usize("cl", 3)?;
    if cl == 0 {
        return Err(Error::config("cl must be at least 1"));
    }
    let p = cfg.get_f64("p", 0.5)?;
    let seed = cfg.get_u64("seed", 0)?;

    let text = std::fs::read_to_string(&data)?;
    let (alphabet, sequences) = parse_conll(&text, token_column, label_column)?;
    let corpus = corrupt(&sequences, &alphabet, w, cl, p, seed)?;
    std::fs::write(out.join("corpus.txt"), write_corpus(&corpus))?;
    cfg.write_resolved(&out)?;
    println!(
        "corrupted {} sequences into {} pieces ({} exact, {} skipped short) -> {}",
        corpus.sequences.len(),
        corpus.n_pieces(),
        corpus.pieces.iter().filter(|p| p.s() == 1).count(),
        corpus.skipped_short,
        out.join("corpus.txt").display()
    );
    Ok(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Wdpsl,
    Baseline(BaselineKind),
}

impl Method {
    pub fn parse(name: &str) -> Result<Method> {
        if name == "wdpsl" {
            Ok(Method::Wdpsl)
        } else {
            Ok(Method::Baseline(name.parse()?))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Wdpsl => "wdpsl",
            Method::Baseline(BaselineKind::Ssvm) => "ssvm",
            Method::Baseline(BaselineKind::Naive) => "naive",
            Method::Baseline(BaselineKind::Clpl) => "clpl",
            Method::Baseline(BaselineKind::Plsvm) => "plsvm",
            Method::Baseline(BaselineKind::Cllp) => "cllp",
        }
    }
}

fn set_energy_of(cfg: &RunConfig) -> Result<SetEnergy> {
    match cfg.get("set_energy") {
        None | Some("sum") => Ok(SetEnergy::Sum),
        Some("mean") => Ok(SetEnergy::Mean),
        Some(v) => Err(Error::config(format!("set_energy expects sum|mean, got '{v}'"))),
    }
}

fn template_of(cfg: &RunConfig) -> Result<FeatureTemplate> {
    let mut template = FeatureTemplate::default();
    if let Some(bits) = cfg.get("hash_bits") {
        let bits: u8 = bits
            .parse()
            .map_err(|_| Error::config(format!("hash_bits expects a small integer, got '{bits}'")))?;
        if bits == 0 || bits > 30 {
            return Err(Error::config("hash_bits must lie in [1, 30]"));
        }
        template.hash_bits = Some(bits);
    }
    Ok(template)
}

pub fn wdpsl_config(cfg: &RunConfig) -> Result<TrainConfig> {
    let init_mode = match cfg.get("init") {
        None | Some("knn") => InitMode::Knn,
        Some("uniform") => InitMode::Uniform,
        Some(v) => return Err(Error::config(format!("init expects uniform|knn, got '{v}'"))),
    };
    let update_mode = match cfg.get("update") {
        None | Some("weak") => UpdateMode::Weak,
        Some("avg") => UpdateMode::Frozen,
        Some(v) => return Err(Error::config(format!("update expects weak|avg, got '{v}'"))),
    };
    Ok(TrainConfig {
        c1: cfg.get_f64("c1", 1.0)?,
        c2: cfg.get_f64("c2", 1.0)?,
        eps: cfg.get_f64("eps", 1e-3)?,
        eps1: cfg.get_f64("eps1", 1e-3)?,
        tol: cfg.get_f64("tol", 1e-6)?,
        k: cfg.get_usize("k", 10)?,
        max_alternations: cfg.get_usize("max_alternations", 50)?,
        max_qp_sweeps: cfg.get_usize("max_qp_sweeps", 100_000)?,
        init_mode,
        update_mode,
        confidence_floor: cfg.get_f64("floor", 0.0)?,
        seed: cfg.get_u64("seed", 0)?,
    })
}

pub fn baseline_config(cfg: &RunConfig) -> Result<BaselineConfig> {
    let clpl_sign = match cfg.get("clpl_sign") {
        None | Some("penalize_positive") => ClplSign::PenalizePositive,
        Some("literal") => ClplSign::Literal,
        Some(v) => {
            return Err(Error::config(format!(
                "clpl_sign expects penalize_positive|literal, got '{v}'"
            )))
        }
    };
    Ok(BaselineConfig {
        c1: cfg.get_f64("c1", 1.0)?,
        c2: cfg.get_f64("c2", 1.0)?,
        eps1: cfg.get_f64("eps1", 1e-3)?,
        tol: cfg.get_f64("tol", 1e-6)?,
        max_qp_sweeps: cfg.get_usize("max_qp_sweeps", 100_000)?,
        epochs: cfg.get_usize("epochs", 20)?,
        rounds: cfg.get_usize("rounds", 5)?,
        seed: cfg.get_u64("seed", 0)?,
        clpl_sign,
    })
}

/// Unified trainer output for the CLI layer.
pub struct Trained {
    pub model: WeightModel,
    /// (step, objective, constraints, detail) rows for the trace CSV.
    pub rows: Vec<(usize, f64, usize, String)>,
    pub converged: bool,
    pub confidence_dump: Option<String>,
    /// Constraint-generation sweeps as `sweep,added,objective,max_violation`
    /// CSV, one block per solve.
    pub sweep_dump: Option<String>,
}

pub fn train_method(method: Method, ts: &TrainSet, cfg: &RunConfig) -> Result<Trained> {
    match method {
        Method::Wdpsl => {
            let tc = wdpsl_config(cfg)?;
            let outcome = wdpsl::train(ts, &tc)?;
            let last = outcome.trace.len();
            let rows = outcome
                .trace
                .iter()
                .map(|row| {
                    let detail = if row.alternation == last {
                        outcome.stop.to_string()
                    } else {
                        String::new()
                    };
                    (row.alternation, row.objective, row.constraints, detail)
                })
                .collect();
            let dump = if cfg.get_bool("dump_confidences", false)? {
                let mut text = String::from("alternation,piece_id,candidate_idx,confidence\n");
                for row in &outcome.trace {
                    for (piece_id, values) in row.confidences.values.iter().enumerate() {
                        for (j, v) in values.iter().enumerate() {
                            let _ = writeln!(text, "{},{piece_id},{j},{v}", row.alternation);
                        }
                    }
                }
                Some(text)
            } else {
                None
            };
            let sweep_dump = if cfg.get_bool("dump_sweeps", false)? {
                let mut text = String::from("alternation,sweep,added,objective,max_violation\n");
                for (alt, sweeps) in outcome.cutting_traces.iter().enumerate() {
                    for t in sweeps {
                        let _ = writeln!(
                            text,
                            "{},{},{},{},{}",
                            alt + 1,
                            t.sweep,
                            t.added,
                            t.objective,
                            t.max_violation
                        );
                    }
                }
                Some(text)
            } else {
                None
            };
            Ok(Trained {
                model: outcome.model,
                rows,
                converged: outcome.qp_converged,
                confidence_dump: dump,
                sweep_dump,
            })
        }
        Method::Baseline(kind) => {
            let bc = baseline_config(cfg)?;
            let outcome = baselines::train_baseline(kind, ts, &bc)?;
            let sweep_dump = if cfg.get_bool("dump_sweeps", false)? {
                let mut text = String::from("alternation,sweep,added,objective,max_violation\n");
                for t in &outcome.trace {
                    let _ = writeln!(text, "1,{},{},{},{}", t.sweep, t.added, t.objective, t.max_violation);
                }
                Some(text)
            } else {
                None
            };
            let rows = outcome
                .trace
                .iter()
                .map(|t| (t.sweep, t.objective, t.added, String::new()))
                .collect();
            Ok(Trained {
                model: outcome.model,
                rows,
                converged: outcome.converged,
                confidence_dump: None,
                sweep_dump,
            })
        }
    }
}

fn write_trace(path: &Path, rows: &[(usize, f64, usize, String)]) -> Result<()> {
    let mut out = String::from("step,objective,constraints,detail\n");
    for (step, objective, constraints, detail) in rows {
        let _ = writeln!(out, "{step},{objective},{constraints},{detail}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Decodes sequences and scores them against their gold labels.
pub fn heldout_f1_for(model: &WeightModel, sequences: &[&Sequence], task: &str) -> Result<f64> {
    let alphabet = model.index.alphabet();
    let mut gold_ids = Vec::new();
    let mut pred_ids = Vec::new();
    for seq in sequences {
        let gold = seq
            .gold
            .as_ref()
            .ok_or_else(|| Error::data("held-out sequence lacks gold labels"))?;
        gold_ids.push(gold.clone());
        pred_ids.push(model.decode(&seq.tokens));
    }
    if task == "chunk" {
        let to_names = |rows: &[Vec<usize>]| {
            rows.iter()
                .map(|row| row.iter().map(|&id| alphabet.name(id).to_string()).collect())
                .collect::<Vec<Vec<String>>>()
        };
        Ok(chunk_f1(&to_names(&gold_ids), &to_names(&pred_ids))?.f1)
    } else {
        Ok(token_f1(&gold_ids, &pred_ids)?.f1)
    }
}

fn subset_pieces(corpus: &AmbiguousCorpus, keep: &[bool]) -> AmbiguousCorpus {
    let mut sub = corpus.clone();
    sub.pieces.retain(|piece| keep[piece.seq_id]);
    sub
}

/// Grid search over `C_GRID`, selecting by held-out F1 (ties to the smaller
/// value). Returns the chosen C and the grid report rows.
fn grid_select(
    method: Method,
    ts: &TrainSet,
    cfg: &RunConfig,
    task: &str,
    heldout: f64,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let n_seqs = ts.corpus.sequences.len();
    let mut ids: Vec<usize> = (0..n_seqs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["grid-split"]));
    ids.shuffle(&mut rng);
    let n_val = ((n_seqs as f64) * heldout).floor() as usize;
    if n_val == 0 || n_val == n_seqs {
        return Err(Error::config(format!(
            "held-out fraction {heldout} leaves an empty split for {n_seqs} sequences"
        )));
    }
    let mut is_val = vec![false; n_seqs];
    for &i in &ids[..n_val] {
        is_val[i] = true;
    }
    let keep: Vec<bool> = is_val.iter().map(|v| !v).collect();
    let sub_corpus = subset_pieces(&ts.corpus, &keep);
    if sub_corpus.pieces.is_empty() {
        return Err(Error::data("grid split left no training pieces"));
    }
    let sub_ts = TrainSet::build(sub_corpus, ts.index.clone(), ts.set_energy)?;
    let val_seqs: Vec<&Sequence> = (0..n_seqs).filter(|&i| is_val[i]).map(|i| &ts.corpus.sequences[i]).collect();

    let mut rows = Vec::new();
    let mut best = (f64::NEG_INFINITY, C_GRID[0]);
    for &c in &C_GRID {
        let mut sub_cfg = cfg.clone();
        sub_cfg.set("c1", format!("{c}"));
        sub_cfg.set("c2", format!("{c}"));
        let trained = train_method(method, &sub_ts, &sub_cfg)?;
        let f1 = heldout_f1_for(&trained.model, &val_seqs, task)?;
        rows.push((c, f1));
        if f1 > best.0 {
            best = (f1, c);
        }
    }
    Ok((best.1, rows))
}

pub fn run_train(cfg: &mut RunConfig) -> Result<i32> {
    cfg.default_value("method", "wdpsl");
    cfg.default_value("c1", "1");
    cfg.default_value("c2", "1");
    cfg.default_value("seed", "0");
    cfg.default_value("task", "token");

    let corpus_path = cfg.require("corpus")?.to_string();
    let out = ensure_out_dir(cfg)?;
    let method = Method::parse(cfg.require("method")?)?;
    let task = cfg.get("task").unwrap_or("token").to_string();

    let text = std::fs::read_to_string(&corpus_path)?;
    let corpus = parse_corpus(&text)?;
    let index = Arc::new(FeatureIndex::build(&corpus, template_of(cfg)?));
    let ts = TrainSet::build(corpus, index, set_energy_of(cfg)?)?;

    if cfg.get_bool("grid", false)? {
        let heldout = cfg.get_f64("heldout", 0.5)?;
        let seed = cfg.get_u64("seed", 0)?;
        let (chosen, rows) = grid_select(method, &ts, cfg, &task, heldout, seed)?;
        let mut grid_text = String::from("c,heldout_f1,selected\n");
        for (c, f1) in &rows {
            let _ = writeln!(grid_text, "{c},{f1},{}", if *c == chosen { 1 } else { 0 });
        }
        std::fs::write(out.join("grid.csv"), grid_text)?;
        cfg.set("c1", format!("{chosen}"));
        cfg.set("c2", format!("{chosen}"));
        println!("grid selected C={chosen} from {:?}", C_GRID);
    }

    let trained = train_method(method, &ts, cfg)?;
    trained.model.save(&out.join("model.txt"))?;
    ts.index.save(&out.join("features.txt"))?;
    write_trace(&out.join("trace.csv"), &trained.rows)?;
    if let Some(dump) = &trained.confidence_dump {
        std::fs::write(out.join("confidences.csv"), dump)?;
    }
    if let Some(dump) = &trained.sweep_dump {
        std::fs::write(out.join("sweeps.csv"), dump)?;
    }
    cfg.write_resolved(&out)?;
    println!(
        "trained {} on {} pieces (dim {}) -> {}",
        method.name(),
        ts.n(),
        ts.index.dim(),
        out.join("model.txt").display()
    );
    if trained.converged {
        Ok(0)
    } else {
        eprintln!("warning: solver did not reach its tolerance; outputs written");
        Ok(4)
    }
}

/// Parses test data and maps its gold labels through the model's alphabet.
/// Labels unseen in training are a data error.
pub fn parse_test_data(
    text: &str,
    token_column: usize,
    label_column: usize,
    alphabet: &LabelAlphabet,
) -> Result<Vec<Sequence>> {
    let (local_alphabet, sequences) = parse_conll(text, token_column, label_column)?;
    sequences
        .into_iter()
        .map(|seq| {
            let gold = seq
                .gold
                .expect("parse_conll always returns gold labels")
                .into_iter()
                .map(|id| {
                    let name = local_alphabet.name(id);
                    alphabet
                        .id(name)
                        .ok_or_else(|| Error::data(format!("test label '{name}' unseen in training")))
                })
                .collect::<Result<Vec<usize>>>()?;
            Ok(Sequence { tokens: seq.tokens, gold: Some(gold) })
        })
        .collect()
}

pub fn run_predict(cfg: &mut RunConfig) -> Result<i32> {
    cfg.default_value("token_column", "0");
    cfg.default_value("label_column", "1");

    let model_path = cfg.require("model")?.to_string();
    let features_path = cfg.require("features")?.to_string();
    let data_path = cfg.require("data")?.to_string();
    let out = ensure_out_dir(cfg)?;
    let token_column = cfg.get_usize("token_column", 0)?;
    let label_column = cfg.get_usize("label_column", 1)?;

    let index = Arc::new(FeatureIndex::load(Path::new(&features_path))?);
    let model = WeightModel::load(Path::new(&model_path), index.clone())?;
    let text = std::fs::read_to_string(&data_path)?;
    let sequences = parse_test_data(&text, token_column, label_column, index.alphabet())?;

    let mut out_text = String::new();
    for seq in &sequences {
        let pred = model.decode(&seq.tokens);
        let gold = seq.gold.as_ref().expect("test sequences carry gold labels");
        for ((token, &g), &p) in seq.tokens.iter().zip(gold).zip(&pred) {
            let _ = writeln!(out_text, "{token} {} {}", index.alphabet().name(g), index.alphabet().name(p));
        }
        out_text.push('\n');
    }
    std::fs::write(out.join("predictions.conll"), out_text)?;
    cfg.write_resolved(&out)?;
    println!("decoded {} sequences -> {}", sequences.len(), out.join("predictions.conll").display());
    Ok(0)
}

fn report_row(out: &mut String, metric: &str, report: &EvalReport) {
    let _ = writeln!(
        out,
        "{metric},{},{},{},{}",
        report.precision,
        report.recall,
        report.f1,
        if report.no_chunks { "no_chunks" } else { "" }
    );
}

pub fn run_eval(cfg: &mut RunConfig) -> Result<i32> {
    cfg.default_value("task", "token");
    let pred_path = cfg.require("pred")?.to_string();
    let out = ensure_out_dir(cfg)?;
    let task = cfg.get("task").unwrap_or("token").to_string();

    let text = std::fs::read_to_string(&pred_path)?;
    let mut gold_names: Vec<Vec<String>> = Vec::new();
    let mut pred_names: Vec<Vec<String>> = Vec::new();
    let mut cur_gold = Vec::new();
    let mut cur_pred = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !cur_gold.is_empty() {
                gold_names.push(std::mem::take(&mut cur_gold));
                pred_names.push(std::mem::take(&mut cur_pred));
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected `token gold pred`, found {} columns", cols.len()),
            });
        }
        cur_gold.push(cols[1].to_string());
        cur_pred.push(cols[2].to_string());
    }
    if !cur_gold.is_empty() {
        gold_names.push(cur_gold);
        pred_names.push(cur_pred);
    }

    let mut alphabet = LabelAlphabet::new();
    let to_ids = |rows: &[Vec<String>], alphabet: &mut LabelAlphabet| {
        rows.iter()
            .map(|row| row.iter().map(|name| alphabet.intern(name)).collect())
            .collect::<Vec<Vec<usize>>>()
    };
    let gold_ids = to_ids(&gold_names, &mut alphabet);
    let pred_ids = to_ids(&pred_names, &mut alphabet);

    let mut report_text = String::from("metric,precision,recall,f1,flag\n");
    let token = token_f1(&gold_ids, &pred_ids)?;
    report_row(&mut report_text, "token", &token);
    println!("token F1: {:.4}", token.f1);
    if task == "chunk" {
        let chunk = chunk_f1(&gold_names, &pred_names)?;
        report_row(&mut report_text, "chunk", &chunk);
        println!("chunk F1: {:.4}", chunk.f1);
    }
    std::fs::write(out.join("report.csv"), report_text)?;
    cfg.write_resolved(&out)?;
    Ok(0)
}

pub fn run_counts(cfg: &mut RunConfig) -> Result<i32> {
    cfg.default_value("w", "1");
    let n = cfg.get_u64("seqs", 0)?;
    let len = cfg.get_u64("seq_len", 0)?;
    let k = cfg.get_u64("cand", 0)?;
    let q = cfg.get_u64("labels", 0)?;
    let w = cfg.get_u64("w", 1)?;
    let (j0, j1, j) = baselines::constraint_counts(n, len, k, q, w)?;
    println!("averaged-loss constraints:       {j0}");
    println!("identification-loss constraints: {j1}");
    println!("piecewise-loss constraints:      {j}");
    if cfg.get("out").is_some() {
        let out = ensure_out_dir(cfg)?;
        std::fs::write(
            out.join("counts.csv"),
            format!("objective,constraints\naveraged,{j0}\nidentification,{j1}\npiecewise,{j}\n"),
        )?;
        cfg.write_resolved(&out)?;
    }
    Ok(0)
}
