//! The (method × cl × p) experiment grid with repeated k-fold cross
//! validation, long-format results, and a significance-marked summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cli::commands::{derive_seed, ensure_out_dir, heldout_f1_for, train_method, Method};
use crate::cli::config::RunConfig;
use crate::corpus::{corrupt, parse_conll, Sequence};
use crate::error::{Error, Result};
use crate::evalstats::{mean_std, paired_ttest_one_tailed, TtestOutcome};
use crate::features::FeatureIndex;
use crate::model::TrainSet;
use std::sync::Arc;

#[derive(Clone, Debug)]
struct Cell {
    method: Method,
    cl: usize,
    p: f64,
    repeat: usize,
    fold: usize,
}

/// Threads actually used: the `jobs` key capped by `AMBIGSEQ_THREADS`.
fn effective_jobs(requested: usize) -> usize {
    let cap = std::env::var("AMBIGSEQ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(usize::MAX);
    requested.clamp(1, cap.max(1))
}

/// Round-robin fold assignment over sequences shuffled per repeat.
fn fold_assignment(n_seqs: usize, folds: usize, base_seed: u64, repeat: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n_seqs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, &["folds", &repeat.to_string()]));
    ids.shuffle(&mut rng);
    let mut assignment = vec![0usize; n_seqs];
    for (pos, &seq) in ids.iter().enumerate() {
        assignment[seq] = pos % folds;
    }
    assignment
}

fn run_cell(
    cell: &Cell,
    sequences: &[Sequence],
    alphabet: &crate::corpus::LabelAlphabet,
    assignment: &[usize],
    cfg: &RunConfig,
    w: usize,
    base_seed: u64,
    task: &str,
) -> Result<(f64, bool)> {
    let train_seqs: Vec<Sequence> = sequences
        .iter()
        .zip(assignment)
        .filter(|(_, &f)| f != cell.fold)
        .map(|(s, _)| s.clone())
        .collect();
    let test_seqs: Vec<&Sequence> = sequences
        .iter()
        .zip(assignment)
        .filter(|(_, &f)| f == cell.fold)
        .map(|(s, _)| s)
        .collect();
    if train_seqs.is_empty() || test_seqs.is_empty() {
        return Err(Error::config("fold split produced an empty train or test side"));
    }
    // The corrupted corpus is shared by every method in the same cell, so the
    // corruption seed must not depend on the method.
    let cell_tags = [
        cell.cl.to_string(),
        format!("{}", cell.p),
        cell.repeat.to_string(),
        cell.fold.to_string(),
    ];
    let tag_refs: Vec<&str> = cell_tags.iter().map(String::as_str).collect();
    let corrupt_seed = derive_seed(base_seed, &tag_refs);
    let corpus = corrupt(&train_seqs, alphabet, w, cell.cl, cell.p, corrupt_seed)?;
    let index = Arc::new(FeatureIndex::build(&corpus, crate::features::FeatureTemplate::default()));
    let ts = TrainSet::build(corpus, index, crate::model::SetEnergy::Sum)?;

    let mut cell_cfg = cfg.clone();
    let mut trainer_tags = vec![cell.method.name().to_string()];
    trainer_tags.extend(cell_tags.iter().cloned());
    let trainer_refs: Vec<&str> = trainer_tags.iter().map(String::as_str).collect();
    cell_cfg.set("seed", derive_seed(base_seed, &trainer_refs).to_string());

    let trained = train_method(cell.method, &ts, &cell_cfg)?;
    let f1 = heldout_f1_for(&trained.model, &test_seqs, task)?;
    Ok((f1, trained.converged))
}

pub fn run_sweep(cfg: &mut RunConfig) -> Result<i32> {
    cfg.default_value("methods", "wdpsl,naive");
    cfg.default_value("cl_list", "2,3,4");
    cfg.default_value("p_list", "0.1,0.3,0.5,0.7,0.9");
    cfg.default_value("folds", "5");
    cfg.default_value("repeats", "3");
    cfg.default_value("w", "1");
    cfg.default_value("seed", "0");
    cfg.default_value("jobs", "1");
    cfg.default_value("task", "token");
    cfg.default_value("token_column", "0");
    cfg.default_value("label_column", "1");

    let data = cfg.require("data")?.to_string();
    let out = ensure_out_dir(cfg)?;
    let methods: Vec<Method> = cfg
        .require("methods")?
        .split(',')
        .map(|m| Method::parse(m.trim()))
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::config("sweep needs at least one method"));
    }
    let cls = cfg.get_list_usize("cl_list", &[2, 3, 4])?;
    let ps = cfg.get_list_f64("p_list", &[0.1, 0.3, 0.5, 0.7, 0.9])?;
    let folds = cfg.get_usize("folds", 5)?;
    let repeats = cfg.get_usize("repeats", 3)?;
    let w = cfg.get_usize("w", 1)?;
    let base_seed = cfg.get_u64("seed", 0)?;
    let jobs = effective_jobs(cfg.get_usize("jobs", 1)?);
    let task = cfg.get("task").unwrap_or("token").to_string();
    let token_column = cfg.get_usize("token_column", 0)?;
    let label_column = cfg.get_usize("label_column", 1)?;

    if folds < 2 {
        return Err(Error::config("folds must be at least 2"));
    }
    let text = std::fs::read_to_string(&data)?;
    let (alphabet, sequences) = parse_conll(&text, token_column, label_column)?;
    if sequences.len() < folds {
        return Err(Error::data(format!(
            "{} sequences cannot fill {folds} folds",
            sequences.len()
        )));
    }

    let assignments: Vec<Vec<usize>> = (0..repeats)
        .map(|r| fold_assignment(sequences.len(), folds, base_seed, r))
        .collect();

    let mut cells = Vec::new();
    for &method in &methods {
        for &cl in &cls {
            for &p in &ps {
                for repeat in 0..repeats {
                    for fold in 0..folds {
                        cells.push(Cell { method, cl, p, repeat, fold });
                    }
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
    let results: Vec<Result<(f64, bool)>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                run_cell(cell, &sequences, &alphabet, &assignments[cell.repeat], cfg, w, base_seed, &task)
            })
            .collect()
    });

    let mut rows = String::from("method,cl,p,fold,repeat,f1\n");
    let mut grouped: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    let mut any_nonconverged = false;
    for (cell, result) in cells.iter().zip(results) {
        let (f1, converged) = result?;
        any_nonconverged |= !converged;
        let _ = writeln!(
            rows,
            "{},{},{},{},{},{f1}",
            cell.method.name(),
            cell.cl,
            cell.p,
            cell.fold,
            cell.repeat
        );
        grouped
            .entry((cell.method.name().to_string(), cell.cl, format!("{}", cell.p)))
            .or_default()
            .push(f1);
    }
    std::fs::write(out.join("results.csv"), rows)?;

    // Summary with one-tailed paired t-test marks against the first method:
    // `superior` means the first method beat this row's method.
    let reference = methods[0].name().to_string();
    let mut summary = String::from("method,cl,p,mean,std,mark\n");
    for ((method, cl, p), scores) in &grouped {
        let (mean, std) = mean_std(scores);
        let mark = if *method == reference {
            ""
        } else {
            let ref_scores = &grouped[&(reference.clone(), *cl, p.clone())];
            if ref_scores.len() != scores.len() || scores.len() < 2 {
                ""
            } else {
                match paired_ttest_one_tailed(ref_scores, scores, 0.05)? {
                    TtestOutcome::Superior => "•",
                    TtestOutcome::Inferior => "◦",
                    TtestOutcome::Tie => "",
                }
            }
        };
        let _ = writeln!(summary, "{method},{cl},{p},{mean},{std},{mark}");
    }
    std::fs::write(out.join("summary.csv"), summary)?;
    cfg.write_resolved(&out)?;
    println!(
        "swept {} cells ({} methods x {} cl x {} p x {} repeats x {} folds) -> {}",
        cells.len(),
        methods.len(),
        cls.len(),
        ps.len(),
        repeats,
        folds,
        out.join("results.csv").display()
    );
    Ok(if any_nonconverged { 4 } else { 0 })
}
