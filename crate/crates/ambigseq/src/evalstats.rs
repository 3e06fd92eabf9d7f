//! Token- and chunk-level F1 evaluation plus the one-tailed paired t-test
//! used to compare cross-validated systems.

use crate::error::{Error, Result};

/// Precision/recall/F1 with optional per-fold scores for aggregated reports.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fold_f1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Set when neither gold nor prediction contained any chunk.
    pub no_chunks: bool,
}

impl EvalReport {
    fn single(precision: f64, recall: f64, f1: f64, no_chunks: bool) -> EvalReport {
        EvalReport { precision, recall, f1, fold_f1: vec![f1], mean: f1, std: 0.0, no_chunks }
    }

    /// Aggregates fold-level F1 scores into mean ± sample standard deviation.
    pub fn from_folds(fold_f1: Vec<f64>) -> EvalReport {
        let (mean, std) = mean_std(&fold_f1);
        EvalReport { precision: mean, recall: mean, f1: mean, fold_f1, mean, std, no_chunks: false }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Micro-averaged token-level F1. With every token labeled, precision equals
/// recall equals accuracy.
pub fn token_f1(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::data(format!(
            "gold has {} sequences, predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::data(format!("sequence {i}: length mismatch {} vs {}", g.len(), p.len())));
        }
        total += g.len();
        correct += g.iter().zip(p).filter(|(a, b)| a == b).count();
    }
    let acc = if total > 0 { correct as f64 / total as f64 } else { 0.0 };
    Ok(EvalReport::single(acc, acc, acc, false))
}

/// A chunk is `(type, start, end_exclusive)`.
fn extract_chunks(labels: &[&str]) -> Result<Vec<(String, usize, usize)>> {
    let mut chunks = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (pos, &tag) in labels.iter().enumerate() {
        let (starts_new, chunk_type) = if tag == "O" {
            (false, None)
        } else if let Some(t) = tag.strip_prefix("B-") {
            (true, Some(t))
        } else if let Some(t) = tag.strip_prefix("I-") {
            // I-X continues a chunk of the same type and starts one after O
            // or after a chunk of a different type.
            let continues = matches!(&open, Some((ot, _)) if ot == t);
            (!continues, Some(t))
        } else {
            return Err(Error::data(format!("unknown chunk tag '{tag}' at position {pos}")));
        };
        match (chunk_type, starts_new) {
            (None, _) => {
                if let Some((t, start)) = open.take() {
                    chunks.push((t, start, pos));
                }
            }
            (Some(t), true) => {
                if let Some((ot, start)) = open.take() {
                    chunks.push((ot, start, pos));
                }
                open = Some((t.to_string(), pos));
            }
            (Some(_), false) => {}
        }
    }
    if let Some((t, start)) = open {
        chunks.push((t, start, labels.len()));
    }
    Ok(chunks)
}

/// Chunk-level F1 over exact `(type, span)` matches under BIO semantics.
pub fn chunk_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::data(format!(
            "gold has {} sequences, predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    let mut n_gold = 0usize;
    let mut n_pred = 0usize;
    let mut n_match = 0usize;
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::data(format!("sequence {i}: length mismatch {} vs {}", g.len(), p.len())));
        }
        let g_refs: Vec<&str> = g.iter().map(String::as_str).collect();
        let p_refs: Vec<&str> = p.iter().map(String::as_str).collect();
        let gold_chunks = extract_chunks(&g_refs)?;
        let pred_chunks = extract_chunks(&p_refs)?;
        n_gold += gold_chunks.len();
        n_pred += pred_chunks.len();
        let gold_set: std::collections::HashSet<_> = gold_chunks.into_iter().collect();
        n_match += pred_chunks.iter().filter(|c| gold_set.contains(*c)).count();
    }
    if n_gold == 0 && n_pred == 0 {
        return Ok(EvalReport::single(0.0, 0.0, 0.0, true));
    }
    let precision = if n_pred > 0 { n_match as f64 / n_pred as f64 } else { 0.0 };
    let recall = if n_gold > 0 { n_match as f64 / n_gold as f64 } else { 0.0 };
    Ok(EvalReport::single(precision, recall, f1_of(precision, recall), false))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TtestOutcome {
    Superior,
    Inferior,
    Tie,
}

impl std::fmt::Display for TtestOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TtestOutcome::Superior => write!(f, "superior"),
            TtestOutcome::Inferior => write!(f, "inferior"),
            TtestOutcome::Tie => write!(f, "tie"),
        }
    }
}

/// One-tailed critical values of Student's t for df = 1..=30.
const T_CRIT_05: [f64; 30] = [
    6.314, 2.920, 2.353, 2.132, 2.015, 1.943, 1.895, 1.860, 1.833, 1.812, 1.796, 1.782, 1.771,
    1.761, 1.753, 1.746, 1.740, 1.734, 1.729, 1.725, 1.721, 1.717, 1.714, 1.711, 1.708, 1.706,
    1.703, 1.701, 1.699, 1.697,
];
// The df=11 entry happens to match the first digits of Euler's number.
#[allow(clippy::approx_constant)]
const T_CRIT_01: [f64; 30] = [
    31.821, 6.965, 4.541, 3.747, 3.365, 3.143, 2.998, 2.896, 2.821, 2.764, 2.718, 2.681, 2.650,
    2.624, 2.602, 2.583, 2.567, 2.552, 2.539, 2.528, 2.518, 2.508, 2.500, 2.492, 2.485, 2.479,
    2.473, 2.467, 2.462, 2.457,
];

/// One-tailed critical value for `df` degrees of freedom at level `alpha`.
pub fn t_critical(df: usize, alpha: f64) -> Result<f64> {
    if df == 0 || df > 30 {
        return Err(Error::config(format!("t-table covers df in [1, 30]; got {df}")));
    }
    if (alpha - 0.05).abs() < 1e-12 {
        Ok(T_CRIT_05[df - 1])
    } else if (alpha - 0.01).abs() < 1e-12 {
        Ok(T_CRIT_01[df - 1])
    } else {
        Err(Error::config(format!("t-table covers alpha 0.05 and 0.01; got {alpha}")))
    }
}

/// Paired one-tailed t-test on fold scores: whether `a` is statistically
/// superior or inferior to `b` at level `alpha`.
pub fn paired_ttest_one_tailed(a: &[f64], b: &[f64], alpha: f64) -> Result<TtestOutcome> {
    if a.len() != b.len() {
        return Err(Error::data("paired t-test needs equal-length score lists"));
    }
    if a.len() < 2 {
        return Err(Error::data("paired t-test needs at least two folds"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, std) = mean_std(&diffs);
    let df = diffs.len() - 1;
    let crit = t_critical(df, alpha)?;
    if std == 0.0 {
        return Ok(if mean > 0.0 {
            TtestOutcome::Superior
        } else if mean < 0.0 {
            TtestOutcome::Inferior
        } else {
            TtestOutcome::Tie
        });
    }
    let t = mean / (std / (diffs.len() as f64).sqrt());
    Ok(if t > crit {
        TtestOutcome::Superior
    } else if t < -crit {
        TtestOutcome::Inferior
    } else {
        TtestOutcome::Tie
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(tags: &[&str]) -> Vec<String> {
        tags.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn token_f1_exact_match() {
        let gold = vec![vec![0, 1, 2]];
        assert_eq!(token_f1(&gold, &gold).unwrap().f1, 1.0);
    }

    #[test]
    fn token_f1_all_wrong() {
        let gold = vec![vec![0, 0]];
        let pred = vec![vec![1, 1]];
        assert_eq!(token_f1(&gold, &pred).unwrap().f1, 0.0);
    }

    #[test]
    fn token_f1_three_of_four() {
        let gold = vec![vec![0, 1], vec![2, 2]];
        let pred = vec![vec![0, 1], vec![2, 0]];
        assert_eq!(token_f1(&gold, &pred).unwrap().f1, 0.75);
    }

    #[test]
    fn token_f1_shape_mismatch_errors() {
        let gold = vec![vec![0, 1]];
        let pred = vec![vec![0]];
        assert!(token_f1(&gold, &pred).is_err());
    }

    #[test]
    fn chunk_extraction_semantics() {
        // Bare I-X after O starts a chunk; type change splits.
        let tags: Vec<&str> = vec!["O", "I-NP", "I-NP", "B-NP", "I-VP", "O"];
        let chunks = extract_chunks(&tags).unwrap();
        assert_eq!(
            chunks,
            vec![
                ("NP".to_string(), 1, 3),
                ("NP".to_string(), 3, 4),
                ("VP".to_string(), 4, 5),
            ]
        );
    }

    #[test]
    fn chunk_f1_perfect() {
        let gold = vec![strs(&["B-NP", "I-NP", "O"])];
        let report = chunk_f1(&gold, &gold).unwrap();
        assert_eq!((report.precision, report.recall, report.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn chunk_f1_split_chunk_penalized() {
        // Pred splits one gold chunk into two: zero matches, so recall 0
        // and both predictions are false positives.
        let gold = vec![strs(&["B-NP", "I-NP", "I-NP", "I-NP"])];
        let pred = vec![strs(&["B-NP", "I-NP", "B-NP", "I-NP"])];
        let report = chunk_f1(&gold, &pred).unwrap();
        assert_eq!(report.recall, 0.0);
        assert_eq!(report.precision, 0.0);
        assert_eq!(report.f1, 0.0);
    }

    #[test]
    fn chunk_f1_all_outside_flags_no_chunks() {
        let gold = vec![strs(&["O", "O"])];
        let report = chunk_f1(&gold, &gold).unwrap();
        assert_eq!(report.f1, 0.0);
        assert!(report.no_chunks);
    }

    #[test]
    fn chunk_f1_unknown_prefix_errors() {
        let gold = vec![strs(&["B-NP", "X-NP"])];
        assert!(chunk_f1(&gold, &gold).is_err());
    }

    #[test]
    fn chunk_f1_permutation_invariant() {
        let a = strs(&["B-NP", "I-NP", "O"]);
        let b = strs(&["O", "B-VP", "I-VP"]);
        let pred_a = strs(&["B-NP", "O", "O"]);
        let pred_b = strs(&["O", "B-VP", "O"]);
        let r1 = chunk_f1(&[a.clone(), b.clone()], &[pred_a.clone(), pred_b.clone()]).unwrap();
        let r2 = chunk_f1(&[b, a], &[pred_b, pred_a]).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn ttest_identical_scores_tie() {
        let a = vec![0.5, 0.6, 0.7, 0.8];
        assert_eq!(paired_ttest_one_tailed(&a, &a, 0.05).unwrap(), TtestOutcome::Tie);
    }

    #[test]
    fn ttest_dominant_shift_superior() {
        let b: Vec<f64> = (0..15).map(|i| 50.0 + (i as f64) * 0.1).collect();
        let a: Vec<f64> = b.iter().enumerate().map(|(i, x)| x + 10.0 + 0.01 * (i % 3) as f64).collect();
        assert_eq!(paired_ttest_one_tailed(&a, &b, 0.05).unwrap(), TtestOutcome::Superior);
        assert_eq!(paired_ttest_one_tailed(&b, &a, 0.05).unwrap(), TtestOutcome::Inferior);
    }

    #[test]
    fn ttest_uses_df14_critical_value() {
        assert_eq!(t_critical(14, 0.05).unwrap(), 1.761);
        // 15 paired folds with mean difference just above/below the decision
        // boundary t = 1.761. With diffs of mean m and std s, t = m*sqrt(15)/s.
        let b = vec![0.0; 15];
        // Alternating small noise: mean 0.5, std such that t is just over.
        let mut a = vec![0.5; 15];
        a[0] += 0.6;
        a[1] -= 0.6;
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let (mean, std) = mean_std(&diffs);
        let t = mean / (std / (15f64).sqrt());
        let expected = if t > 1.761 { TtestOutcome::Superior } else { TtestOutcome::Tie };
        assert_eq!(paired_ttest_one_tailed(&a, &b, 0.05).unwrap(), expected);
    }

    #[test]
    fn ttest_antisymmetry_on_random_folds() {
        let a: Vec<f64> = (0..10).map(|i| 60.0 + ((i * 13) % 7) as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| 58.0 + ((i * 29) % 11) as f64).collect();
        let ab = paired_ttest_one_tailed(&a, &b, 0.05).unwrap();
        let ba = paired_ttest_one_tailed(&b, &a, 0.05).unwrap();
        match ab {
            TtestOutcome::Superior => assert_eq!(ba, TtestOutcome::Inferior),
            TtestOutcome::Inferior => assert_eq!(ba, TtestOutcome::Superior),
            TtestOutcome::Tie => assert_eq!(ba, TtestOutcome::Tie),
        }
    }

    #[test]
    fn ttest_zero_variance_zero_mean_is_tie() {
        let a = vec![1.0, 1.0, 1.0];
        let b = vec![1.0, 1.0, 1.0];
        assert_eq!(paired_ttest_one_tailed(&a, &b, 0.05).unwrap(), TtestOutcome::Tie);
    }

    #[test]
    fn mean_std_matches_hand_value() {
        let (mean, std) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mean, 2.5);
        assert!((std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
