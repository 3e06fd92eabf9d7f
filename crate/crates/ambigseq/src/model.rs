//! Scoring of label tuples and candidate sets under a weight vector, the Δ
//! margin loss, and exact max-sum decoding of full sequences.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::corpus::AmbiguousCorpus;
use crate::error::{Error, Result};
use crate::features::{joint_features, piece_context, FeatureIndex, PieceContext, SparseVec};
use crate::pieces::LabelTuple;

/// How a piece's candidate-set energy aggregates its candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SetEnergy {
    /// Sum of candidate energies.
    #[default]
    Sum,
    /// Mean of candidate energies (ablation variant).
    Mean,
}

/// A trained linear model: dense weights over the feature index.
#[derive(Clone, Debug)]
pub struct WeightModel {
    pub weights: Vec<f64>,
    pub index: Arc<FeatureIndex>,
}

impl WeightModel {
    pub fn zeros(index: Arc<FeatureIndex>) -> Self {
        let dim = index.dim();
        WeightModel { weights: vec![0.0; dim], index }
    }

    pub fn new(weights: Vec<f64>, index: Arc<FeatureIndex>) -> Result<Self> {
        if weights.len() != index.dim() {
            return Err(Error::data(format!(
                "weight vector has dimension {}, feature index expects {}",
                weights.len(),
                index.dim()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("weight vector contains non-finite entries"));
        }
        Ok(WeightModel { weights, index })
    }

    /// Exact Viterbi decoding of a token sequence under the learned state,
    /// bias, and transition weights. Ties pick the lowest label id.
    pub fn decode(&self, tokens: &[String]) -> Vec<usize> {
        let q = self.index.q();
        let len = tokens.len();
        if len == 0 || q == 0 {
            return Vec::new();
        }
        let state_scores: Vec<Vec<f64>> = (0..len)
            .map(|pos| {
                let patterns = self.index.node_patterns(tokens, pos);
                (0..q)
                    .map(|label| {
                        let mut score = 0.0;
                        for &pattern in &patterns {
                            score += self.weights[self.index.state_index(pattern, label) as usize];
                        }
                        if self.index.has_bias() {
                            score += self.weights[self.index.bias_index(label) as usize];
                        }
                        score
                    })
                    .collect()
            })
            .collect();

        let mut best = state_scores[0].clone();
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(len);
        for pos in 1..len {
            let mut next = vec![f64::NEG_INFINITY; q];
            let mut back_row = vec![0usize; q];
            for to in 0..q {
                let mut best_prev = f64::NEG_INFINITY;
                let mut best_from = 0usize;
                for from in 0..q {
                    let mut score = best[from];
                    if self.index.has_transitions() {
                        score += self.weights[self.index.trans_index(from, to) as usize];
                    }
                    if score > best_prev {
                        best_prev = score;
                        best_from = from;
                    }
                }
                next[to] = best_prev + state_scores[pos][to];
                back_row[to] = best_from;
            }
            best = next;
            back.push(back_row);
        }

        let mut last = 0usize;
        let mut last_score = f64::NEG_INFINITY;
        for (label, &score) in best.iter().enumerate() {
            if score > last_score {
                last_score = score;
                last = label;
            }
        }
        let mut path = vec![last; len];
        for pos in (1..len).rev() {
            last = back[pos - 1][last];
            path[pos - 1] = last;
        }
        path
    }

    /// Writes the model as a text header plus one `index value` line per
    /// nonzero weight.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# ambigseq-model v1\n");
        let _ = writeln!(
            out,
            "# dim={} q={} w={} templates={}",
            self.index.dim(),
            self.index.q(),
            self.index.w(),
            // Template names mirror the feature index file.
            self.index.template().names_joined(),
        );
        for (i, &v) in self.weights.iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(out, "{i} {v}");
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, index: Arc<FeatureIndex>) -> Result<WeightModel> {
        let text = std::fs::read_to_string(path)?;
        let mut weights = vec![0.0; index.dim()];
        let mut declared_dim = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                if rest.starts_with("dim=") {
                    for part in rest.split(' ') {
                        if let Some(v) = part.strip_prefix("dim=") {
                            declared_dim = v.parse::<usize>().ok();
                        }
                    }
                }
                continue;
            }
            let (idx_text, val_text) = line.split_once(' ').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                message: "expected `index value`".into(),
            })?;
            let idx: usize = idx_text.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad index '{idx_text}'"),
            })?;
            let val: f64 = val_text.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: format!("bad value '{val_text}'"),
            })?;
            if idx >= weights.len() {
                return Err(Error::data(format!(
                    "model index {idx} exceeds feature dimension {}",
                    weights.len()
                )));
            }
            weights[idx] = val;
        }
        if let Some(d) = declared_dim {
            if d != index.dim() {
                return Err(Error::data(format!(
                    "model dimension {d} does not match feature index dimension {}",
                    index.dim()
                )));
            }
        }
        WeightModel::new(weights, index)
    }
}

/// A corpus prepared for training: per-piece token contexts, cached candidate
/// feature vectors, candidate-set feature sums, and candidate code sets.
pub struct TrainSet {
    pub corpus: AmbiguousCorpus,
    pub index: Arc<FeatureIndex>,
    pub contexts: Vec<PieceContext>,
    pub cand_phi: Vec<Vec<SparseVec>>,
    pub set_phi: Vec<SparseVec>,
    pub cand_codes: Vec<HashSet<u64>>,
    pub set_energy: SetEnergy,
}

impl TrainSet {
    pub fn build(corpus: AmbiguousCorpus, index: Arc<FeatureIndex>, set_energy: SetEnergy) -> Result<TrainSet> {
        let q = index.q();
        let mut contexts = Vec::with_capacity(corpus.pieces.len());
        let mut cand_phi = Vec::with_capacity(corpus.pieces.len());
        let mut set_phi = Vec::with_capacity(corpus.pieces.len());
        let mut cand_codes = Vec::with_capacity(corpus.pieces.len());
        for piece in &corpus.pieces {
            let tokens = &corpus.sequences[piece.seq_id].tokens;
            let ctx = piece_context(&index, tokens, piece);
            let mut phis = Vec::with_capacity(piece.s());
            for cand in &piece.candidates {
                phis.push(joint_features(&index, &ctx, cand)?);
            }
            let mut sum = SparseVec::default();
            for phi in &phis {
                sum = SparseVec::add(&sum, phi);
            }
            if set_energy == SetEnergy::Mean {
                sum = sum.scaled(1.0 / piece.s() as f64);
            }
            cand_codes.push(piece.candidates.iter().map(|c| c.code(q)).collect());
            contexts.push(ctx);
            cand_phi.push(phis);
            set_phi.push(sum);
        }
        Ok(TrainSet { corpus, index, contexts, cand_phi, set_phi, cand_codes, set_energy })
    }

    /// Number of pieces (training samples).
    pub fn n(&self) -> usize {
        self.corpus.pieces.len()
    }

    pub fn q(&self) -> usize {
        self.index.q()
    }

    pub fn w(&self) -> usize {
        self.corpus.settings.w
    }

    pub fn piece(&self, i: usize) -> &crate::pieces::Piece {
        &self.corpus.pieces[i]
    }

    pub fn all_exact(&self) -> bool {
        self.corpus.pieces.iter().all(|p| p.s() == 1)
    }

    /// Per-node, per-label state+bias score table for one piece.
    pub fn node_score_table(&self, weights: &[f64], piece_id: usize) -> Vec<Vec<f64>> {
        let q = self.q();
        let index = &self.index;
        self.contexts[piece_id]
            .node_patterns
            .iter()
            .map(|patterns| {
                (0..q)
                    .map(|label| {
                        let mut score = 0.0;
                        for &pattern in patterns {
                            score += weights[index.state_index(pattern, label) as usize];
                        }
                        if index.has_bias() {
                            score += weights[index.bias_index(label) as usize];
                        }
                        score
                    })
                    .collect()
            })
            .collect()
    }
}

/// Energy of one tuple on one piece: `ω · f(piece, tuple)`.
pub fn score(weights: &[f64], ts: &TrainSet, piece_id: usize, tuple: &LabelTuple) -> f64 {
    let index = &ts.index;
    let ctx = &ts.contexts[piece_id];
    let mut acc = 0.0;
    for (node, &label) in tuple.ids().iter().enumerate() {
        for &pattern in &ctx.node_patterns[node] {
            acc += weights[index.state_index(pattern, label) as usize];
        }
        if index.has_bias() {
            acc += weights[index.bias_index(label) as usize];
        }
    }
    if index.has_transitions() {
        let ids = tuple.ids();
        for edge in 0..ids.len() - 1 {
            acc += weights[index.trans_index(ids[edge], ids[edge + 1]) as usize];
        }
    }
    acc
}

/// Candidate-set energy of a piece: sum (or mean) of candidate scores.
pub fn set_score(weights: &[f64], ts: &TrainSet, piece_id: usize) -> f64 {
    ts.set_phi[piece_id].dot_dense(weights)
}

/// Margin-rescaling loss: 0 for candidates, `s` (the candidate count) for
/// non-candidates.
pub fn delta_loss(candidates: &[LabelTuple], tuple: &LabelTuple) -> f64 {
    if candidates.contains(tuple) {
        0.0
    } else {
        candidates.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corrupt, parse_conll, AmbiguousCorpus};
    use crate::features::FeatureTemplate;

    fn trainset(text: &str, cl: usize, p: f64, template: FeatureTemplate) -> TrainSet {
        let (alphabet, seqs) = parse_conll(text, 0, 1).unwrap();
        let corpus = corrupt(&seqs, &alphabet, 1, cl, p, 3).unwrap();
        let index = Arc::new(FeatureIndex::build(&corpus, template));
        TrainSet::build(corpus, index, SetEnergy::Sum).unwrap()
    }

    fn exact_ab() -> TrainSet {
        trainset("x A\ny B\n\n", 1, 1.0, FeatureTemplate::transitions_only())
    }

    #[test]
    fn zero_weights_zero_scores() {
        let ts = exact_ab();
        let w = vec![0.0; ts.index.dim()];
        for tuple in crate::pieces::enumerate_tuples(2, 1).unwrap() {
            assert_eq!(score(&w, &ts, 0, &tuple), 0.0);
        }
        assert_eq!(set_score(&w, &ts, 0), 0.0);
    }

    #[test]
    fn score_is_additive_in_weights() {
        let ts = trainset("x A\ny B\nz A\n\n", 1, 1.0, FeatureTemplate::default());
        let dim = ts.index.dim();
        let w1: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let w2: Vec<f64> = (0..dim).map(|i| (i as f64 * 0.11).cos()).collect();
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let tuple = LabelTuple::new(vec![1, 0]);
        let lhs = score(&sum, &ts, 1, &tuple);
        let rhs = score(&w1, &ts, 1, &tuple) + score(&w2, &ts, 1, &tuple);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transition_only_hand_scores() {
        let ts = exact_ab();
        let mut w = vec![0.0; ts.index.dim()];
        w[ts.index.trans_index(0, 1) as usize] = 2.0;
        assert_eq!(score(&w, &ts, 0, &LabelTuple::new(vec![0, 1])), 2.0);
        assert_eq!(score(&w, &ts, 0, &LabelTuple::new(vec![1, 0])), 0.0);
    }

    #[test]
    fn score_matches_explicit_feature_dot() {
        let ts = trainset("foo A\nbar B\nbaz A\n\n", 2, 0.0, FeatureTemplate::default());
        let dim = ts.index.dim();
        let w: Vec<f64> = (0..dim).map(|i| ((i * 31 % 17) as f64 - 8.0) / 9.0).collect();
        for pid in 0..ts.n() {
            for cand in &ts.piece(pid).candidates {
                let phi = joint_features(&ts.index, &ts.contexts[pid], cand).unwrap();
                assert!((phi.dot_dense(&w) - score(&w, &ts, pid, cand)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn set_score_sums_candidates() {
        let ts = trainset("u A\nv B\n\n", 2, 0.0, FeatureTemplate::transitions_only());
        let piece = ts.piece(0);
        assert_eq!(piece.s(), 2);
        let mut w = vec![0.0; ts.index.dim()];
        // Hit the two candidates' transition features with distinct weights.
        let c0 = piece.candidates[0].ids();
        let c1 = piece.candidates[1].ids();
        w[ts.index.trans_index(c0[0], c0[1]) as usize] += 1.5;
        w[ts.index.trans_index(c1[0], c1[1]) as usize] += -0.5;
        assert!((set_score(&w, &ts, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_set_score_equals_score() {
        let ts = exact_ab();
        let dim = ts.index.dim();
        let w: Vec<f64> = (0..dim).map(|i| i as f64 - 1.0).collect();
        assert_eq!(set_score(&w, &ts, 0), score(&w, &ts, 0, &ts.piece(0).candidates[0]));
    }

    #[test]
    fn delta_loss_cases() {
        let cands = vec![
            LabelTuple::new(vec![0, 1]),
            LabelTuple::new(vec![1, 1]),
            LabelTuple::new(vec![2, 0]),
        ];
        assert_eq!(delta_loss(&cands, &LabelTuple::new(vec![1, 1])), 0.0);
        assert_eq!(delta_loss(&cands, &LabelTuple::new(vec![0, 0])), 3.0);
        let single = vec![LabelTuple::new(vec![0, 1])];
        assert_eq!(delta_loss(&single, &LabelTuple::new(vec![1, 1])), 1.0);
    }

    #[test]
    fn decode_zero_weights_ties_to_first_label() {
        let ts = trainset("a A\nb B\nc A\n\n", 1, 1.0, FeatureTemplate::default());
        let model = WeightModel::zeros(ts.index.clone());
        let tokens: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        assert_eq!(model.decode(&tokens), vec![0, 0, 0]);
    }

    #[test]
    fn decode_single_position_argmax() {
        let ts = trainset("a A\nb B\nc C\n\n", 1, 1.0, FeatureTemplate::default());
        let mut model = WeightModel::zeros(ts.index.clone());
        model.weights[ts.index.bias_index(2) as usize] = 1.0;
        assert_eq!(model.decode(&["a".to_string()]), vec![2]);
    }

    #[test]
    fn decode_matches_exhaustive_argmax() {
        let ts = trainset("a A\nb B\nc C\nd A\n\n", 1, 1.0, FeatureTemplate::default());
        let dim = ts.index.dim();
        let weights: Vec<f64> = (0..dim).map(|i| (((i * 7919 + 13) % 101) as f64 - 50.0) / 37.0).collect();
        let model = WeightModel::new(weights, ts.index.clone()).unwrap();
        let tokens: Vec<String> = vec!["a".into(), "c".into(), "b".into()];
        let got = model.decode(&tokens);

        let q = ts.index.q();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for code in 0..(q as u64).pow(3) {
            let labels = LabelTuple::from_code(code, q, 3);
            let mut total = 0.0;
            for (pos, &label) in labels.ids().iter().enumerate() {
                for &pattern in &model.index.node_patterns(&tokens, pos) {
                    total += model.weights[model.index.state_index(pattern, label) as usize];
                }
                total += model.weights[model.index.bias_index(label) as usize];
            }
            for edge in 0..2 {
                total +=
                    model.weights[model.index.trans_index(labels.ids()[edge], labels.ids()[edge + 1]) as usize];
            }
            if total > best.0 {
                best = (total, labels.ids().to_vec());
            }
        }
        assert_eq!(got, best.1);
    }

    #[test]
    fn mean_set_energy_scales_sum() {
        let (alphabet, seqs) = parse_conll("u A\nv B\n\n", 0, 1).unwrap();
        let corpus = corrupt(&seqs, &alphabet, 1, 2, 0.0, 9).unwrap();
        let index = Arc::new(FeatureIndex::build(&corpus, FeatureTemplate::default()));
        let sum_ts = TrainSet::build(corpus.clone(), index.clone(), SetEnergy::Sum).unwrap();
        let mean_ts = TrainSet::build(corpus, index.clone(), SetEnergy::Mean).unwrap();
        let dim = index.dim();
        let w: Vec<f64> = (0..dim).map(|i| ((i % 13) as f64 - 6.0) / 5.0).collect();
        for pid in 0..sum_ts.n() {
            let s = sum_ts.piece(pid).s() as f64;
            let sum = set_score(&w, &sum_ts, pid);
            let mean = set_score(&w, &mean_ts, pid);
            assert!((mean - sum / s).abs() < 1e-12);
        }
    }

    #[test]
    fn model_save_load_roundtrip() {
        let ts = trainset("a A\nb B\n\n", 1, 1.0, FeatureTemplate::default());
        let mut model = WeightModel::zeros(ts.index.clone());
        model.weights[0] = 0.25;
        model.weights[ts.index.dim() - 1] = -3.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        model.save(&path).unwrap();
        let reread = WeightModel::load(&path, ts.index.clone()).unwrap();
        assert_eq!(reread.weights, model.weights);
    }

    #[test]
    fn from_parts_accepts_manual_corpus() {
        let (alphabet, seqs) = parse_conll("a A\nb B\n\n", 0, 1).unwrap();
        let gold = LabelTuple::new(vec![0, 1]);
        let piece = crate::pieces::Piece::new(0, 0, 1, vec![gold.clone()], gold).unwrap();
        let corpus = AmbiguousCorpus::from_parts(
            alphabet,
            seqs,
            vec![piece],
            crate::corpus::CorruptSettings { w: 1, cl: 1, p: 1.0, seed: 0 },
        )
        .unwrap();
        assert_eq!(corpus.n_pieces(), 1);
    }
}
