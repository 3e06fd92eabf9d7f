//! Shared verification helpers: an independent projected-gradient solver for
//! fully enumerated constraint sets, brute-force chain decoding, and a
//! synthetic HMM benchmark generator. These deliberately avoid the library's
//! optimization paths so they can serve as oracles for them.

// Each integration test binary compiles its own copy; not all of them use
// every helper.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ambigseq::corpus::{corrupt, AmbiguousCorpus, LabelAlphabet, Sequence};
use ambigseq::features::{joint_features, FeatureIndex, FeatureTemplate, SparseVec};
use ambigseq::model::{SetEnergy, TrainSet, WeightModel};
use ambigseq::pieces::{enumerate_tuples, LabelTuple};
use ambigseq::wdpsl::ConfidenceTable;

/// One slack group of the fully materialized problem.
pub struct FullGroup {
    pub cap: f64,
    pub rows: Vec<(f64, SparseVec)>,
}

/// Every constraint of the unified objective, with nothing generated lazily:
/// for each piece, one group holding a margin row for every tuple in the
/// space, and one group per candidate holding its confidence-weighted row.
pub fn materialize_full(ts: &TrainSet, conf: &ConfidenceTable, c1: f64, c2: f64) -> Vec<FullGroup> {
    let n = ts.n() as f64;
    let mut groups = Vec::new();
    for i in 0..ts.n() {
        let mut rows = Vec::new();
        for tuple in enumerate_tuples(ts.q(), ts.w()).unwrap() {
            let delta = ambigseq::model::delta_loss(&ts.piece(i).candidates, &tuple);
            let phi = joint_features(&ts.index, &ts.contexts[i], &tuple).unwrap();
            rows.push((delta, SparseVec::sub(&ts.set_phi[i], &phi)));
        }
        groups.push(FullGroup { cap: c1 / n, rows });
    }
    for i in 0..ts.n() {
        for (j, phi) in ts.cand_phi[i].iter().enumerate() {
            groups.push(FullGroup {
                cap: c2 * conf.get(i, j) / n,
                rows: vec![(1.0, phi.clone())],
            });
        }
    }
    groups
}

/// `½‖ω‖² + Σ_g cap_g · max(0, max_k (rhs_k − ω·u_k))` over the full set.
pub fn full_primal(groups: &[FullGroup], omega: &[f64]) -> f64 {
    let reg: f64 = 0.5 * omega.iter().map(|w| w * w).sum::<f64>();
    let mut penalty = 0.0;
    for group in groups {
        if group.cap <= 0.0 {
            continue;
        }
        let worst = group
            .rows
            .iter()
            .map(|(rhs, feat)| rhs - feat.dot_dense(omega))
            .fold(0.0f64, f64::max);
        penalty += group.cap * worst;
    }
    reg + penalty
}

/// Euclidean projection onto `{α ≥ 0, Σ α ≤ cap}` (simplex with interior).
fn project_group(alpha: &mut [f64], cap: f64) {
    for a in alpha.iter_mut() {
        if *a < 0.0 {
            *a = 0.0;
        }
    }
    let sum: f64 = alpha.iter().sum();
    if sum <= cap {
        return;
    }
    // Project onto the simplex Σ α = cap by threshold search.
    let mut sorted: Vec<f64> = alpha.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut acc = 0.0;
    let mut tau = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        acc += v;
        let candidate = (acc - cap) / (k + 1) as f64;
        if k + 1 == sorted.len() || sorted[k + 1] <= candidate {
            tau = candidate;
            break;
        }
    }
    for a in alpha.iter_mut() {
        *a = (*a - tau).max(0.0);
    }
}

/// Projected-gradient ascent on the dual of the fully materialized problem.
/// Independent of the library's coordinate solver; slow but reliable on the
/// tiny instances the oracle tests use.
pub fn reference_solve(groups: &[FullGroup], dim: usize, iters: usize) -> Vec<f64> {
    let total_rows: usize = groups.iter().map(|g| g.rows.len()).sum();
    let trace: f64 = groups
        .iter()
        .flat_map(|g| g.rows.iter())
        .map(|(_, feat)| feat.norm_sq())
        .sum();
    let step = 1.0 / (trace + 1e-9);
    let mut alpha = vec![0.0f64; total_rows];
    let mut omega = vec![0.0f64; dim];
    for _ in 0..iters {
        // Gradient step on every multiplier.
        let mut offset = 0;
        let mut new_alpha = alpha.clone();
        for group in groups {
            for (k, (rhs, feat)) in group.rows.iter().enumerate() {
                let grad = rhs - feat.dot_dense(&omega);
                new_alpha[offset + k] += step * grad;
            }
            project_group(&mut new_alpha[offset..offset + group.rows.len()], group.cap);
            offset += group.rows.len();
        }
        let mut moved = 0.0f64;
        for (a, b) in alpha.iter().zip(&new_alpha) {
            moved = moved.max((a - b).abs());
        }
        alpha = new_alpha;
        omega.iter_mut().for_each(|w| *w = 0.0);
        let mut offset = 0;
        for group in groups {
            for (k, (_, feat)) in group.rows.iter().enumerate() {
                let a = alpha[offset + k];
                if a != 0.0 {
                    feat.add_scaled_into(a, &mut omega);
                }
            }
            offset += group.rows.len();
        }
        if moved < 1e-13 {
            break;
        }
    }
    omega
}

/// Direct chain score of one labeling, independent of the decoder.
pub fn chain_score(model: &WeightModel, tokens: &[String], labels: &[usize]) -> f64 {
    let mut score = 0.0;
    for (pos, &label) in labels.iter().enumerate() {
        for &pattern in &model.index.node_patterns(tokens, pos) {
            score += model.weights[model.index.state_index(pattern, label) as usize];
        }
        if model.index.has_bias() {
            score += model.weights[model.index.bias_index(label) as usize];
        }
    }
    if model.index.has_transitions() {
        for edge in 0..labels.len().saturating_sub(1) {
            score += model.weights[model.index.trans_index(labels[edge], labels[edge + 1]) as usize];
        }
    }
    score
}

/// Exhaustive chain decoding: the maximum-scoring label sequence, whether it
/// is unique, and the lexicographically smallest argmax.
pub fn brute_force_decode(model: &WeightModel, tokens: &[String]) -> (f64, bool, Vec<usize>) {
    let q = model.index.q();
    let len = tokens.len();
    let space = (q as u64).pow(len as u32);
    let mut best_score = f64::NEG_INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut unique = true;
    let patterns: Vec<Vec<u32>> = (0..len).map(|pos| model.index.node_patterns(tokens, pos)).collect();
    for code in 0..space {
        let labels = LabelTuple::from_code(code, q, len);
        let mut score = 0.0;
        for (pos, &label) in labels.ids().iter().enumerate() {
            for &pattern in &patterns[pos] {
                score += model.weights[model.index.state_index(pattern, label) as usize];
            }
            if model.index.has_bias() {
                score += model.weights[model.index.bias_index(label) as usize];
            }
        }
        if model.index.has_transitions() {
            for edge in 0..len - 1 {
                score += model.weights
                    [model.index.trans_index(labels.ids()[edge], labels.ids()[edge + 1]) as usize];
            }
        }
        if score > best_score + 1e-12 {
            best_score = score;
            best = labels.ids().to_vec();
            unique = true;
        } else if (score - best_score).abs() <= 1e-12 && !best.is_empty() && labels.ids() != best {
            unique = false;
        }
    }
    (best_score, unique, best)
}

/// Synthetic HMM: `q` states, `per_state` dedicated vocabulary items per
/// state with some emission noise, sticky transitions. Deterministic per
/// seed.
pub struct HmmSampler {
    q: usize,
    per_state: usize,
    trans: Vec<Vec<f64>>,
    emit_own: f64,
}

impl HmmSampler {
    pub fn new(q: usize, per_state: usize, sticky: f64, emit_own: f64) -> HmmSampler {
        let mut trans = vec![vec![0.0; q]; q];
        for (from, row) in trans.iter_mut().enumerate() {
            for (to, cell) in row.iter_mut().enumerate() {
                *cell = if to == from {
                    sticky
                } else if to == (from + 1) % q {
                    (1.0 - sticky) * 0.6
                } else {
                    (1.0 - sticky) * 0.4 / (q - 2).max(1) as f64
                };
            }
        }
        HmmSampler { q, per_state, trans, emit_own }
    }

    fn sample_from(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let mut draw = rng.random_range(0.0..total);
        for (i, &p) in probs.iter().enumerate() {
            if draw < p {
                return i;
            }
            draw -= p;
        }
        probs.len() - 1
    }

    pub fn sample_sequence(&self, rng: &mut ChaCha8Rng, len: usize) -> Sequence {
        let mut state = rng.random_range(0..self.q);
        let mut tokens = Vec::with_capacity(len);
        let mut gold = Vec::with_capacity(len);
        for _ in 0..len {
            let vocab = self.q * self.per_state;
            let token_id = if rng.random_range(0.0..1.0) < self.emit_own {
                state * self.per_state + rng.random_range(0..self.per_state)
            } else {
                rng.random_range(0..vocab)
            };
            tokens.push(format!("tok{token_id:03}"));
            gold.push(state);
            state = Self::sample_from(rng, &self.trans[state]);
        }
        Sequence { tokens, gold: Some(gold) }
    }

    pub fn sample_corpus(&self, seed: u64, n_seqs: usize, len: usize) -> (LabelAlphabet, Vec<Sequence>) {
        let mut alphabet = LabelAlphabet::new();
        for s in 0..self.q {
            alphabet.intern(&format!("S{s}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences = (0..n_seqs).map(|_| self.sample_sequence(&mut rng, len)).collect();
        (alphabet, sequences)
    }
}

/// Random ambiguous corpus + train set over a small synthetic task.
pub fn random_trainset(seed: u64, n_seqs: usize, len: usize, q: usize, cl: usize, p: f64) -> TrainSet {
    let sampler = HmmSampler::new(q, 3, 0.4, 0.8);
    let (alphabet, sequences) = sampler.sample_corpus(seed, n_seqs, len);
    let corpus = corrupt(&sequences, &alphabet, 1, cl, p, seed ^ 0xabcd).unwrap();
    trainset_of(corpus)
}

pub fn trainset_of(corpus: AmbiguousCorpus) -> TrainSet {
    let index = Arc::new(FeatureIndex::build(&corpus, FeatureTemplate::default()));
    TrainSet::build(corpus, index, SetEnergy::Sum).unwrap()
}
