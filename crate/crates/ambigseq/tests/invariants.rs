//! Property tests over the corpus, feature, scoring, and confidence layers.

mod common;

use std::collections::HashSet;

use proptest::prelude::*;

use ambigseq::corpus::{corrupt, write_corpus, LabelAlphabet, Sequence};
use ambigseq::features::SparseVec;
use ambigseq::model::{score, set_score, WeightModel};
use ambigseq::pieces::enumerate_tuples;
use ambigseq::wdpsl::update_confidence;
use common::{brute_force_decode, random_trainset, trainset_of};

fn toy_gold(n_seqs: usize, len: usize, q: usize) -> (LabelAlphabet, Vec<Sequence>) {
    let mut alphabet = LabelAlphabet::new();
    for i in 0..q {
        alphabet.intern(&format!("L{i}"));
    }
    let sequences = (0..n_seqs)
        .map(|s| Sequence {
            tokens: (0..len).map(|t| format!("w{}", (s * 7 + t * 3) % 11)).collect(),
            gold: Some((0..len).map(|t| (s + 2 * t) % q).collect()),
        })
        .collect();
    (alphabet, sequences)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn corruption_invariants(
        seed in 0u64..1000,
        cl in 1usize..5,
        p in 0.0f64..1.0,
        q in 2usize..4,
    ) {
        let (alphabet, seqs) = toy_gold(6, 5, q);
        prop_assume!(cl as u64 <= (q * q) as u64);
        let corpus = corrupt(&seqs, &alphabet, 1, cl, p, seed).unwrap();
        for piece in &corpus.pieces {
            // Gold containment.
            prop_assert!(piece.candidates.contains(&piece.gold));
            // Distinctness.
            let codes: HashSet<u64> = piece.candidates.iter().map(|c| c.code(q)).collect();
            prop_assert_eq!(codes.len(), piece.s());
            // Candidate sets are exact or full-size.
            prop_assert!(piece.s() == 1 || piece.s() == cl);
        }
        // Exact-piece count honors floor(p * n).
        let exact = corpus.pieces.iter().filter(|piece| piece.s() == 1).count();
        let expected = (p * corpus.pieces.len() as f64).floor() as usize;
        if cl > 1 {
            prop_assert_eq!(exact, expected);
        }
        // Determinism.
        let again = corrupt(&seqs, &alphabet, 1, cl, p, seed).unwrap();
        prop_assert_eq!(write_corpus(&corpus), write_corpus(&again));
    }

    #[test]
    fn enumeration_is_exhaustive(q in 1usize..6, w in 1usize..3) {
        let tuples: Vec<_> = enumerate_tuples(q, w).unwrap().collect();
        let set: HashSet<_> = tuples.iter().map(|t| t.code(q)).collect();
        prop_assert_eq!(set.len(), tuples.len());
        prop_assert_eq!(tuples.len() as u64, (q as u64).pow(w as u32 + 1));
    }

    #[test]
    fn scores_are_linear_in_weights(seed in 0u64..40, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let ts = random_trainset(seed, 2, 4, 3, 2, 0.5);
        let dim = ts.index.dim();
        let w1: Vec<f64> = (0..dim).map(|i| ((i * 13 + 5) % 17) as f64 / 7.0 - 1.0).collect();
        let w2: Vec<f64> = (0..dim).map(|i| ((i * 29 + 3) % 23) as f64 / 9.0 - 1.0).collect();
        let combo: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        for i in 0..ts.n() {
            for cand in &ts.piece(i).candidates {
                let lhs = score(&combo, &ts, i, cand);
                let rhs = a * score(&w1, &ts, i, cand) + b * score(&w2, &ts, i, cand);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }
            let lhs = set_score(&combo, &ts, i);
            let rhs = a * set_score(&w1, &ts, i) + b * set_score(&w2, &ts, i);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_score_equals_bruteforce_max(seed in 0u64..30) {
        let ts = random_trainset(seed, 1, 5, 3, 1, 1.0);
        let dim = ts.index.dim();
        let weights: Vec<f64> = (0..dim).map(|i| (((i * 31 + seed as usize) % 41) as f64 - 20.0) / 13.0).collect();
        let model = WeightModel::new(weights, ts.index.clone()).unwrap();
        let tokens = &ts.corpus.sequences[0].tokens;
        let (best, unique, path) = brute_force_decode(&model, tokens);
        let decoded = model.decode(tokens);
        if unique {
            prop_assert_eq!(&decoded, &path);
        }
        let _ = best;
    }

    #[test]
    fn confidence_updates_stay_in_range(seed in 0u64..40) {
        let ts = random_trainset(seed, 2, 5, 3, 3, 0.3);
        let dim = ts.index.dim();
        let weights: Vec<f64> = (0..dim).map(|i| (((i * 7 + 11) % 37) as f64 - 18.0) / 5.0).collect();
        for i in 0..ts.n() {
            let conf = update_confidence(&weights, &ts, i).unwrap();
            for &v in &conf {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let energies: Vec<f64> = ts.piece(i).candidates.iter()
                .map(|c| score(&weights, &ts, i, c)).collect();
            let all_equal = energies.iter().all(|e| (e - energies[0]).abs() < 1e-15);
            if !all_equal {
                let max = conf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = conf.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!((max - 1.0).abs() < 1e-12);
                prop_assert!(min.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_vec_dot_is_bilinear(
        xs in proptest::collection::vec((0u32..50, -5.0f64..5.0), 0..12),
        ys in proptest::collection::vec((0u32..50, -5.0f64..5.0), 0..12),
        scale in -3.0f64..3.0,
    ) {
        let a = SparseVec::from_pairs(xs);
        let b = SparseVec::from_pairs(ys);
        prop_assert!((a.dot(&b) - b.dot(&a)).abs() < 1e-9);
        let scaled = a.scaled(scale);
        prop_assert!((scaled.dot(&b) - scale * a.dot(&b)).abs() < 1e-9);
        let mut dense = vec![0.0; 64];
        b.add_scaled_into(1.0, &mut dense);
        prop_assert!((a.dot_dense(&dense) - a.dot(&b)).abs() < 1e-9);
    }
}

#[test]
fn corpus_roundtrip_through_text() {
    let (alphabet, seqs) = toy_gold(5, 6, 3);
    let corpus = corrupt(&seqs, &alphabet, 1, 3, 0.4, 77).unwrap();
    let text = write_corpus(&corpus);
    let reread = ambigseq::corpus::parse_corpus(&text).unwrap();
    assert_eq!(write_corpus(&reread), text);
    let ts = trainset_of(reread);
    assert_eq!(ts.n(), corpus.pieces.len());
}
