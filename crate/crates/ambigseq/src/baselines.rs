//! Comparison trainers on the shared piecewise substrate: fully supervised
//! margin training, random pseudo-gold selection, the averaged candidate
//! loss, the candidate-vs-best-wrong margin, and the identification-based
//! two-margin loss, plus the averaged-strategy objective and the
//! constraint-count calculator.

use std::collections::HashSet;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::AmbiguousCorpus;
use crate::error::{Error, Result};
use crate::features::{joint_features, SparseVec};
use crate::model::{set_score, SetEnergy, TrainSet, WeightModel};
use crate::optimizer::{cutting_plane, CutConfig, QpProblem, SweepTrace};
use crate::pieces::{tuple_space, LabelTuple, DEFAULT_ENUM_CAP};
use crate::wdpsl::ConfidenceTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Ssvm,
    Naive,
    Clpl,
    Plsvm,
    Cllp,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssvm" => Ok(BaselineKind::Ssvm),
            "naive" => Ok(BaselineKind::Naive),
            "clpl" => Ok(BaselineKind::Clpl),
            "plsvm" => Ok(BaselineKind::Plsvm),
            "cllp" => Ok(BaselineKind::Cllp),
            other => Err(Error::config(format!("unknown baseline '{other}'"))),
        }
    }
}

/// Sign convention for the averaged loss's non-candidate hinge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ClplSign {
    /// Penalize positive non-candidate scores: hinge(1 + score).
    #[default]
    PenalizePositive,
    /// Penalize low non-candidate scores: hinge(1 - score).
    Literal,
}

#[derive(Clone, Copy, Debug)]
pub struct BaselineConfig {
    pub c1: f64,
    pub c2: f64,
    pub eps1: f64,
    pub tol: f64,
    pub max_qp_sweeps: usize,
    /// Subgradient epochs for the candidate-vs-best-wrong margin trainer.
    pub epochs: usize,
    /// Identification rounds for the two-margin trainer.
    pub rounds: usize,
    pub seed: u64,
    pub clpl_sign: ClplSign,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            c1: 1.0,
            c2: 1.0,
            eps1: 1e-3,
            tol: 1e-6,
            max_qp_sweeps: 100_000,
            epochs: 20,
            rounds: 5,
            seed: 0,
            clpl_sign: ClplSign::default(),
        }
    }
}

#[derive(Debug)]
pub struct BaselineOutcome {
    pub model: WeightModel,
    pub trace: Vec<SweepTrace>,
    pub converged: bool,
}

/// Dispatch by kind, keeping one trainer surface for the sweep runner.
pub fn train_baseline(kind: BaselineKind, ts: &TrainSet, cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    match kind {
        BaselineKind::Ssvm => train_ssvm(ts, cfg.c1, cfg),
        BaselineKind::Naive => train_naive(ts, cfg.c1, cfg.seed, cfg),
        BaselineKind::Clpl => train_clpl(ts, cfg.c1, cfg.c2, cfg),
        BaselineKind::Plsvm => train_plsvm(ts, cfg.c1, cfg.epochs, cfg.seed),
        BaselineKind::Cllp => train_cllp(ts, cfg.c1, cfg.c2, cfg.rounds, cfg),
    }
}

/// Fully supervised margin training over exact pieces: margin-rescaled
/// constraints against every tuple, solved by the shared cutting-plane
/// engine with the candidate-margin term disabled.
pub fn train_ssvm(ts: &TrainSet, c: f64, cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    if !ts.all_exact() {
        return Err(Error::data(
            "fully supervised training requires exact pieces; corpus has ambiguous candidates",
        ));
    }
    let conf = ConfidenceTable::zeros_like(ts);
    let cut = CutConfig { c1: c, c2: 0.0, eps1: cfg.eps1, tol: cfg.tol, max_qp_sweeps: cfg.max_qp_sweeps };
    let (sol, trace) = cutting_plane(ts, &conf, &cut)?;
    Ok(BaselineOutcome {
        model: WeightModel::new(sol.weights, ts.index.clone())?,
        trace,
        converged: sol.converged,
    })
}

/// Picks one candidate per piece uniformly at random (seeded) as pseudo-gold
/// and trains the supervised objective on the result.
pub fn train_naive(ts: &TrainSet, c: f64, seed: u64, cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = ts.corpus.clone();
    for piece in &mut corpus.pieces {
        let chosen = piece
            .candidates
            .choose(&mut rng)
            .expect("pieces always have at least one candidate")
            .clone();
        piece.candidates = vec![chosen.clone()];
        piece.gold = chosen;
    }
    let naive_ts = TrainSet::build(corpus, ts.index.clone(), ts.set_energy)?;
    train_ssvm(&naive_ts, c, cfg)
}

fn check_enumerable(ts: &TrainSet) -> Result<u64> {
    let space = tuple_space(ts.q(), ts.w())?;
    if space > DEFAULT_ENUM_CAP {
        return Err(Error::config(format!(
            "tuple space {space} exceeds the enumeration cap {DEFAULT_ENUM_CAP}; reduce w"
        )));
    }
    Ok(space)
}

fn mean_phi(ts: &TrainSet, piece_id: usize) -> SparseVec {
    match ts.set_energy {
        SetEnergy::Sum => ts.set_phi[piece_id].scaled(1.0 / ts.piece(piece_id).s() as f64),
        SetEnergy::Mean => ts.set_phi[piece_id].clone(),
    }
}

/// Scores of every tuple of one piece, as a flat table indexed by code.
fn tuple_scores(weights: &[f64], ts: &TrainSet, piece_id: usize, space: u64) -> Vec<f64> {
    let q = ts.q();
    let span = ts.w() + 1;
    let table = ts.node_score_table(weights, piece_id);
    let index = &ts.index;
    let mut digits = vec![0usize; span];
    let mut out = Vec::with_capacity(space as usize);
    for code in 0..space {
        let mut c = code;
        for slot in digits.iter_mut().rev() {
            *slot = (c % q as u64) as usize;
            c /= q as u64;
        }
        let mut score = 0.0;
        for (node, &label) in digits.iter().enumerate() {
            score += table[node][label];
        }
        if index.has_transitions() {
            for edge in 0..span - 1 {
                score += weights[index.trans_index(digits[edge], digits[edge + 1]) as usize];
            }
        }
        out.push(score);
    }
    out
}

/// Averaged candidate loss: one margin row on the mean candidate energy per
/// piece plus per-non-candidate hinges, generated lazily.
pub fn train_clpl(ts: &TrainSet, c1: f64, c2: f64, cfg: &BaselineConfig) -> Result<BaselineOutcome> {
    let space = check_enumerable(ts)?;
    if ts.n() == 0 {
        return Err(Error::data("cannot train on a corpus with no pieces"));
    }
    let n = ts.n() as f64;
    let mut qp = QpProblem::new(ts.index.dim());
    for i in 0..ts.n() {
        let g = qp.add_group(c1 / n);
        qp.add_row(g, 1.0, mean_phi(ts, i))?;
    }
    let mut materialized: Vec<HashSet<u64>> = vec![HashSet::new(); ts.n()];
    let mut trace = Vec::new();
    let mut converged = true;
    let mut sweep = 0;
    loop {
        sweep += 1;
        let mut added = 0usize;
        let mut max_violation = 0.0f64;
        for i in 0..ts.n() {
            let scores = tuple_scores(qp.weights(), ts, i, space);
            let mut best: Option<(f64, u64)> = None;
            for code in 0..space {
                if ts.cand_codes[i].contains(&code) || materialized[i].contains(&code) {
                    continue;
                }
                let hinge = match cfg.clpl_sign {
                    ClplSign::PenalizePositive => 1.0 + scores[code as usize],
                    ClplSign::Literal => 1.0 - scores[code as usize],
                };
                if best.is_none_or(|(v, _)| hinge > v) {
                    best = Some((hinge, code));
                }
            }
            if let Some((violation, code)) = best {
                if violation > cfg.eps1 {
                    let tuple = LabelTuple::from_code(code, ts.q(), ts.w() + 1);
                    let phi = joint_features(&ts.index, &ts.contexts[i], &tuple)?;
                    let feat = match cfg.clpl_sign {
                        ClplSign::PenalizePositive => phi.scaled(-1.0),
                        ClplSign::Literal => phi,
                    };
                    let g = qp.add_group(c2 / n);
                    qp.add_row(g, 1.0, feat)?;
                    materialized[i].insert(code);
                    added += 1;
                    if violation > max_violation {
                        max_violation = violation;
                    }
                }
            }
        }
        if added == 0 {
            break;
        }
        let stats = qp.solve(cfg.tol, cfg.max_qp_sweeps);
        converged = stats.converged;
        trace.push(SweepTrace { sweep, added, objective: qp.primal_objective(), max_violation });
    }
    Ok(BaselineOutcome {
        model: WeightModel::new(qp.weights().to_vec(), ts.index.clone())?,
        trace,
        converged,
    })
}

/// The averaged loss evaluated exactly by enumeration, for verification.
pub fn clpl_objective(weights: &[f64], ts: &TrainSet, c1: f64, c2: f64, sign: ClplSign) -> Result<f64> {
    let space = check_enumerable(ts)?;
    let n = ts.n() as f64;
    let reg: f64 = 0.5 * weights.iter().map(|w| w * w).sum::<f64>();
    let mut avg_term = 0.0;
    let mut non_term = 0.0;
    for i in 0..ts.n() {
        avg_term += (1.0 - mean_phi(ts, i).dot_dense(weights)).max(0.0);
        let scores = tuple_scores(weights, ts, i, space);
        for code in 0..space {
            if ts.cand_codes[i].contains(&code) {
                continue;
            }
            let hinge = match sign {
                ClplSign::PenalizePositive => 1.0 + scores[code as usize],
                ClplSign::Literal => 1.0 - scores[code as usize],
            };
            non_term += hinge.max(0.0);
        }
    }
    Ok(reg + c1 / n * avg_term + c2 / n * non_term)
}

/// Candidate-vs-best-wrong margin trained by epoch-shuffled subgradient
/// descent with step `1/(λt)`, `λ = 1/C`. Non-convex; seeded.
pub fn train_plsvm(ts: &TrainSet, c: f64, epochs: usize, seed: u64) -> Result<BaselineOutcome> {
    let space = check_enumerable(ts)?;
    if ts.n() == 0 {
        return Err(Error::data("cannot train on a corpus with no pieces"));
    }
    for i in 0..ts.n() {
        if ts.piece(i).s() as u64 == space {
            return Err(Error::config(
                "a piece's candidates cover the whole tuple space; the best-wrong margin is undefined",
            ));
        }
    }
    if c <= 0.0 {
        return Err(Error::config("C must be positive"));
    }
    let lambda = 1.0 / c;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = vec![0.0; ts.index.dim()];
    let mut order: Vec<usize> = (0..ts.n()).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let scores = tuple_scores(&weights, ts, i, space);
            let piece = ts.piece(i);
            let mut best_cand = (f64::NEG_INFINITY, 0usize);
            for (j, cand) in piece.candidates.iter().enumerate() {
                let s = scores[cand.code(ts.q()) as usize];
                if s > best_cand.0 {
                    best_cand = (s, j);
                }
            }
            let mut best_wrong = (f64::NEG_INFINITY, 0u64);
            for code in 0..space {
                if ts.cand_codes[i].contains(&code) {
                    continue;
                }
                if scores[code as usize] > best_wrong.0 {
                    best_wrong = (scores[code as usize], code);
                }
            }
            let active = 1.0 - (best_cand.0 - best_wrong.0) > 0.0;
            let shrink = 1.0 - eta * lambda;
            for w in &mut weights {
                *w *= shrink;
            }
            if active {
                let cand_phi = &ts.cand_phi[i][best_cand.1];
                cand_phi.add_scaled_into(eta, &mut weights);
                let wrong = LabelTuple::from_code(best_wrong.1, ts.q(), ts.w() + 1);
                let wrong_phi = joint_features(&ts.index, &ts.contexts[i], &wrong)?;
                wrong_phi.add_scaled_into(-eta, &mut weights);
            }
        }
    }
    Ok(BaselineOutcome {
        model: WeightModel::new(weights, ts.index.clone())?,
        trace: Vec::new(),
        converged: true,
    })
}

/// The hinge objective the subgradient trainer descends, for verification.
pub fn plsvm_objective(weights: &[f64], ts: &TrainSet, c: f64) -> Result<f64> {
    let space = check_enumerable(ts)?;
    let reg: f64 = 0.5 * weights.iter().map(|w| w * w).sum::<f64>();
    let mut hinge = 0.0;
    for i in 0..ts.n() {
        let scores = tuple_scores(weights, ts, i, space);
        let best_cand = ts
            .piece(i)
            .candidates
            .iter()
            .map(|cand| scores[cand.code(ts.q()) as usize])
            .fold(f64::NEG_INFINITY, f64::max);
        let best_wrong = (0..space)
            .filter(|code| !ts.cand_codes[i].contains(code))
            .map(|code| scores[code as usize])
            .fold(f64::NEG_INFINITY, f64::max);
        hinge += (1.0 - (best_cand - best_wrong)).max(0.0);
    }
    Ok(reg + c / ts.n() as f64 * hinge)
}

/// Identification candidates for one piece in lexicographic order, used for
/// deterministic argmax tie-breaking.
fn sorted_candidate_order(ts: &TrainSet, piece_id: usize) -> Vec<usize> {
    let q = ts.q();
    let piece = ts.piece(piece_id);
    let mut order: Vec<usize> = (0..piece.s()).collect();
    order.sort_by_key(|&j| piece.candidates[j].code(q));
    order
}

/// Best-scoring candidate of a piece, ties resolved to the lexicographically
/// smallest tuple.
pub fn identify_candidate(weights: &[f64], ts: &TrainSet, piece_id: usize) -> usize {
    let piece = ts.piece(piece_id);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for j in sorted_candidate_order(ts, piece_id) {
        let s = crate::model::score(weights, ts, piece_id, &piece.candidates[j]);
        if s > best.0 {
            best = (s, j);
        }
    }
    best.1
}

/// Two-margin identification training: alternate picking the best-scoring
/// candidate per piece with solving margins of that candidate against the
/// other candidates and against all non-candidates.
pub fn train_cllp(
    ts: &TrainSet,
    c1: f64,
    c2: f64,
    rounds: usize,
    cfg: &BaselineConfig,
) -> Result<BaselineOutcome> {
    let space = check_enumerable(ts)?;
    if ts.n() == 0 {
        return Err(Error::data("cannot train on a corpus with no pieces"));
    }
    if rounds == 0 {
        return Err(Error::config("rounds must be at least 1"));
    }
    let n = ts.n() as f64;
    let mut weights = vec![0.0; ts.index.dim()];
    let mut trace = Vec::new();
    let mut converged = true;
    for round in 0..rounds {
        let stars: Vec<usize> = (0..ts.n()).map(|i| identify_candidate(&weights, ts, i)).collect();

        let mut qp = QpProblem::new(ts.index.dim());
        let mut non_groups = Vec::with_capacity(ts.n());
        for i in 0..ts.n() {
            let star_phi = &ts.cand_phi[i][stars[i]];
            let g_cand = qp.add_group(c1 / n);
            for (j, _) in ts.piece(i).candidates.iter().enumerate() {
                if j != stars[i] {
                    qp.add_row(g_cand, 1.0, SparseVec::sub(star_phi, &ts.cand_phi[i][j]))?;
                }
            }
            non_groups.push(qp.add_group(c2 / n));
        }

        let mut seen: Vec<HashSet<u64>> = vec![HashSet::new(); ts.n()];
        let mut sweep = 0;
        loop {
            sweep += 1;
            let mut added = 0usize;
            let mut max_violation = 0.0f64;
            for i in 0..ts.n() {
                let scores = tuple_scores(qp.weights(), ts, i, space);
                let star_score = scores[ts.piece(i).candidates[stars[i]].code(ts.q()) as usize];
                let slack = qp.group_slack(non_groups[i]);
                let mut best: Option<(f64, u64)> = None;
                for code in 0..space {
                    if ts.cand_codes[i].contains(&code) {
                        continue;
                    }
                    let value = 1.0 + scores[code as usize] - star_score;
                    if best.is_none_or(|(v, _)| value > v) {
                        best = Some((value, code));
                    }
                }
                if let Some((value, code)) = best {
                    let violation = value - slack;
                    if violation > cfg.eps1 && seen[i].insert(code) {
                        let tuple = LabelTuple::from_code(code, ts.q(), ts.w() + 1);
                        let phi = joint_features(&ts.index, &ts.contexts[i], &tuple)?;
                        qp.add_row(non_groups[i], 1.0, SparseVec::sub(&ts.cand_phi[i][stars[i]], &phi))?;
                        added += 1;
                        if violation > max_violation {
                            max_violation = violation;
                        }
                    }
                }
            }
            if added == 0 {
                break;
            }
            let stats = qp.solve(cfg.tol, cfg.max_qp_sweeps);
            converged = stats.converged;
            trace.push(SweepTrace {
                sweep: round * 1000 + sweep,
                added,
                objective: qp.primal_objective(),
                max_violation,
            });
        }
        weights = qp.weights().to_vec();
    }
    Ok(BaselineOutcome {
        model: WeightModel::new(weights, ts.index.clone())?,
        trace,
        converged,
    })
}

/// The averaged-strategy objective with a tight slack: per piece, the hinged
/// maximum over non-candidates of `s + score - set_score`, scaled by `C/n`,
/// plus the regularizer. Pieces without non-candidates contribute nothing.
pub fn objective_j0(weights: &[f64], ts: &TrainSet, c: f64) -> Result<f64> {
    let space = check_enumerable(ts)?;
    let n = ts.n() as f64;
    let reg: f64 = 0.5 * weights.iter().map(|w| w * w).sum::<f64>();
    let mut hinge = 0.0;
    for i in 0..ts.n() {
        let s = ts.piece(i).s() as f64;
        let base = set_score(weights, ts, i);
        let scores = tuple_scores(weights, ts, i, space);
        let mut worst = f64::NEG_INFINITY;
        for code in 0..space {
            if ts.cand_codes[i].contains(&code) {
                continue;
            }
            let v = s + scores[code as usize] - base;
            if v > worst {
                worst = v;
            }
        }
        if worst > f64::NEG_INFINITY {
            hinge += worst.max(0.0);
        }
    }
    Ok(reg + c / n * hinge)
}

/// Constraint counts of the three soft-margin formulations for `N` sequences
/// of length `L` with `k` candidate labels per element over `q` labels:
/// sequence-level averaged and identification losses versus the piecewise
/// loss with `w` transition factors.
pub fn constraint_counts(
    n_seqs: u64,
    len: u64,
    k: u64,
    q: u64,
    w: u64,
) -> Result<(u128, u128, u128)> {
    if n_seqs == 0 || len == 0 || k == 0 || q == 0 || w == 0 {
        return Err(Error::config("constraint counts need positive N, L, k, q, w"));
    }
    if k > q {
        return Err(Error::config("candidate count k cannot exceed label count q"));
    }
    if len < w + 1 {
        return Err(Error::config("sequence length must be at least w + 1"));
    }
    let err = || Error::numeric("constraint count overflows u128");
    let pow = |base: u64, exp: u64| -> Result<u128> {
        let exp: u32 = exp.try_into().map_err(|_| err())?;
        (base as u128).checked_pow(exp).ok_or_else(err)
    };
    let n = n_seqs as u128;
    let q_l = pow(q, len)?;
    let k_l = pow(k, len)?;
    let j0 = n.checked_mul(q_l - k_l + 1).ok_or_else(err)?;
    let j1 = n.checked_mul(q_l - 1).ok_or_else(err)?;
    let per_piece = pow(q, w + 1)?;
    let j = n
        .checked_mul((len - w) as u128)
        .and_then(|v| v.checked_mul(per_piece))
        .ok_or_else(err)?;
    Ok((j0, j1, j))
}

/// Builds a training view over a corpus with the default set-energy
/// aggregation, reusing a prebuilt feature index.
pub fn trainset_with_index(corpus: AmbiguousCorpus, index: Arc<crate::features::FeatureIndex>) -> Result<TrainSet> {
    TrainSet::build(corpus, index, SetEnergy::Sum)
}
