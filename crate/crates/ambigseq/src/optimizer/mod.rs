//! Working-set training: the exact separation oracle over label tuples and
//! the cutting-plane outer loop shared by the confidence-weighted trainer and
//! the margin-based baselines.

pub mod qp;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::features::{joint_features, SparseVec};
use crate::model::TrainSet;
use crate::pieces::{tuple_space, LabelTuple, DEFAULT_ENUM_CAP};
use crate::wdpsl::ConfidenceTable;

pub use qp::{QpProblem, SolveStats};

/// Knobs for the cutting-plane solver.
#[derive(Clone, Copy, Debug)]
pub struct CutConfig {
    pub c1: f64,
    pub c2: f64,
    /// Constraint violation tolerance for the separation step.
    pub eps1: f64,
    /// KKT tolerance for the inner dual solver.
    pub tol: f64,
    pub max_qp_sweeps: usize,
}

impl Default for CutConfig {
    fn default() -> Self {
        CutConfig { c1: 1.0, c2: 1.0, eps1: 1e-3, tol: 1e-6, max_qp_sweeps: 100_000 }
    }
}

/// Per-piece sets of generated violator tuples. Candidate-margin constraints
/// are always materialized in full and therefore not recorded here.
#[derive(Clone, Debug, Default)]
pub struct WorkingSet {
    pub violators: Vec<Vec<LabelTuple>>,
}

/// Result of a working-set solve.
#[derive(Clone, Debug)]
pub struct QpSolution {
    pub weights: Vec<f64>,
    /// Piece slacks for the candidate-vs-all constraints.
    pub xi: Vec<f64>,
    /// Per-candidate slacks for the confidence-weighted margin constraints.
    pub nu: Vec<Vec<f64>>,
    pub objective: f64,
    pub kkt: f64,
    pub converged: bool,
    pub working: WorkingSet,
}

/// One line of the cutting-plane trace.
#[derive(Clone, Copy, Debug)]
pub struct SweepTrace {
    pub sweep: usize,
    pub added: usize,
    pub objective: f64,
    pub max_violation: f64,
}

pub(crate) fn check_enumerable(ts: &TrainSet) -> Result<u64> {
    let space = tuple_space(ts.q(), ts.w())?;
    if space > DEFAULT_ENUM_CAP {
        return Err(Error::config(format!(
            "tuple space {space} exceeds the enumeration cap {DEFAULT_ENUM_CAP}; reduce w"
        )));
    }
    Ok(space)
}

/// Maximum over all tuples of `Δ(candidates, y) + score(y) - set_score`,
/// returned as (tuple code, value). Ties resolve to the lexicographically
/// smallest tuple.
pub(crate) fn best_augmented(weights: &[f64], ts: &TrainSet, piece_id: usize) -> (u64, f64) {
    let q = ts.q();
    let span = ts.w() + 1;
    let space = (q as u64).pow(span as u32);
    let table = ts.node_score_table(weights, piece_id);
    let index = &ts.index;
    let s = ts.piece(piece_id).s() as f64;
    let base = crate::model::set_score(weights, ts, piece_id);
    let codes = &ts.cand_codes[piece_id];

    let mut best_code = 0u64;
    let mut best_value = f64::NEG_INFINITY;
    let mut digits = vec![0usize; span];
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
        let delta = if codes.contains(&code) { 0.0 } else { s };
        let value = delta + score - base;
        if value > best_value {
            best_value = value;
            best_code = code;
        }
    }
    (best_code, best_value)
}

/// Separation oracle: the most violated candidate-vs-all constraint of one
/// piece, or `None` when its violation does not exceed `eps1`.
pub fn most_violated(
    weights: &[f64],
    ts: &TrainSet,
    piece_id: usize,
    current_slack: f64,
    eps1: f64,
) -> Result<Option<(LabelTuple, f64)>> {
    check_enumerable(ts)?;
    let (code, value) = best_augmented(weights, ts, piece_id);
    let violation = value - current_slack;
    if violation > eps1 {
        Ok(Some((LabelTuple::from_code(code, ts.q(), ts.w() + 1), violation)))
    } else {
        Ok(None)
    }
}

/// The working QP: candidate-margin rows are always present, violator rows
/// accumulate, and re-solves warm-start from the previous multipliers.
pub struct WorkingQp {
    qp: QpProblem,
    piece_groups: Vec<u32>,
    cand_groups: Vec<Vec<u32>>,
    seen: Vec<HashSet<u64>>,
    violators: Vec<Vec<LabelTuple>>,
    n: usize,
}

impl WorkingQp {
    pub fn new(ts: &TrainSet, conf: &ConfidenceTable, c1: f64, c2: f64) -> Result<WorkingQp> {
        if c1 <= 0.0 || c2 < 0.0 {
            return Err(Error::config("regularization parameters must be positive"));
        }
        let n = ts.n();
        let mut qp = QpProblem::new(ts.index.dim());
        let mut piece_groups = Vec::with_capacity(n);
        let mut cand_groups = Vec::with_capacity(n);
        for _ in 0..n {
            piece_groups.push(qp.add_group(c1 / n as f64));
        }
        for i in 0..n {
            let mut groups = Vec::with_capacity(ts.piece(i).s());
            for j in 0..ts.piece(i).s() {
                let g = qp.add_group(c2 * conf.get(i, j) / n as f64);
                qp.add_row(g, 1.0, ts.cand_phi[i][j].clone())?;
                groups.push(g);
            }
            cand_groups.push(groups);
        }
        Ok(WorkingQp {
            qp,
            piece_groups,
            cand_groups,
            seen: vec![HashSet::new(); n],
            violators: vec![Vec::new(); n],
            n,
        })
    }

    /// Adds a candidate-vs-all violator row; returns false when the tuple is
    /// already expressed.
    pub fn add_violator(&mut self, ts: &TrainSet, piece_id: usize, tuple: &LabelTuple) -> Result<bool> {
        let code = tuple.code(ts.q());
        if !self.seen[piece_id].insert(code) {
            return Ok(false);
        }
        let delta = crate::model::delta_loss(&ts.piece(piece_id).candidates, tuple);
        let phi = joint_features(&ts.index, &ts.contexts[piece_id], tuple)?;
        let feat = SparseVec::sub(&ts.set_phi[piece_id], &phi);
        self.qp.add_row(self.piece_groups[piece_id], delta, feat)?;
        self.violators[piece_id].push(tuple.clone());
        Ok(true)
    }

    /// Updates the candidate-margin capacities after a confidence change.
    pub fn set_confidences(&mut self, conf: &ConfidenceTable, c2: f64) {
        for i in 0..self.n {
            for (j, &g) in self.cand_groups[i].iter().enumerate() {
                self.qp.set_group_cap(g, c2 * conf.get(i, j) / self.n as f64);
            }
        }
    }

    pub fn solve(&mut self, tol: f64, max_sweeps: usize) -> SolveStats {
        self.qp.solve(tol, max_sweeps)
    }

    pub fn weights(&self) -> &[f64] {
        self.qp.weights()
    }

    pub fn piece_slack(&self, piece_id: usize) -> f64 {
        self.qp.group_slack(self.piece_groups[piece_id])
    }

    pub fn objective(&self) -> f64 {
        self.qp.primal_objective()
    }

    pub fn solution(&self, kkt: f64, converged: bool) -> QpSolution {
        let xi = (0..self.n).map(|i| self.piece_slack(i)).collect();
        let nu = self
            .cand_groups
            .iter()
            .map(|groups| groups.iter().map(|&g| self.qp.group_slack(g)).collect())
            .collect();
        QpSolution {
            weights: self.qp.weights().to_vec(),
            xi,
            nu,
            objective: self.qp.primal_objective(),
            kkt,
            converged,
            working: WorkingSet { violators: self.violators.clone() },
        }
    }
}

/// Solves the QP restricted to an explicit working set (cold start). Mainly
/// a verification surface; the cutting-plane loop keeps its own warm state.
pub fn solve_working_qp(
    ts: &TrainSet,
    ws: &WorkingSet,
    conf: &ConfidenceTable,
    cfg: &CutConfig,
) -> Result<QpSolution> {
    let mut wqp = WorkingQp::new(ts, conf, cfg.c1, cfg.c2)?;
    for (piece_id, tuples) in ws.violators.iter().enumerate() {
        for tuple in tuples {
            wqp.add_violator(ts, piece_id, tuple)?;
        }
    }
    let stats = wqp.solve(cfg.tol, cfg.max_qp_sweeps);
    Ok(wqp.solution(stats.kkt, stats.converged))
}

/// Cutting-plane training loop: sweeps the separation oracle over all
/// pieces, batches the violators found in a sweep, re-solves, and stops when
/// a full sweep adds nothing.
pub fn cutting_plane(
    ts: &TrainSet,
    conf: &ConfidenceTable,
    cfg: &CutConfig,
) -> Result<(QpSolution, Vec<SweepTrace>)> {
    check_enumerable(ts)?;
    if ts.n() == 0 {
        return Err(Error::data("cannot train on a corpus with no pieces"));
    }
    let mut wqp = WorkingQp::new(ts, conf, cfg.c1, cfg.c2)?;
    let mut xi = vec![0.0; ts.n()];
    let mut trace = Vec::new();
    let mut kkt = 0.0;
    let mut converged = true;
    let mut sweep = 0;
    loop {
        sweep += 1;
        let mut added = 0usize;
        let mut max_violation = 0.0f64;
        for i in 0..ts.n() {
            let (code, value) = best_augmented(wqp.weights(), ts, i);
            let violation = value - xi[i];
            if violation > max_violation {
                max_violation = violation;
            }
            if violation > cfg.eps1 {
                let tuple = LabelTuple::from_code(code, ts.q(), ts.w() + 1);
                if wqp.add_violator(ts, i, &tuple)? {
                    added += 1;
                }
            }
        }
        if added == 0 {
            break;
        }
        let stats = wqp.solve(cfg.tol, cfg.max_qp_sweeps);
        kkt = stats.kkt;
        converged = stats.converged;
        for (i, slack) in xi.iter_mut().enumerate() {
            *slack = wqp.piece_slack(i);
        }
        trace.push(SweepTrace { sweep, added, objective: wqp.objective(), max_violation });
    }
    Ok((wqp.solution(kkt, converged), trace))
}
