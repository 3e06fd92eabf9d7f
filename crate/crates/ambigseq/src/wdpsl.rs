//! The confidence-weighted trainer: confidence initialization (uniform and
//! K-nearest-neighbor), min-max confidence updates from candidate energies,
//! the unified objective, and the alternating optimization loop.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::input_features;
use crate::model::{score, TrainSet, WeightModel};
use crate::optimizer::{best_augmented, cutting_plane, CutConfig, SweepTrace};

/// Per-piece, per-candidate confidence values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceTable {
    pub values: Vec<Vec<f64>>,
}

impl ConfidenceTable {
    pub fn get(&self, piece: usize, candidate: usize) -> f64 {
        self.values[piece][candidate]
    }

    pub fn piece(&self, piece: usize) -> &[f64] {
        &self.values[piece]
    }

    /// All-zero table with the corpus's candidate shape.
    pub fn zeros_like(ts: &TrainSet) -> ConfidenceTable {
        ConfidenceTable {
            values: (0..ts.n()).map(|i| vec![0.0; ts.piece(i).s()]).collect(),
        }
    }

    /// Uniform initialization: `1 / s_i` for every candidate.
    pub fn uniform(ts: &TrainSet) -> ConfidenceTable {
        ConfidenceTable {
            values: (0..ts.n())
                .map(|i| {
                    let s = ts.piece(i).s();
                    vec![1.0 / s as f64; s]
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        for row in &self.values {
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::numeric(format!("confidence {v} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}

/// Uniform confidence initialization.
pub fn init_uniform(ts: &TrainSet) -> ConfidenceTable {
    ConfidenceTable::uniform(ts)
}

/// K-nearest-neighbor confidence initialization: for each piece, its K most
/// cosine-similar pieces (ties to the lower piece id) vote for each candidate
/// by candidate-set membership; a piece whose candidates collect no votes
/// falls back to uniform.
pub fn init_knn(ts: &TrainSet, k: usize) -> Result<ConfidenceTable> {
    let n = ts.n();
    if k == 0 || k > n.saturating_sub(1) {
        return Err(Error::config(format!(
            "neighbor count k={k} must lie in [1, {}]",
            n.saturating_sub(1)
        )));
    }
    let inputs: Vec<_> = (0..n).map(|i| input_features(&ts.contexts[i])).collect();
    let q = ts.q();
    let values: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut sims: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (inputs[i].cosine(&inputs[j]), j))
                .collect();
            sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let neighbors = &sims[..k];
            let piece = ts.piece(i);
            let counts: Vec<usize> = piece
                .candidates
                .iter()
                .map(|cand| {
                    let code = cand.code(q);
                    neighbors
                        .iter()
                        .filter(|&&(_, j)| ts.cand_codes[j].contains(&code))
                        .count()
                })
                .collect();
            if counts.iter().all(|&c| c == 0) {
                vec![1.0 / piece.s() as f64; piece.s()]
            } else {
                counts.iter().map(|&c| c as f64 / k as f64).collect()
            }
        })
        .collect();
    Ok(ConfidenceTable { values })
}

/// Min-max normalized candidate energies for one piece. When all energies
/// coincide (including singleton candidate sets) the result is uniform.
pub fn update_confidence(weights: &[f64], ts: &TrainSet, piece_id: usize) -> Result<Vec<f64>> {
    let piece = ts.piece(piece_id);
    let energies: Vec<f64> = piece
        .candidates
        .iter()
        .map(|cand| score(weights, ts, piece_id, cand))
        .collect();
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::numeric("candidate energy is not finite"));
    }
    let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![1.0 / piece.s() as f64; piece.s()]);
    }
    Ok(energies.iter().map(|e| (e - min) / (max - min)).collect())
}

/// The unified objective with slacks at their tight hinge values:
/// `½‖ω‖² + (C1/n) Σ_i max(0, max_y(Δ + score(y) - set_score_i))
///        + (C2/n) Σ_i Σ_j P_ij max(0, 1 - score(candidate_ij))`.
pub fn objective_value(
    weights: &[f64],
    ts: &TrainSet,
    conf: &ConfidenceTable,
    c1: f64,
    c2: f64,
) -> Result<f64> {
    crate::optimizer::check_enumerable(ts)?;
    let n = ts.n() as f64;
    let reg: f64 = 0.5 * weights.iter().map(|w| w * w).sum::<f64>();
    let mut hinge_a = 0.0;
    let mut hinge_b = 0.0;
    for i in 0..ts.n() {
        let (_, value) = best_augmented(weights, ts, i);
        hinge_a += value.max(0.0);
        for (j, cand) in ts.piece(i).candidates.iter().enumerate() {
            let margin = 1.0 - score(weights, ts, i, cand);
            hinge_b += conf.get(i, j) * margin.max(0.0);
        }
    }
    Ok(reg + c1 / n * hinge_a + c2 / n * hinge_b)
}

/// How confidences evolve across alternations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdateMode {
    /// Min-max normalized energies after each weight solve.
    #[default]
    Weak,
    /// Confidences stay at their initial values (the AVG setting).
    Frozen,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Uniform,
    Knn,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub c1: f64,
    pub c2: f64,
    /// Relative objective-change tolerance for the alternating loop.
    pub eps: f64,
    /// Violation tolerance for constraint generation.
    pub eps1: f64,
    /// KKT tolerance for the dual solver.
    pub tol: f64,
    pub k: usize,
    pub max_alternations: usize,
    pub max_qp_sweeps: usize,
    pub init_mode: InitMode,
    pub update_mode: UpdateMode,
    /// Optional lower bound applied to updated confidences.
    pub confidence_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c1: 1.0,
            c2: 1.0,
            eps: 1e-3,
            eps1: 1e-3,
            tol: 1e-6,
            k: 10,
            max_alternations: 50,
            max_qp_sweeps: 100_000,
            init_mode: InitMode::Knn,
            update_mode: UpdateMode::Weak,
            confidence_floor: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(Error::config("C1 and C2 must be positive"));
        }
        if self.eps <= 0.0 || self.eps1 <= 0.0 {
            return Err(Error::config("tolerances must be positive"));
        }
        if self.k == 0 {
            return Err(Error::config("neighbor count K must be at least 1"));
        }
        if self.max_alternations == 0 {
            return Err(Error::config("max_alternations must be at least 1"));
        }
        Ok(())
    }

    fn cut(&self) -> CutConfig {
        CutConfig {
            c1: self.c1,
            c2: self.c2,
            eps1: self.eps1,
            tol: self.tol,
            max_qp_sweeps: self.max_qp_sweeps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    ZeroObjective,
    MaxAlternations,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::Converged => write!(f, "converged"),
            StopReason::ZeroObjective => write!(f, "zero-objective"),
            StopReason::MaxAlternations => write!(f, "max-alternations"),
        }
    }
}

/// One alternation of the outer loop.
#[derive(Clone, Debug)]
pub struct AlternationRow {
    pub alternation: usize,
    pub objective: f64,
    pub constraints: usize,
    pub qp_converged: bool,
    pub confidences: ConfidenceTable,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: WeightModel,
    pub confidences: ConfidenceTable,
    pub trace: Vec<AlternationRow>,
    pub cutting_traces: Vec<Vec<SweepTrace>>,
    pub stop: StopReason,
    pub qp_converged: bool,
}

/// Alternating optimization: solve the weights under fixed confidences by
/// cutting planes, recompute confidences from candidate energies, and stop on
/// small relative objective change (evaluated with the freshly updated
/// confidences for both terms).
pub fn train(ts: &TrainSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut conf = match cfg.init_mode {
        InitMode::Uniform => init_uniform(ts),
        InitMode::Knn => init_knn(ts, cfg.k.min(ts.n().saturating_sub(1)).max(1))?,
    };
    conf.validate()?;

    let mut trace: Vec<AlternationRow> = Vec::new();
    let mut cutting_traces = Vec::new();
    let mut prev_weights: Option<Vec<f64>> = None;
    let mut stop = StopReason::MaxAlternations;
    let mut final_weights = vec![0.0; ts.index.dim()];
    let mut qp_converged = true;

    for alternation in 1..=cfg.max_alternations {
        let (sol, sweeps) = cutting_plane(ts, &conf, &cfg.cut())?;
        qp_converged = sol.converged;
        cutting_traces.push(sweeps);

        if cfg.update_mode == UpdateMode::Weak {
            let mut values = Vec::with_capacity(ts.n());
            for i in 0..ts.n() {
                let mut row = update_confidence(&sol.weights, ts, i)?;
                if cfg.confidence_floor > 0.0 {
                    for v in &mut row {
                        *v = v.max(cfg.confidence_floor);
                    }
                }
                values.push(row);
            }
            conf = ConfidenceTable { values };
        }

        let objective = objective_value(&sol.weights, ts, &conf, cfg.c1, cfg.c2)?;
        let constraints = sol.working.violators.iter().map(|v| v.len()).sum();
        trace.push(AlternationRow {
            alternation,
            objective,
            constraints,
            qp_converged: sol.converged,
            confidences: conf.clone(),
        });
        final_weights = sol.weights;

        if let Some(prev) = &prev_weights {
            if objective == 0.0 {
                stop = StopReason::ZeroObjective;
                break;
            }
            let prev_objective = objective_value(prev, ts, &conf, cfg.c1, cfg.c2)?;
            if ((objective - prev_objective) / objective).abs() < cfg.eps {
                stop = StopReason::Converged;
                break;
            }
        }
        prev_weights = Some(final_weights.clone());
    }

    let model = WeightModel::new(final_weights, ts.index.clone())?;
    Ok(TrainOutcome {
        model,
        confidences: conf,
        trace,
        cutting_traces,
        stop,
        qp_converged,
    })
}
