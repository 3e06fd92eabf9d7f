//! Dual coordinate-ascent solver for the working-set quadratic programs.
//!
//! Every constraint row demands `ω·u ≥ rhs − slack(group)`. Rows are grouped
//! by shared slack variable; a group's slack is penalized linearly with
//! coefficient `cap`, which in the dual bounds the group's total multiplier
//! mass: `Σ_{rows in g} α ≤ cap(g)`. Single-row groups reduce to box
//! constraints. The primal weights are recovered as `ω = Σ α_k u_k`.

use crate::error::{Error, Result};
use crate::features::SparseVec;

const TINY: f64 = 1e-300;

/// Clamp that tolerates an empty interval (floating dust can push a group's
/// mass epsilon past its cap, making hi < lo).
fn clamp_step(value: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    value.max(lo).min(hi)
}

struct Row {
    group: u32,
    rhs: f64,
    feat: SparseVec,
    sq_norm: f64,
}

pub struct SolveStats {
    pub sweeps: usize,
    pub kkt: f64,
    pub converged: bool,
}

pub struct QpProblem {
    rows: Vec<Row>,
    caps: Vec<f64>,
    group_rows: Vec<Vec<u32>>,
    group_sum: Vec<f64>,
    alpha: Vec<f64>,
    omega: Vec<f64>,
}

impl QpProblem {
    pub fn new(dim: usize) -> Self {
        QpProblem {
            rows: Vec::new(),
            caps: Vec::new(),
            group_rows: Vec::new(),
            group_sum: Vec::new(),
            alpha: Vec::new(),
            omega: vec![0.0; dim],
        }
    }

    pub fn add_group(&mut self, cap: f64) -> u32 {
        let id = self.caps.len() as u32;
        self.caps.push(cap.max(0.0));
        self.group_rows.push(Vec::new());
        self.group_sum.push(0.0);
        id
    }

    /// Changes a group's dual capacity, clipping its multipliers when the
    /// new capacity is smaller than their current mass.
    pub fn set_group_cap(&mut self, group: u32, cap: f64) {
        let g = group as usize;
        let cap = cap.max(0.0);
        self.caps[g] = cap;
        let sum = self.group_sum[g];
        if sum > cap {
            let scale = if cap == 0.0 { 0.0 } else { cap / sum };
            for &row_id in &self.group_rows[g] {
                let row = &self.rows[row_id as usize];
                let old = self.alpha[row_id as usize];
                let new = old * scale;
                if new != old {
                    row.feat.add_scaled_into(new - old, &mut self.omega);
                    self.alpha[row_id as usize] = new;
                }
            }
            self.group_sum[g] = self.group_rows[g]
                .iter()
                .map(|&r| self.alpha[r as usize])
                .sum();
        }
    }

    /// Appends a constraint row with zero initial multiplier.
    pub fn add_row(&mut self, group: u32, rhs: f64, feat: SparseVec) -> Result<u32> {
        if !rhs.is_finite() || feat.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::numeric("constraint row contains non-finite values"));
        }
        let sq_norm = feat.norm_sq();
        let id = self.rows.len() as u32;
        self.rows.push(Row { group, rhs, feat, sq_norm });
        self.group_rows[group as usize].push(id);
        self.alpha.push(0.0);
        Ok(id)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.omega
    }

    pub fn alpha(&self, row: u32) -> f64 {
        self.alpha[row as usize]
    }

    /// Recomputes `ω` from the multipliers, discarding accumulated drift.
    fn rebuild_weights(&mut self) {
        self.omega.iter_mut().for_each(|w| *w = 0.0);
        for (row, &a) in self.rows.iter().zip(&self.alpha) {
            if a != 0.0 {
                row.feat.add_scaled_into(a, &mut self.omega);
            }
        }
    }

    /// Hinge value of a group's slack under the current weights.
    pub fn group_slack(&self, group: u32) -> f64 {
        let mut worst = 0.0;
        for &row_id in &self.group_rows[group as usize] {
            let row = &self.rows[row_id as usize];
            let v = row.rhs - row.feat.dot_dense(&self.omega);
            if v > worst {
                worst = v;
            }
        }
        worst
    }

    /// `½‖ω‖² + Σ_g cap_g · slack_g` over the rows currently expressed.
    pub fn primal_objective(&self) -> f64 {
        let reg: f64 = 0.5 * self.omega.iter().map(|w| w * w).sum::<f64>();
        let mut penalty = 0.0;
        for g in 0..self.caps.len() {
            if self.caps[g] > 0.0 {
                penalty += self.caps[g] * self.group_slack(g as u32);
            }
        }
        reg + penalty
    }

    /// One cyclic pass of single-coordinate updates over the awake rows.
    /// Returns the largest KKT violation seen; pins bound-locked rows.
    fn single_sweep(&mut self, asleep: &mut [bool], shrink_margin: f64) -> f64 {
        let mut max_viol = 0.0f64;
        for k in 0..self.rows.len() {
            if asleep[k] {
                continue;
            }
            let g = self.rows[k].group as usize;
            let cap = self.caps[g];
            let grad = self.rows[k].rhs - self.rows[k].feat.dot_dense(&self.omega);
            let lo = -self.alpha[k];
            let hi = cap - self.group_sum[g];
            // KKT: a positive gradient matters unless the group is at
            // capacity; a negative one matters while mass remains.
            if grad > 0.0 && hi > 1e-12 * (1.0 + cap) {
                max_viol = max_viol.max(grad);
            } else if grad < 0.0 && self.alpha[k] > 0.0 {
                max_viol = max_viol.max(-grad);
            }
            let delta = if self.rows[k].sq_norm > TINY {
                clamp_step(grad / self.rows[k].sq_norm, lo, hi)
            } else if grad > 0.0 {
                hi.max(0.0)
            } else {
                lo.min(0.0)
            };
            if delta.abs() > 1e-16 {
                self.alpha[k] += delta;
                self.group_sum[g] += delta;
                let feat = &self.rows[k].feat;
                feat.add_scaled_into(delta, &mut self.omega);
            }
            // Box rows (single-row groups) pinned at a bound with the
            // gradient pushing outward sleep until the verification pass.
            // Shared-group rows stay awake for the pair transfers.
            if self.group_rows[g].len() == 1 {
                let pinned_low = self.alpha[k] <= 0.0 && grad < -shrink_margin;
                let pinned_high =
                    cap - self.group_sum[g] <= 1e-12 * (1.0 + cap) && grad > shrink_margin;
                if pinned_low || pinned_high {
                    asleep[k] = true;
                }
            }
        }
        max_viol
    }

    /// Steepest-pair mass transfers inside every saturated shared-slack
    /// group. Sleeping rows hold no mass and cannot receive, so they are
    /// skipped. Returns the largest pair violation seen.
    fn pair_sweep(&mut self, asleep: &[bool]) -> f64 {
        let mut max_viol = 0.0f64;
        let mut ids: Vec<u32> = Vec::new();
        let mut grads: Vec<f64> = Vec::new();
        for g in 0..self.group_rows.len() {
            if self.group_rows[g].len() < 2 {
                continue;
            }
            if self.group_sum[g] < self.caps[g] - 1e-12 * (1.0 + self.caps[g]) {
                continue;
            }
            ids.clear();
            ids.extend(self.group_rows[g].iter().copied().filter(|&id| !asleep[id as usize]));
            let m = ids.len();
            if m < 2 {
                continue;
            }
            grads.clear();
            grads.extend(ids.iter().map(|&id| {
                let row = &self.rows[id as usize];
                row.rhs - row.feat.dot_dense(&self.omega)
            }));
            // A few transfers per sweep keep the cost linear-ish in the
            // group size; remaining imbalance is caught on later sweeps.
            for _ in 0..4.min(2 * m) {
                let mut best_gain = 0.0;
                let mut pair = None;
                for a in 0..m {
                    for b in 0..m {
                        if a == b || self.alpha[ids[b] as usize] <= 0.0 {
                            continue;
                        }
                        let gain = grads[a] - grads[b];
                        if gain > best_gain {
                            best_gain = gain;
                            pair = Some((a, b));
                        }
                    }
                }
                let Some((a, b)) = pair else { break };
                max_viol = max_viol.max(best_gain);
                let (k, l) = (ids[a] as usize, ids[b] as usize);
                let denom = self.rows[k].sq_norm + self.rows[l].sq_norm
                    - 2.0 * self.rows[k].feat.dot(&self.rows[l].feat);
                let delta = if denom > TINY {
                    (best_gain / denom).min(self.alpha[l])
                } else {
                    self.alpha[l]
                };
                if delta <= 1e-16 {
                    break;
                }
                self.alpha[k] += delta;
                self.alpha[l] -= delta;
                let feat_k = &self.rows[k].feat;
                feat_k.add_scaled_into(delta, &mut self.omega);
                let feat_l = &self.rows[l].feat;
                feat_l.add_scaled_into(-delta, &mut self.omega);
                for (slot, &id) in grads.iter_mut().zip(&ids) {
                    let row = &self.rows[id as usize];
                    *slot = row.rhs - row.feat.dot_dense(&self.omega);
                }
            }
        }
        max_viol
    }

    /// Runs coordinate ascent until the largest KKT violation falls below
    /// `tol`: cheap single-coordinate sweeps while they make progress, pair
    /// transfers when they stall, and a full verification pass (everything
    /// awake, both phases) before convergence is declared.
    pub fn solve(&mut self, tol: f64, max_sweeps: usize) -> SolveStats {
        let mut kkt = f64::INFINITY;
        let mut sweeps = 0;
        let mut asleep = vec![false; self.rows.len()];
        let mut verifying = false;
        let shrink_margin = (10.0 * tol).max(1e-9);
        while sweeps < max_sweeps {
            sweeps += 1;
            let single_viol = self.single_sweep(&mut asleep, shrink_margin);
            kkt = single_viol.max(self.pair_sweep(&asleep));
            if sweeps % 128 == 0 {
                self.rebuild_weights();
            }
            if kkt <= tol {
                if verifying {
                    break;
                }
                // Wake everything and verify with one full pass before
                // declaring convergence.
                asleep.iter_mut().for_each(|s| *s = false);
                verifying = true;
            } else {
                verifying = false;
            }
        }
        self.rebuild_weights();
        SolveStats { sweeps, kkt, converged: kkt <= tol }
    }
}
