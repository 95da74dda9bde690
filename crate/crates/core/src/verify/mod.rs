//! Independent certification of a solved bundle, and brute-force checks of
//! the belief system a CIB profile induces.
//!
//! Everything here is recomputed from the model, the stored strategy slices
//! and the stored update slices; solver certificates are never consulted
//! except to name failed cells in [`deviation_mdp_best_response`].

mod brute;
mod mdp;
mod profile;
mod rollout;

use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use brute::{
    behavioral_witness, check_conditional_independence, check_consistency, construct_full_belief, AgentTrajectories, CommonHistory,
    ConsistencyReport, Coverage, Deviation, FullBelief, IndependenceReport, Violation, ViolationKind, WitnessReport, TRAJECTORY_BUDGET,
    VIOLATION_TOL,
};
pub use mdp::deviation_mdp_best_response;
pub use profile::{advance, consistent_slice, profile_values, CibProfile, RandomProfile};
pub use rollout::{family_threshold, rollouts, RolloutResult};

use crate::belief::CibState;
use crate::dp::{EquilibriumBundle, Layout};
use crate::error::{Error, Result};
use crate::model::GameSpec;

#[derive(Clone, Debug)]
pub struct Tolerances {
    /// Largest admissible gain from a unilateral deviation.
    pub epsilon: f64,
    /// Largest admissible deviation of a stored update from Bayes' rule.
    pub consistency: f64,
    /// Largest admissible difference between stored and recomputed values.
    pub value: f64,
    /// Samples per rollout; zero disables rollouts.
    pub rollout_samples: usize,
    /// Number of first-time cells rolled out from.
    pub rollout_cells: usize,
    /// Standard errors allowed between a rollout mean and the stored value.
    pub rollout_se: f64,
    pub seed: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { epsilon: 1e-4, consistency: 1e-9, value: 1e-9, rollout_samples: 100_000, rollout_cells: 3, rollout_se: 3.0, seed: 0 }
    }
}

impl Tolerances {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self { epsilon, ..Self::default() }
    }
}

/// Recomputed quantities at one cell.
#[derive(Clone, Debug)]
pub struct CellReport {
    pub time: usize,
    pub cell: usize,
    pub on_path: bool,
    pub stage_gap: f64,
    pub deviation_gap: f64,
    pub residual: f64,
    pub value_error: f64,
    pub error: Option<String>,
}

/// One pass/fail line of a report.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    /// `(time, cell)` where `value` was attained.
    pub at: Option<(usize, usize)>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub spec_name: String,
    /// Which states the certificate covers.
    pub certified_set: String,
    pub cells: Vec<CellReport>,
    pub rollouts: Vec<RolloutResult>,
    /// `(time, cell)` whose successors fall outside the next layout.
    pub escapes: Vec<(usize, usize)>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Largest deviation gap over on-path cells, with its location.
    pub fn worst_deviation(&self) -> (f64, Option<(usize, usize)>) {
        let c = self.check("deviation gap").expect("always present");
        (c.value, c.at)
    }

    /// Per-cell CSV with 1-based time and cell columns.
    pub fn write_cells_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e.into() })?;
        let io = |e: csv::Error| Error::Io { path: path.to_path_buf(), source: e.into() };
        w.write_record(["time", "cell", "on_path", "stage_gap", "deviation_gap", "residual", "value_error", "error"]).map_err(io)?;
        for c in &self.cells {
            w.write_record([
                (c.time + 1).to_string(),
                (c.cell + 1).to_string(),
                c.on_path.to_string(),
                format!("{:e}", c.stage_gap),
                format!("{:e}", c.deviation_gap),
                format!("{:e}", c.residual),
                format!("{:e}", c.value_error),
                c.error.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "model: {}", self.spec_name)?;
        writeln!(f, "certified set: {}", self.certified_set)?;
        let on = self.cells.iter().filter(|c| c.on_path).count();
        writeln!(f, "cells: {} ({} on path)", self.cells.len(), on)?;
        for c in &self.checks {
            let at = c.at.map(|(t, cell)| format!(" at time {} cell {}", t + 1, cell + 1)).unwrap_or_default();
            writeln!(
                f,
                "[{}] {:<22} {:.3e} (tolerance {:.1e}){}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.tolerance,
                at
            )?;
        }
        for r in &self.rollouts {
            writeln!(
                f,
                "rollout time {} cell {} agent {} state {}: mean {:.6} +- {:.2e} vs stored {:.6} within {:.2} SE [{}]",
                r.time + 1,
                r.cell + 1,
                r.agent + 1,
                r.state + 1,
                r.mean,
                r.std_error,
                r.value,
                r.threshold,
                if r.passed { "PASS" } else { "FAIL" }
            )?;
        }
        for (t, cell) in self.escapes.iter().take(10) {
            writeln!(f, "successor of time {} cell {} is not in the next layout", t + 1, cell + 1)?;
        }
        for c in self.cells.iter().filter(|c| c.error.is_some()).take(10) {
            writeln!(f, "time {} cell {}: {}", c.time + 1, c.cell + 1, c.error.as_deref().unwrap_or(""))?;
        }
        write!(f, "verdict: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn worst(cells: &[CellReport], value: impl Fn(&CellReport) -> f64) -> (f64, Option<(usize, usize)>) {
    cells.iter().filter(|c| c.on_path).fold((0.0, None), |(v, at), c| {
        if value(c) > v || (value(c).is_nan() && !v.is_nan()) {
            (value(c), Some((c.time, c.cell)))
        } else {
            (v, at)
        }
    })
}

/// Certify a bundle against the model: recompute values and stage gaps,
/// solve every agent's deviation MDP, check the stored updates against
/// Bayes' rule and compare rollouts with stored values.
pub fn verify_cib_pbe(spec: &GameSpec, bundle: &EquilibriumBundle, tol: &Tolerances) -> Result<VerifyReport> {
    spec.validate().map_err(Error::Invalid)?;
    bundle.check_against(spec)?;
    let rec = mdp::recompute(spec, bundle)?;
    let (reach, escapes) = mdp::on_path(spec, bundle);
    let mut cells = Vec::new();
    for (t, checks) in rec.cells.iter().enumerate() {
        for (cell, c) in checks.iter().enumerate() {
            cells.push(CellReport {
                time: t,
                cell,
                on_path: reach[t][cell],
                stage_gap: c.stage_gap,
                deviation_gap: c.deviation_gap,
                residual: c.residual,
                value_error: c.value_error,
                error: c.error.clone(),
            });
        }
    }

    let mut rollouts = Vec::new();
    if tol.rollout_samples > 0 && bundle.horizon() > 0 {
        let layout = &bundle.layer(0).layout;
        let mut chosen: Vec<usize> = Vec::new();
        for c in (0..spec.num_public(0)).filter(|&c| spec.initial_public[c] > 0.0) {
            if let Ok(cell) = layout.nearest(&CibState::initial(spec, c)) {
                if !chosen.contains(&cell) {
                    chosen.push(cell);
                }
            }
        }
        let candidates: Vec<usize> = (0..layout.num_cells()).filter(|c| !chosen.contains(c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(tol.seed);
        let extra = tol.rollout_cells.saturating_sub(chosen.len());
        chosen.extend(candidates.choose_multiple(&mut rng, extra).copied());
        chosen.truncate(tol.rollout_cells.max(1));
        rollouts = rollout::rollouts(spec, bundle, 0, &chosen, tol.rollout_samples, tol.rollout_se, tol.seed)?;
    }

    let mut checks = Vec::new();
    let mut push = |name, (value, at): (f64, Option<(usize, usize)>), tolerance: f64| {
        checks.push(Check { name, value, tolerance, at, passed: value <= tolerance });
    };
    push("deviation gap", worst(&cells, |c| c.deviation_gap), tol.epsilon);
    push("stage gap", worst(&cells, |c| c.stage_gap), tol.epsilon);
    push("update consistency", worst(&cells, |c| c.residual), tol.consistency);
    let all_cells =
        cells.iter().fold((0.0, None), |(v, at), c| if c.value_error > v { (c.value_error, Some((c.time, c.cell))) } else { (v, at) });
    push("value recomputation", all_cells, tol.value);
    push("layout escapes", (escapes.len() as f64, escapes.first().copied()), 0.0);
    let errors = cells.iter().filter(|c| c.error.is_some()).count();
    push("cell errors", (errors as f64, cells.iter().find(|c| c.error.is_some()).map(|c| (c.time, c.cell))), 0.0);
    let failed = rollouts.iter().filter(|r| !r.passed).count();
    push("rollouts", (failed as f64, rollouts.iter().find(|r| !r.passed).map(|r| (r.time, r.cell))), 0.0);

    let on = cells.iter().filter(|c| c.on_path).count();
    let certified_set = match (&bundle.layer(0).layout, bundle.resolution) {
        (Layout::Tree(_), _) => format!("every node of the reachable belief tree ({} nodes), exact", cells.len()),
        (Layout::Grid(g), m) => format!(
            "cells of the resolution-{} belief grid reachable on path from any first-time cell ({on} of {}); \
             deviations are CIB deviations evaluated with {:?} interpolation on the same grid",
            m.unwrap_or(0),
            cells.len(),
            g.interpolation
        ),
    };
    Ok(VerifyReport { spec_name: spec.name.clone(), certified_set, cells, rollouts, escapes, checks })
}

#[cfg(test)]
mod tests;
