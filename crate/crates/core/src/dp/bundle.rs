//! Solved layers and the equilibrium bundle.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief::CibState;
use crate::error::{Error, Result};
use crate::model::{spec_to_toml, GameSpec};
use crate::stage::{Continuation, SolveMethod, SolverConfig, StageSolution};
use crate::strategy::{StrategySlice, UpdateSlice};

use super::grid::HatMode;
use super::layer::{Layout, ValueTable};

/// Certificates of one solved cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCertificate {
    pub gap: f64,
    pub residual: f64,
    pub method: SolveMethod,
    pub converged: bool,
}

/// Everything stored for one time.
#[derive(Clone, Debug)]
pub struct Layer {
    pub layout: Layout,
    pub strategies: Vec<StrategySlice>,
    /// Empty at the last time.
    pub updates: Vec<UpdateSlice>,
    /// One table per agent.
    pub values: Vec<ValueTable>,
    pub certificates: Vec<CellCertificate>,
}

impl Layer {
    pub fn time(&self) -> usize {
        self.layout.time()
    }

    pub fn num_cells(&self) -> usize {
        self.layout.num_cells()
    }

    pub fn continuation(&self) -> Continuation<'_> {
        Continuation { layout: &self.layout, values: &self.values }
    }

    pub fn update(&self, cell: usize) -> Option<&UpdateSlice> {
        self.updates.get(cell)
    }

    pub(crate) fn from_solutions(layout: Layout, num_agents: usize, solutions: Vec<StageSolution>) -> Self {
        let t = layout.time();
        let cells = solutions.len();
        let mut values: Vec<ValueTable> = (0..num_agents)
            .map(|n| {
                let k = solutions.first().map_or(0, |s| s.values[n].len());
                ValueTable::zeros(t, n, k, cells)
            })
            .collect();
        let mut strategies = Vec::with_capacity(cells);
        let mut updates = Vec::new();
        let mut certificates = Vec::with_capacity(cells);
        for (cell, s) in solutions.into_iter().enumerate() {
            for (n, table) in values.iter_mut().enumerate() {
                table.cell_mut(cell).copy_from_slice(&s.values[n]);
            }
            certificates.push(CellCertificate { gap: s.gap, residual: s.residual, method: s.method, converged: s.converged });
            strategies.push(s.strategy);
            if let Some(u) = s.update {
                updates.push(u);
            }
        }
        Self { layout, strategies, updates, values, certificates }
    }
}

/// A solved common-information dynamic program: per-time layers of cells
/// with strategy slices, update slices, values and certificates.
#[derive(Clone, Debug)]
pub struct EquilibriumBundle {
    pub spec_name: String,
    /// SHA-256 of the canonical model file.
    pub fingerprint: String,
    pub config: SolverConfig,
    /// Grid resolution; `None` for exact tree layers.
    pub resolution: Option<usize>,
    /// Indexed by time.
    pub layers: Vec<Layer>,
}

/// Hex SHA-256 of the canonical TOML form of `spec`.
pub fn spec_fingerprint(spec: &GameSpec) -> String {
    let digest = Sha256::digest(spec_to_toml(spec).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl EquilibriumBundle {
    pub fn horizon(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, t: usize) -> &Layer {
        &self.layers[t]
    }

    /// Continuation through the values of time `t + 1`, `None` past the end.
    pub fn continuation(&self, t: usize) -> Option<Continuation<'_>> {
        self.layers.get(t + 1).map(Layer::continuation)
    }

    /// `(time, cell)` of every cell whose search failed.
    pub fn failed_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (t, l) in self.layers.iter().enumerate() {
            for (c, cert) in l.certificates.iter().enumerate() {
                if !cert.converged {
                    out.push((t, c));
                }
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.layers.iter().all(|l| l.certificates.iter().all(|c| c.converged))
    }

    pub fn worst_gap(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.certificates.iter().map(|c| c.gap)).fold(0.0, f64::max)
    }

    pub fn worst_residual(&self) -> f64 {
        self.layers.iter().flat_map(|l| l.certificates.iter().map(|c| c.residual)).fold(0.0, f64::max)
    }

    /// Cell whose strategy is played at `b`.
    pub fn cell_at(&self, b: &CibState) -> Result<usize> {
        let layer = self.layers.get(b.time()).ok_or_else(|| Error::Bundle(format!("no layer for time {}", b.time() + 1)))?;
        layer.layout.nearest(b)
    }

    pub fn hat_modes(&self) -> Vec<Option<HatMode>> {
        self.layers
            .iter()
            .map(|l| match &l.layout {
                Layout::Grid(g) => Some(g.mode),
                Layout::Tree(_) => None,
            })
            .collect()
    }

    /// Check that the bundle was produced for `spec` and has consistent shapes.
    pub fn check_against(&self, spec: &GameSpec) -> Result<()> {
        if self.fingerprint != spec_fingerprint(spec) {
            return Err(Error::Bundle("bundle was produced for a different model".into()));
        }
        if self.layers.len() != spec.horizon {
            return Err(Error::Bundle(format!("bundle has {} layers for horizon {}", self.layers.len(), spec.horizon)));
        }
        for (t, l) in self.layers.iter().enumerate() {
            let cells = l.num_cells();
            let last = t + 1 == spec.horizon;
            if l.time() != t
                || l.strategies.len() != cells
                || l.certificates.len() != cells
                || l.updates.len() != if last { 0 } else { cells }
                || l.values.len() != spec.num_agents
            {
                return Err(Error::Bundle(format!("layer {} has inconsistent sizes", t + 1)));
            }
            for (n, v) in l.values.iter().enumerate() {
                if v.num_states != spec.num_local(n, t) || v.num_cells() != cells {
                    return Err(Error::Bundle(format!("value table of agent {} at time {} has the wrong shape", n + 1, t + 1)));
                }
            }
            for s in &l.strategies {
                s.check(spec, 1e-9)?;
            }
        }
        Ok(())
    }
}
