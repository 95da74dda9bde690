//! Cell layouts of one time and value tables over them.

use serde::{Deserialize, Serialize};

use crate::belief::CibState;
use crate::error::{Error, Result};

use super::grid::{GridLayout, StencilScratch};
use super::tree::TreeLayout;

/// The cells at which one time's quantities are stored.
#[derive(Clone, Debug)]
pub enum Layout {
    Grid(GridLayout),
    Tree(TreeLayout),
}

impl Layout {
    pub fn time(&self) -> usize {
        match self {
            Layout::Grid(g) => g.time,
            Layout::Tree(t) => t.time,
        }
    }

    pub fn num_cells(&self) -> usize {
        match self {
            Layout::Grid(g) => g.num_cells(),
            Layout::Tree(t) => t.num_cells(),
        }
    }

    pub fn state(&self, cell: usize) -> CibState {
        match self {
            Layout::Grid(g) => g.state(cell),
            Layout::Tree(t) => t.state(cell).clone(),
        }
    }

    pub fn is_tree(&self) -> bool {
        matches!(self, Layout::Tree(_))
    }

    /// Cells and weights through which a value at `(c, pi, pi_hat)` is
    /// read. Beliefs are given agent by agent in flat slices.
    pub fn locate(&self, c: usize, pi: &[f64], pi_hat: &[f64], ws: &mut StencilScratch, out: &mut Vec<(usize, f64)>) -> Result<()> {
        match self {
            Layout::Grid(g) => {
                g.locate(c, pi, pi_hat, ws, out);
                Ok(())
            }
            Layout::Tree(t) => t.locate(c, pi, pi_hat, ws, out),
        }
    }

    /// The single cell used to represent `b` when a strategy must be read
    /// off a layout: the heaviest stencil vertex on a grid, the exact node
    /// in a tree.
    pub fn nearest(&self, b: &CibState) -> Result<usize> {
        let mut ws = StencilScratch::default();
        let mut out = Vec::new();
        self.locate(b.public, b.pi.data(), b.pi_hat.data(), &mut ws, &mut out)?;
        out.iter()
            .copied()
            .fold(None, |best: Option<(usize, f64)>, (c, w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((c, w)),
            })
            .map(|(c, _)| c)
            .ok_or_else(|| Error::Bundle("empty stencil".into()))
    }
}

/// Values `V^n_t(x, b)` of one agent at one time, for every cell and local state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub time: usize,
    pub agent: usize,
    pub num_states: usize,
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(time: usize, agent: usize, num_states: usize, cells: usize) -> Self {
        Self { time, agent, num_states, values: vec![0.0; num_states * cells] }
    }

    pub fn num_cells(&self) -> usize {
        self.values.len() / self.num_states.max(1)
    }

    #[inline]
    pub fn get(&self, cell: usize, x: usize) -> f64 {
        self.values[cell * self.num_states + x]
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.num_states..(cell + 1) * self.num_states]
    }

    pub fn cell_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.values[cell * self.num_states..(cell + 1) * self.num_states]
    }
}

/// Value at an arbitrary state, read through the layout's interpolation.
pub fn value_eval(layout: &Layout, table: &ValueTable, x: usize, b: &CibState) -> Result<f64> {
    if table.time != layout.time() || b.time() != layout.time() {
        return Err(Error::Shape(format!("value table for time {} queried at time {}", table.time + 1, b.time() + 1)));
    }
    if x >= table.num_states || table.num_cells() != layout.num_cells() {
        return Err(Error::Shape("value table does not match the layout".into()));
    }
    let mut ws = StencilScratch::default();
    let mut out = Vec::new();
    layout.locate(b.public, b.pi.data(), b.pi_hat.data(), &mut ws, &mut out)?;
    Ok(out.iter().map(|&(c, w)| w * table.get(c, x)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::BeliefVector;
    use crate::dp::grid::{HatMode, Interpolation};
    use crate::games::mac::{mac_spec, MacParams};

    fn linear_table(layout: &Layout) -> ValueTable {
        let mut t = ValueTable::zeros(layout.time(), 0, 2, layout.num_cells());
        for cell in 0..layout.num_cells() {
            let b = layout.state(cell);
            let v = 0.3 + 2.0 * b.pi.marginal(0)[1] - 1.5 * b.pi.marginal(1)[1];
            t.cell_mut(cell).copy_from_slice(&[v, -v]);
        }
        t
    }

    fn state(p0: f64, p1: f64) -> CibState {
        let b = BeliefVector::from_marginals(1, &[vec![1.0 - p0, p0], vec![1.0 - p1, p1]]);
        CibState::new(0, b.clone(), b)
    }

    #[test]
    fn grid_values_are_exact_and_linear_functions_are_reproduced() {
        let spec = mac_spec(&MacParams::default());
        let layout = Layout::Grid(GridLayout::new(&spec, 1, 10, HatMode::Ignored, Interpolation::Multilinear).unwrap());
        let table = linear_table(&layout);
        for cell in [0, 17, 120] {
            let b = layout.state(cell);
            assert_eq!(value_eval(&layout, &table, 1, &b).unwrap(), table.get(cell, 1));
        }
        let v = value_eval(&layout, &table, 0, &state(0.35, 0.55)).unwrap();
        assert!((v - (0.3 + 0.7 - 1.5 * 0.55)).abs() < 1e-12);
    }

    #[test]
    fn nearest_mode_snaps_to_the_corner() {
        let spec = mac_spec(&MacParams::default());
        let layout = Layout::Grid(GridLayout::new(&spec, 1, 10, HatMode::Ignored, Interpolation::Nearest).unwrap());
        let table = linear_table(&layout);
        let v = value_eval(&layout, &table, 0, &state(0.04, 0.3)).unwrap();
        assert_eq!(v, value_eval(&layout, &table, 0, &state(0.0, 0.3)).unwrap());
    }
}
