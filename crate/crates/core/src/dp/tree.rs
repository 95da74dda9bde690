//! Exact layers holding only explicitly listed common-information states.

use std::collections::HashMap;

use crate::belief::CibState;
use crate::error::{Error, Result};

use super::grid::StencilScratch;

/// States of one time, looked up by the exact bit patterns of their
/// coordinates.
#[derive(Clone, Debug, Default)]
pub struct TreeLayout {
    pub time: usize,
    nodes: Vec<CibState>,
    index: HashMap<Vec<u64>, usize>,
}

fn push_bits(key: &mut Vec<u64>, values: &[f64]) {
    // +0.0 and -0.0 are the same belief
    key.extend(values.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }));
}

pub(crate) fn state_key(c: usize, pi: &[f64], pi_hat: &[f64], key: &mut Vec<u64>) {
    key.clear();
    key.push(c as u64);
    push_bits(key, pi);
    push_bits(key, pi_hat);
}

impl TreeLayout {
    pub fn new(time: usize) -> Self {
        Self { time, ..Self::default() }
    }

    /// Add a state unless present; returns its cell.
    pub fn insert(&mut self, b: CibState) -> usize {
        let mut key = Vec::new();
        state_key(b.public, b.pi.data(), b.pi_hat.data(), &mut key);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.nodes.len();
        self.nodes.push(b);
        self.index.insert(key, i);
        i
    }

    pub fn num_cells(&self) -> usize {
        self.nodes.len()
    }

    pub fn state(&self, cell: usize) -> &CibState {
        &self.nodes[cell]
    }

    pub fn states(&self) -> &[CibState] {
        &self.nodes
    }

    pub fn find(&self, c: usize, pi: &[f64], pi_hat: &[f64], ws: &mut StencilScratch) -> Option<usize> {
        state_key(c, pi, pi_hat, &mut ws.key);
        self.index.get(ws.key.as_slice()).copied()
    }

    pub fn locate(&self, c: usize, pi: &[f64], pi_hat: &[f64], ws: &mut StencilScratch, out: &mut Vec<(usize, f64)>) -> Result<()> {
        out.clear();
        match self.find(c, pi, pi_hat, ws) {
            Some(i) => {
                out.push((i, 1.0));
                Ok(())
            }
            None => Err(Error::Bundle(format!(
                "state (public {}, beliefs {:?} / {:?}) at time {} is not in the tree",
                c,
                pi,
                pi_hat,
                self.time + 1
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::BeliefVector;

    #[test]
    fn insert_deduplicates_and_locates_exactly() {
        let mut t = TreeLayout::new(1);
        let b = BeliefVector::from_marginals(1, &[vec![0.25, 0.75]]);
        let s = CibState::new(0, b.clone(), b.clone());
        assert_eq!(t.insert(s.clone()), 0);
        assert_eq!(t.insert(s), 0);
        let neg = BeliefVector::from_marginals(1, &[vec![-0.0, 1.0]]);
        assert_eq!(t.insert(CibState::new(0, neg.clone(), neg)), 1);
        let mut ws = StencilScratch::default();
        let mut out = Vec::new();
        t.locate(0, &[0.0, 1.0], &[0.0, 1.0], &mut ws, &mut out).unwrap();
        assert_eq!(out, vec![(1, 1.0)]);
        assert!(t.locate(0, &[0.5, 0.5], &[0.5, 0.5], &mut ws, &mut out).is_err());
    }
}
