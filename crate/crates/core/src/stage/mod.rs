//! One-shot Bayesian stage games and their consistent equilibria.

mod context;
pub mod nash;
mod solve;

pub use context::{build_stage_game, value_update, Continuation, StageContext};
pub use solve::{
    cell_seed, certify, certify_with_update, enumerate_stage, solve_bne_consistent, solve_stage, SolveMethod, SolverConfig, StageSolution,
};

use crate::belief::BeliefVector;
use crate::error::{Error, Result};
use crate::model::Radix;
use crate::strategy::StrategySlice;

/// Relative tolerance under which two payoffs count as tied.
pub const TIE_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn ties(best: f64, v: f64) -> bool {
    best - v <= TIE_TOL * (1.0 + best.abs())
}

/// Expected payoffs `E[U^n | x^n, a^n]` for every agent, own type and own action.
#[derive(Clone, Debug, Default)]
pub struct Payoffs {
    num_actions: Vec<usize>,
    data: Vec<Vec<f64>>,
}

impl Payoffs {
    #[inline]
    pub fn get(&self, n: usize, x: usize, a: usize) -> f64 {
        self.data[n][x * self.num_actions[n] + a]
    }

    pub fn row(&self, n: usize, x: usize) -> &[f64] {
        let k = self.num_actions[n];
        &self.data[n][x * k..(x + 1) * k]
    }
}

/// A type profile and action profile at which every agent's action is admissible.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Pair {
    pub x: usize,
    pub a: usize,
}

/// Stage game at one common-information state: the prior over type
/// profiles and each agent's total payoff for every admissible
/// `(type profile, action profile)`.
#[derive(Clone, Debug)]
pub struct StageGame {
    pub time: usize,
    pub prior: BeliefVector,
    pub(crate) xr: Radix,
    pub(crate) ar: Radix,
    /// `[x * N + n]`
    pub(crate) xdig: Vec<usize>,
    /// `[a * N + n]`
    pub(crate) adig: Vec<usize>,
    /// `[n][x]` admissible actions
    pub(crate) admissible: Vec<Vec<Vec<usize>>>,
    pub(crate) pairs: Vec<Pair>,
    /// `[n][x * |A| + a]`, zero at inadmissible pairs
    pub(crate) payoff: Vec<Vec<f64>>,
}

impl StageGame {
    pub fn num_agents(&self) -> usize {
        self.xr.sizes().len()
    }

    pub fn num_states(&self, n: usize) -> usize {
        self.xr.size(n)
    }

    pub fn num_actions(&self, n: usize) -> usize {
        self.ar.size(n)
    }

    pub fn admissible(&self, n: usize, x: usize) -> &[usize] {
        &self.admissible[n][x]
    }

    /// Total payoff of agent `n` at joint type `x` and joint action `a`.
    pub fn payoff(&self, n: usize, x: usize, a: usize) -> f64 {
        self.payoff[n][x * self.ar.len() + a]
    }

    pub fn new_payoffs(&self) -> Payoffs {
        let nn = self.num_agents();
        Payoffs {
            num_actions: (0..nn).map(|n| self.ar.size(n)).collect(),
            data: (0..nn).map(|n| vec![0.0; self.xr.size(n) * self.ar.size(n)]).collect(),
        }
    }

    /// Fill `out` with expected payoffs against `slice`, opponents' types
    /// drawn independently from the prior.
    pub fn expected_payoffs_into(&self, slice: &StrategySlice, out: &mut Payoffs) {
        let nn = self.num_agents();
        for d in out.data.iter_mut() {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let na = self.ar.len();
        let mut f = [0f64; 32];
        assert!(nn <= 32);
        for p in &self.pairs {
            let xd = &self.xdig[p.x * nn..(p.x + 1) * nn];
            let ad = &self.adig[p.a * nn..(p.a + 1) * nn];
            let mut zeros = 0;
            let mut prod = 1.0;
            for k in 0..nn {
                f[k] = self.prior.marginal(k)[xd[k]] * slice.prob(k, xd[k], ad[k]);
                if f[k] == 0.0 {
                    zeros += 1;
                } else {
                    prod *= f[k];
                }
            }
            if zeros > 1 {
                continue;
            }
            for n in 0..nn {
                let w = if zeros == 1 {
                    if f[n] != 0.0 {
                        continue;
                    }
                    prod
                } else {
                    // product over the others, recomputed to avoid division error
                    let mut w = 1.0;
                    for k in 0..nn {
                        if k != n {
                            w *= f[k];
                        }
                    }
                    w
                };
                out.data[n][xd[n] * out.num_actions[n] + ad[n]] += w * self.payoff[n][p.x * na + p.a];
            }
        }
    }

    pub fn expected_payoffs(&self, slice: &StrategySlice) -> Payoffs {
        let mut out = self.new_payoffs();
        self.expected_payoffs_into(slice, &mut out);
        out
    }

    /// `E[U^n | x^n, a^n]` against the opponents' part of `slice`.
    pub fn expected_payoff(&self, n: usize, x: usize, a: usize, slice: &StrategySlice) -> Result<f64> {
        if !self.admissible[n][x].contains(&a) {
            return Err(Error::Shape(format!("action {} is not admissible for agent {} at state {}", a + 1, n + 1, x + 1)));
        }
        Ok(self.expected_payoffs(slice).get(n, x, a))
    }

    /// Per-type maximizing action sets (ties within [`TIE_TOL`]) and values.
    pub fn best_response(&self, n: usize, slice: &StrategySlice) -> Vec<BestResponse> {
        let ep = self.expected_payoffs(slice);
        best_response_from(self, n, &ep)
    }

    /// Largest gain any type of any agent gets from deviating to a best response.
    pub fn bne_gap(&self, slice: &StrategySlice) -> f64 {
        let ep = self.expected_payoffs(slice);
        self.gap_from(slice, &ep)
    }

    pub fn gap_from(&self, slice: &StrategySlice, ep: &Payoffs) -> f64 {
        let mut gap = 0.0f64;
        for n in 0..self.num_agents() {
            for x in 0..self.num_states(n) {
                let adm = &self.admissible[n][x];
                let best = adm.iter().map(|&a| ep.get(n, x, a)).fold(f64::NEG_INFINITY, f64::max);
                let cur: f64 = adm.iter().map(|&a| slice.prob(n, x, a) * ep.get(n, x, a)).sum();
                gap = gap.max(best - cur);
            }
        }
        gap
    }

    /// `E[U^n | x^n]` when everyone follows `slice`.
    pub fn value_update(&self, slice: &StrategySlice) -> Vec<Vec<f64>> {
        let ep = self.expected_payoffs(slice);
        self.values_from(slice, &ep)
    }

    pub fn values_from(&self, slice: &StrategySlice, ep: &Payoffs) -> Vec<Vec<f64>> {
        (0..self.num_agents())
            .map(|n| {
                (0..self.num_states(n))
                    .map(|x| self.admissible[n][x].iter().map(|&a| slice.prob(n, x, a) * ep.get(n, x, a)).sum())
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestResponse {
    /// Maximizing actions, ascending.
    pub actions: Vec<usize>,
    pub value: f64,
}

pub(crate) fn best_response_from(game: &StageGame, n: usize, ep: &Payoffs) -> Vec<BestResponse> {
    (0..game.num_states(n))
        .map(|x| {
            let adm = &game.admissible[n][x];
            let value = adm.iter().map(|&a| ep.get(n, x, a)).fold(f64::NEG_INFINITY, f64::max);
            let actions = adm.iter().copied().filter(|&a| ties(value, ep.get(n, x, a))).collect();
            BestResponse { actions, value }
        })
        .collect()
}

#[cfg(test)]
mod tests;
