//! One stage of a CIB strategy profile and of a CIB belief-update rule,
//! both evaluated at a fixed common-information state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GameSpec;

/// Per-agent, per-local-state action distributions at one `(t, b_t)`.
///
/// Distributions are stored over the full action alphabet of the agent;
/// inadmissible actions carry probability zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySlice {
    pub time: usize,
    num_states: Vec<usize>,
    num_actions: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl StrategySlice {
    pub fn from_fn(spec: &GameSpec, t: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let nn = spec.num_agents;
        let num_states: Vec<usize> = (0..nn).map(|n| spec.num_local(n, t)).collect();
        let num_actions: Vec<usize> = (0..nn).map(|n| spec.num_actions(n, t)).collect();
        let mut offsets = Vec::with_capacity(nn);
        let mut data = Vec::new();
        for n in 0..nn {
            offsets.push(data.len());
            for x in 0..num_states[n] {
                for a in 0..num_actions[n] {
                    data.push(if spec.is_admissible(n, t, x, a) { f(n, x, a) } else { 0.0 });
                }
            }
        }
        Self { time: t, num_states, num_actions, offsets, data }
    }

    /// Uniform over the admissible set of every local state.
    pub fn uniform(spec: &GameSpec, t: usize) -> Self {
        Self::from_fn(spec, t, |n, x, _| 1.0 / spec.admissible[n][t][x].len() as f64)
    }

    /// Deterministic slice; `choice(n, x)` must be admissible.
    pub fn pure(spec: &GameSpec, t: usize, choice: impl Fn(usize, usize) -> usize) -> Self {
        Self::from_fn(spec, t, |n, x, a| if choice(n, x) == a { 1.0 } else { 0.0 })
    }

    pub fn num_agents(&self) -> usize {
        self.num_states.len()
    }

    pub fn num_states(&self, n: usize) -> usize {
        self.num_states[n]
    }

    pub fn num_actions(&self, n: usize) -> usize {
        self.num_actions[n]
    }

    #[inline]
    pub fn dist(&self, n: usize, x: usize) -> &[f64] {
        let s = self.offsets[n] + x * self.num_actions[n];
        &self.data[s..s + self.num_actions[n]]
    }

    pub fn dist_mut(&mut self, n: usize, x: usize) -> &mut [f64] {
        let s = self.offsets[n] + x * self.num_actions[n];
        &mut self.data[s..s + self.num_actions[n]]
    }

    #[inline]
    pub fn prob(&self, n: usize, x: usize, a: usize) -> f64 {
        self.data[self.offsets[n] + x * self.num_actions[n] + a]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Largest absolute difference between corresponding probabilities.
    pub fn distance(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Largest variation of an agent's distribution across its local states.
    pub fn pooling_variation(&self) -> f64 {
        let mut worst = 0.0f64;
        for n in 0..self.num_agents() {
            for x in 1..self.num_states[n] {
                for a in 0..self.num_actions[n] {
                    worst = worst.max((self.prob(n, x, a) - self.prob(n, 0, a)).abs());
                }
            }
        }
        worst
    }

    /// The slice with agents 0 and 1 exchanged.
    pub fn swapped(&self) -> Self {
        assert_eq!(self.num_agents(), 2, "agent swap needs two agents");
        let mut out = self.clone();
        let (a0, a1) = (self.dist_block(0).to_vec(), self.dist_block(1).to_vec());
        out.num_states.swap(0, 1);
        out.num_actions.swap(0, 1);
        out.offsets = vec![0, a1.len()];
        out.data = a1.into_iter().chain(a0).collect();
        out
    }

    fn dist_block(&self, n: usize) -> &[f64] {
        let end = if n + 1 < self.offsets.len() { self.offsets[n + 1] } else { self.data.len() };
        &self.data[self.offsets[n]..end]
    }

    /// Check support on admissible actions and normalization.
    pub fn check(&self, spec: &GameSpec, tol: f64) -> Result<()> {
        for n in 0..self.num_agents() {
            for x in 0..self.num_states[n] {
                let d = self.dist(n, x);
                let s: f64 = d.iter().sum();
                let bad_support =
                    d.iter().enumerate().any(|(a, &p)| p < 0.0 || !p.is_finite() || (p > 0.0 && !spec.is_admissible(n, self.time, x, a)));
                if bad_support || (s - 1.0).abs() > tol {
                    return Err(Error::Shape(format!(
                        "strategy of agent {} at state {} (time {}) is not a distribution over admissible actions",
                        n + 1,
                        x + 1,
                        self.time + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Next-period strategic beliefs `psi^n(y^n, a)` for every agent, own
/// observation and joint action profile at one `(t, b_t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateSlice {
    pub time: usize,
    num_obs: Vec<usize>,
    num_profiles: usize,
    num_next: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl UpdateSlice {
    pub fn zeros(spec: &GameSpec, t: usize) -> Self {
        let nn = spec.num_agents;
        let num_obs: Vec<usize> = (0..nn).map(|n| spec.observations[n][t].len()).collect();
        let num_next: Vec<usize> = (0..nn).map(|n| spec.num_local(n, t + 1)).collect();
        let num_profiles = spec.action_radix(t).len();
        let mut offsets = Vec::with_capacity(nn);
        let mut len = 0;
        for n in 0..nn {
            offsets.push(len);
            len += num_obs[n] * num_profiles * num_next[n];
        }
        Self { time: t, num_obs, num_profiles, num_next, offsets, data: vec![0.0; len] }
    }

    pub fn num_agents(&self) -> usize {
        self.num_obs.len()
    }

    pub fn num_obs(&self, n: usize) -> usize {
        self.num_obs[n]
    }

    pub fn num_profiles(&self) -> usize {
        self.num_profiles
    }

    pub fn num_next(&self, n: usize) -> usize {
        self.num_next[n]
    }

    #[inline]
    pub fn next(&self, n: usize, y: usize, a: usize) -> &[f64] {
        let s = self.offsets[n] + (y * self.num_profiles + a) * self.num_next[n];
        &self.data[s..s + self.num_next[n]]
    }

    #[inline]
    pub fn next_mut(&mut self, n: usize, y: usize, a: usize) -> &mut [f64] {
        let s = self.offsets[n] + (y * self.num_profiles + a) * self.num_next[n];
        &mut self.data[s..s + self.num_next[n]]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::mac::{mac_spec, MacParams};

    #[test]
    fn uniform_respects_admissibility() {
        let spec = mac_spec(&MacParams::default());
        let s = StrategySlice::uniform(&spec, 0);
        assert_eq!(s.dist(0, 0), &[1.0, 0.0]);
        assert_eq!(s.dist(1, 1), &[0.5, 0.5]);
        s.check(&spec, 1e-12).unwrap();
    }

    #[test]
    fn swapping_twice_is_identity() {
        let spec = mac_spec(&MacParams::default());
        let s = StrategySlice::from_fn(&spec, 0, |n, x, a| if x == 1 { [0.3, 0.7, 0.9, 0.1][2 * n + a] } else { 1.0 - a as f64 });
        assert_eq!(s.swapped().dist(0, 1), s.dist(1, 1));
        assert_eq!(s.swapped().swapped(), s);
    }

    #[test]
    fn pooling_variation_detects_type_dependence() {
        let spec = mac_spec(&MacParams::default());
        let s = StrategySlice::uniform(&spec, 0);
        assert_eq!(s.pooling_variation(), 0.5);
    }
}
