//! Product-form common beliefs and their updates.
//!
//! Two updates are provided. The signaling-free step conditions only on
//! observations and on admissibility of the observed actions, never on a
//! strategy. The consistent update additionally weighs each local state by
//! the probability that the strategy slice plays the observed action there.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GameSpec, InitialPrior, Radix, STOCHASTIC_TOL};
use crate::strategy::StrategySlice;

/// Per-agent distributions over local states at one time. The joint belief
/// they represent is the product of the marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector {
    pub time: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl BeliefVector {
    /// Build and validate.
    pub fn new(time: usize, marginals: Vec<Vec<f64>>) -> Result<Self> {
        let b = Self::from_marginals(time, &marginals);
        b.check(STOCHASTIC_TOL)?;
        Ok(b)
    }

    pub fn from_marginals(time: usize, marginals: &[Vec<f64>]) -> Self {
        let mut offsets = Vec::with_capacity(marginals.len());
        let mut data = Vec::new();
        for m in marginals {
            offsets.push(data.len());
            data.extend_from_slice(m);
        }
        Self { time, offsets, data }
    }

    pub fn from_flat(time: usize, sizes: &[usize], data: Vec<f64>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for s in sizes {
            offsets.push(acc);
            acc += s;
        }
        assert_eq!(acc, data.len(), "belief data does not match the alphabet sizes");
        Self { time, offsets, data }
    }

    /// Marginals of the initial prior.
    pub fn prior(spec: &GameSpec) -> Self {
        Self::from_marginals(0, &spec.initial_marginals())
    }

    pub fn uniform(spec: &GameSpec, t: usize) -> Self {
        let m: Vec<Vec<f64>> = (0..spec.num_agents)
            .map(|n| {
                let k = spec.num_local(n, t);
                vec![1.0 / k as f64; k]
            })
            .collect();
        Self::from_marginals(t, &m)
    }

    pub fn num_agents(&self) -> usize {
        self.offsets.len()
    }

    pub fn size(&self, n: usize) -> usize {
        let end = self.offsets.get(n + 1).copied().unwrap_or(self.data.len());
        end - self.offsets[n]
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.num_agents()).map(|n| self.size(n)).collect()
    }

    #[inline]
    pub fn marginal(&self, n: usize) -> &[f64] {
        &self.data[self.offsets[n]..self.offsets[n] + self.size(n)]
    }

    pub fn marginal_mut(&mut self, n: usize) -> &mut [f64] {
        let s = self.size(n);
        &mut self.data[self.offsets[n]..self.offsets[n] + s]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn marginals(&self) -> Vec<Vec<f64>> {
        (0..self.num_agents()).map(|n| self.marginal(n).to_vec()).collect()
    }

    /// Probability of the joint local-state profile `x` under the product.
    pub fn joint_prob(&self, radix: &Radix, x: usize) -> f64 {
        (0..self.num_agents()).map(|n| self.marginal(n)[radix.digit(x, n)]).product()
    }

    pub fn joint(&self, radix: &Radix) -> Vec<f64> {
        (0..radix.len()).map(|x| self.joint_prob(radix, x)).collect()
    }

    /// Largest per-agent total-variation distance.
    pub fn total_variation(&self, other: &Self) -> f64 {
        (0..self.num_agents())
            .map(|n| 0.5 * self.marginal(n).iter().zip(other.marginal(n)).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        for n in 0..self.num_agents() {
            let m = self.marginal(n);
            let s: f64 = m.iter().sum();
            if m.iter().any(|p| !p.is_finite() || *p < 0.0) || (s - 1.0).abs() > tol {
                return Err(Error::Shape(format!("belief of agent {} at time {} is not a distribution: {:?}", n + 1, self.time + 1, m)));
            }
        }
        Ok(())
    }

    /// The belief with agents 0 and 1 exchanged.
    pub fn swapped(&self) -> Self {
        assert_eq!(self.num_agents(), 2, "agent swap needs two agents");
        Self::from_marginals(self.time, &[self.marginal(1).to_vec(), self.marginal(0).to_vec()])
    }
}

/// The common-information state: public state plus strategic and
/// signaling-free beliefs over the same time index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CibState {
    pub public: usize,
    pub pi: BeliefVector,
    pub pi_hat: BeliefVector,
}

impl CibState {
    pub fn new(public: usize, pi: BeliefVector, pi_hat: BeliefVector) -> Self {
        debug_assert_eq!(pi.time, pi_hat.time);
        Self { public, pi, pi_hat }
    }

    /// The state at time 0 with both beliefs equal to the prior.
    pub fn initial(spec: &GameSpec, public: usize) -> Self {
        let p = BeliefVector::prior(spec);
        Self { public, pi: p.clone(), pi_hat: p }
    }

    pub fn time(&self) -> usize {
        self.pi.time
    }

    pub fn swapped(&self) -> Self {
        Self { public: self.public, pi: self.pi.swapped(), pi_hat: self.pi_hat.swapped() }
    }
}

/// One agent's Bayes step: `out[x'] ∝ Σ_x p(x'|x,a) q(y|x,a) w(x) prior(x)`,
/// restricted to states where the agent's component of `a` is admissible.
///
/// Returns the denominator `Σ_x q(y|x,a) w(x) prior(x)`. `out` is zeroed
/// first and normalized only when the denominator is positive.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bayes_step(
    spec: &GameSpec,
    t: usize,
    n: usize,
    prior: &[f64],
    y: usize,
    a: usize,
    weight: impl Fn(usize) -> f64,
    out: &mut [f64],
) -> f64 {
    let own = spec.action_radix(t).digit(a, n);
    bayes_step_own(spec, t, n, prior, y, a, own, weight, out)
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn bayes_step_own(
    spec: &GameSpec,
    t: usize,
    n: usize,
    prior: &[f64],
    y: usize,
    a: usize,
    own: usize,
    weight: impl Fn(usize) -> f64,
    out: &mut [f64],
) -> f64 {
    let pk = &spec.local_kernel[n][t];
    let qk = &spec.obs_kernel[n][t];
    let mut den = 0.0;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (x, &px) in prior.iter().enumerate() {
        if px == 0.0 || !spec.is_admissible(n, t, x, own) {
            continue;
        }
        let w = qk.get(x, a, y) * weight(x) * px;
        if w == 0.0 {
            continue;
        }
        den += w;
        for (o, p) in out.iter_mut().zip(pk.row(x, a)) {
            *o += p * w;
        }
    }
    if den > 0.0 {
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
    }
    den
}

/// Signaling-free step for one agent. Returns false when the observation is
/// impossible under the belief and action profile.
pub fn signaling_free_agent(spec: &GameSpec, t: usize, n: usize, pi_hat: &[f64], y: usize, a: usize, out: &mut [f64]) -> bool {
    bayes_step(spec, t, n, pi_hat, y, a, |_| 1.0, out) > 0.0
}

fn check_step(spec: &GameSpec, t: usize, y: &[usize], a: usize) -> Result<()> {
    if t + 1 >= spec.horizon {
        return Err(Error::Shape(format!("no belief update after the last time {}", t + 1)));
    }
    if y.len() != spec.num_agents || a >= spec.action_radix(t).len() {
        return Err(Error::Shape("observation or action profile does not match the model".into()));
    }
    Ok(())
}

/// Strategy-free belief propagation for every agent.
pub fn signaling_free_step(spec: &GameSpec, pi_hat: &BeliefVector, y: &[usize], a: usize) -> Result<BeliefVector> {
    let t = pi_hat.time;
    check_step(spec, t, y, a)?;
    let marginals = (0..spec.num_agents)
        .map(|n| {
            let mut out = vec![0.0; spec.num_local(n, t + 1)];
            if signaling_free_agent(spec, t, n, pi_hat.marginal(n), y[n], a, &mut out) {
                Ok(out)
            } else {
                Err(Error::ImpossibleObservation { agent: n, time: t })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeliefVector::from_marginals(t + 1, &marginals))
}

/// Consistent update for one agent. Returns false when the Bayes denominator
/// vanishes, in which case `out` is untouched.
#[allow(clippy::too_many_arguments)]
pub fn consistent_agent(
    spec: &GameSpec,
    t: usize,
    n: usize,
    slice: &StrategySlice,
    pi: &[f64],
    y: usize,
    a: usize,
    out: &mut [f64],
) -> bool {
    let own = spec.action_radix(t).digit(a, n);
    let mut tmp = vec![0.0; out.len()];
    let den = bayes_step_own(spec, t, n, pi, y, a, own, |x| slice.prob(n, x, own), &mut tmp);
    if den > 0.0 {
        out.copy_from_slice(&tmp);
        true
    } else {
        false
    }
}

/// Update of the strategic belief consistent with `slice`. Where the
/// observed event has probability zero under `slice`, the agent's belief
/// falls back to the signaling-free update.
pub fn consistent_update(spec: &GameSpec, slice: &StrategySlice, b: &CibState, y: &[usize], a: usize) -> Result<BeliefVector> {
    let t = b.time();
    check_step(spec, t, y, a)?;
    let marginals = (0..spec.num_agents)
        .map(|n| {
            let mut out = vec![0.0; spec.num_local(n, t + 1)];
            if consistent_agent(spec, t, n, slice, b.pi.marginal(n), y[n], a, &mut out)
                || signaling_free_agent(spec, t, n, b.pi_hat.marginal(n), y[n], a, &mut out)
            {
                Ok(out)
            } else {
                Err(Error::ImpossibleObservation { agent: n, time: t })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeliefVector::from_marginals(t + 1, &marginals))
}

/// Last-resort update used when even the signaling-free belief is undefined
/// (the observation is impossible under the current signaling-free belief).
/// Restarts the Bayes step from a uniform prior; if the observation is
/// impossible from every admissible state, it propagates the uniform prior
/// over admissible states without conditioning on the observation.
pub fn restart_agent(spec: &GameSpec, t: usize, n: usize, y: usize, a: usize, out: &mut [f64]) {
    let k = spec.num_local(n, t);
    let uniform = vec![1.0 / k as f64; k];
    if bayes_step(spec, t, n, &uniform, y, a, |_| 1.0, out) > 0.0 {
        return;
    }
    let own = spec.action_radix(t).digit(a, n);
    let pk = &spec.local_kernel[n][t];
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut any = false;
    for x in 0..k {
        if spec.is_admissible(n, t, x, own) {
            any = true;
            for (o, p) in out.iter_mut().zip(pk.row(x, a)) {
                *o += p;
            }
        }
    }
    if any {
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
    } else {
        let m = out.len() as f64;
        out.iter_mut().for_each(|v| *v = 1.0 / m);
    }
}

/// Distribution over joint local-state trajectories `x_{1:s}`.
///
/// Trajectories are indexed in row-major order with time 0 most
/// significant; each digit is a joint local-state index.
#[derive(Clone, Debug)]
pub struct TrajectoryDistribution {
    pub radices: Vec<Radix>,
    pub probs: Vec<f64>,
}

impl TrajectoryDistribution {
    pub fn steps(&self) -> usize {
        self.radices.len()
    }

    /// Joint local state at step `s` of trajectory `idx`.
    pub fn state_at(&self, idx: usize, s: usize) -> usize {
        let below: usize = self.radices[s + 1..].iter().map(|r| r.len()).product();
        (idx / below) % self.radices[s].len()
    }

    /// Distribution of the joint local state at step `s`.
    pub fn joint_at(&self, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.radices[s].len()];
        for (i, &p) in self.probs.iter().enumerate() {
            out[self.state_at(i, s)] += p;
        }
        out
    }

    /// Marginal of agent `n`'s local state at step `s`.
    pub fn marginal(&self, s: usize, n: usize) -> Vec<f64> {
        let r = &self.radices[s];
        let mut out = vec![0.0; r.size(n)];
        for (x, p) in self.joint_at(s).into_iter().enumerate() {
            out[r.digit(x, n)] += p;
        }
        out
    }

    /// Distribution over agent `n`'s own trajectories, indexed row-major
    /// with time 0 most significant.
    pub fn agent_trajectories(&self, n: usize) -> Vec<f64> {
        let sizes: Vec<usize> = self.radices.iter().map(|r| r.size(n)).collect();
        let own = Radix::new(sizes);
        let mut out = vec![0.0; own.len()];
        let mut digits = vec![0; self.steps()];
        for (i, &p) in self.probs.iter().enumerate() {
            for (s, d) in digits.iter_mut().enumerate() {
                *d = self.radices[s].digit(self.state_at(i, s), n);
            }
            out[own.encode(&digits)] += p;
        }
        out
    }
}

/// Largest trajectory table the oracle will enumerate.
pub const ORACLE_BUDGET: u128 = 10_000_000;

/// Exact open-loop posterior over joint state trajectories given a fixed
/// action sequence and observation sequence, computed by enumerating every
/// trajectory.
///
/// `actions[s]` is the joint action index at step `s` and `observations[s][n]`
/// agent `n`'s observation at step `s`; both have the same length `t - 1`.
/// With `own = Some((n, xs))`, trajectories are further conditioned on agent
/// `n`'s local states being `xs[0..t]`.
pub fn joint_bayes_oracle(
    spec: &GameSpec,
    actions: &[usize],
    observations: &[Vec<usize>],
    own: Option<(usize, &[usize])>,
) -> Result<TrajectoryDistribution> {
    if actions.len() != observations.len() || actions.len() >= spec.horizon {
        return Err(Error::Shape("action and observation sequences must have equal length below the horizon".into()));
    }
    let steps = actions.len() + 1;
    let radices: Vec<Radix> = (0..steps).map(|s| spec.local_radix(s)).collect();
    let needed: u128 = radices.iter().map(|r| r.len() as u128).product();
    if needed > ORACLE_BUDGET {
        return Err(Error::Budget { what: "trajectory enumeration".into(), needed, budget: ORACLE_BUDGET });
    }
    let r0 = &radices[0];
    let mut probs: Vec<f64> = match &spec.initial_local {
        InitialPrior::Joint(j) => j.clone(),
        InitialPrior::Product(m) => (0..r0.len()).map(|x| (0..spec.num_agents).map(|n| m[n][r0.digit(x, n)]).product()).collect(),
    };
    let keep_own = |s: usize, x: usize| match own {
        Some((n, xs)) => radices[s].digit(x, n) == xs[s],
        None => true,
    };
    for (x, p) in probs.iter_mut().enumerate() {
        if !keep_own(0, x) {
            *p = 0.0;
        }
    }
    for s in 0..actions.len() {
        let a = actions[s];
        let ar = spec.action_radix(s);
        let (rs, rn) = (&radices[s], &radices[s + 1]);
        let mut next = vec![0.0; probs.len() * rn.len()];
        for (i, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let x = i % rs.len();
            let mut w = p;
            for n in 0..spec.num_agents {
                let xn = rs.digit(x, n);
                if !spec.is_admissible(n, s, xn, ar.digit(a, n)) {
                    w = 0.0;
                    break;
                }
                w *= spec.obs_kernel[n][s].get(xn, a, observations[s][n]);
            }
            if w == 0.0 {
                continue;
            }
            for x2 in 0..rn.len() {
                if !keep_own(s + 1, x2) {
                    continue;
                }
                let mut v = w;
                for n in 0..spec.num_agents {
                    v *= spec.local_kernel[n][s].get(rs.digit(x, n), a, rn.digit(x2, n));
                }
                next[i * rn.len() + x2] = v;
            }
        }
        probs = next;
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroProbability("the conditioning history is impossible".into()));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(TrajectoryDistribution { radices, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::mac::{mac_belief_update_closed_form, mac_spec, MacParams};

    fn mac_state(pi: [f64; 2]) -> CibState {
        let b = BeliefVector::from_marginals(0, &[vec![1.0 - pi[0], pi[0]], vec![1.0 - pi[1], pi[1]]]);
        CibState::new(0, b.clone(), b)
    }

    #[test]
    fn collision_forces_full_queues() {
        let spec = mac_spec(&MacParams::default());
        let b = mac_state([0.5, 0.5]);
        let next = signaling_free_step(&spec, &b.pi_hat, &[0, 0], 3).unwrap();
        assert_eq!(next.marginal(0), &[0.0, 1.0]);
        assert_eq!(next.marginal(1), &[0.0, 1.0]);
    }

    #[test]
    fn mac_updates_match_closed_form() {
        let q = MacParams::default();
        let spec = mac_spec(&q);
        let b = mac_state([0.5, 0.5]);
        let slice = StrategySlice::pure(&spec, 0, |_, x| x);
        for a in 0..4 {
            let next = consistent_update(&spec, &slice, &b, &[0, 0], a).unwrap();
            let (a0, a1) = (a / 2, a % 2);
            let want = mac_belief_update_closed_form(0.5, 0.5, 1.0, a0, a1, &q);
            assert!((next.marginal(0)[1] - want).abs() < 1e-15, "profile {a}");
        }
    }

    #[test]
    fn silence_under_sure_transmission_falls_back() {
        let q = MacParams::default();
        let spec = mac_spec(&q);
        let b = CibState::new(
            0,
            BeliefVector::from_marginals(0, &[vec![0.0, 1.0], vec![0.5, 0.5]]),
            BeliefVector::from_marginals(0, &[vec![0.3, 0.7], vec![0.5, 0.5]]),
        );
        let slice = StrategySlice::pure(&spec, 0, |_, x| x);
        let next = consistent_update(&spec, &slice, &b, &[0, 0], 0).unwrap();
        let want = mac_belief_update_closed_form(1.0, 0.7, 1.0, 0, 0, &q);
        assert!((next.marginal(0)[1] - want).abs() < 1e-15);
    }

    #[test]
    fn impossible_observation_is_an_error() {
        let spec = mac_spec(&MacParams::default());
        let pi = BeliefVector::from_marginals(0, &[vec![1.0, 0.0], vec![0.5, 0.5]]);
        let err = signaling_free_step(&spec, &pi, &[0, 0], 2).unwrap_err();
        assert!(matches!(err, Error::ImpossibleObservation { agent: 0, time: 0 }));
    }

    #[test]
    fn oracle_without_history_is_the_prior() {
        let spec = mac_spec(&MacParams { prior: 0.3, ..MacParams::default() });
        let d = joint_bayes_oracle(&spec, &[], &[], None).unwrap();
        let m = d.marginal(0, 1);
        assert!((m[0] - 0.7).abs() < 1e-15 && (m[1] - 0.3).abs() < 1e-15);
        assert!((d.probs[3] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn oracle_matches_signaling_free_marginals_on_mac() {
        let spec = mac_spec(&MacParams { prior: 0.4, horizon: 3, ..MacParams::default() });
        let acts = [1usize, 0];
        let obs = vec![vec![0, 0]; 2];
        let d = joint_bayes_oracle(&spec, &acts, &obs, None).unwrap();
        let mut b = BeliefVector::prior(&spec);
        for s in 0..2 {
            b = signaling_free_step(&spec, &b, &obs[s], acts[s]).unwrap();
        }
        for n in 0..2 {
            for (u, v) in d.marginal(2, n).iter().zip(b.marginal(n)) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }
}
