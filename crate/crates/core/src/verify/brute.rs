//! Brute-force checks of a CIB profile on small instances: the full belief
//! system it induces, consistency of that system, conditional independence
//! under unilateral deviations, and the value of unrestricted deviations.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{joint_bayes_oracle, CibState};
use crate::error::{Error, Result};
use crate::model::GameSpec;
use crate::strategy::StrategySlice;

use super::profile::{advance, mix, profile_values, CibProfile};

/// Largest number of trajectories a single check may enumerate.
pub const TRAJECTORY_BUDGET: u64 = 1_000_000;

/// Residuals above this are listed individually in reports.
pub const VIOLATION_TOL: f64 = 1e-9;

const MAX_LISTED: usize = 1000;

/// Publicly observed history: public states, joint actions and joint
/// observations.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CommonHistory {
    /// One more entry than `actions`.
    pub publics: Vec<usize>,
    pub actions: Vec<usize>,
    /// `observations[s][n]`
    pub observations: Vec<Vec<usize>>,
}

impl CommonHistory {
    pub fn new(c0: usize) -> Self {
        Self { publics: vec![c0], actions: Vec::new(), observations: Vec::new() }
    }

    pub fn time(&self) -> usize {
        self.actions.len()
    }

    pub fn extended(&self, a: usize, y: &[usize], c2: usize) -> Self {
        let mut h = self.clone();
        h.actions.push(a);
        h.observations.push(y.to_vec());
        h.publics.push(c2);
        h
    }

    fn key(&self) -> u64 {
        let mut parts: Vec<u64> = self.publics.iter().map(|&c| c as u64).collect();
        parts.extend(self.actions.iter().map(|&a| a as u64 + (1 << 32)));
        parts.extend(self.observations.iter().flatten().map(|&y| y as u64 + (2 << 32)));
        mix(0, &parts)
    }
}

impl fmt::Display for CommonHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.publics[0] + 1)?;
        for s in 0..self.actions.len() {
            let y: Vec<String> = self.observations[s].iter().map(|y| (y + 1).to_string()).collect();
            write!(f, " | a{} y({}) c{}", self.actions[s] + 1, y.join(","), self.publics[s + 1] + 1)?;
        }
        Ok(())
    }
}

/// Distribution over one agent's local-state trajectories, indexed in
/// row-major order with time 0 most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrajectories {
    /// Local alphabet size at each time of the trajectory.
    pub sizes: Vec<usize>,
    pub probs: Vec<f64>,
}

impl AgentTrajectories {
    fn current_size(&self) -> usize {
        *self.sizes.last().expect("trajectories have at least one step")
    }

    /// Distribution of the latest local state.
    pub fn current_marginal(&self) -> Vec<f64> {
        let k = self.current_size();
        let mut m = vec![0.0; k];
        for (i, p) in self.probs.iter().enumerate() {
            m[i % k] += p;
        }
        m
    }

    /// Local state at time `s` of trajectory `idx`.
    pub fn state_at(&self, mut idx: usize, s: usize) -> usize {
        for &k in self.sizes[s + 1..].iter().rev() {
            idx /= k;
        }
        idx % self.sizes[s]
    }

    /// Extend by one step with `weight(x)` on the current state and the
    /// transition row `next(x)`. Returns the unnormalized result.
    fn extend(&self, k2: usize, weight: impl Fn(usize) -> f64, next: impl Fn(usize) -> Vec<f64>) -> Self {
        let k = self.current_size();
        let mut probs = vec![0.0; self.probs.len() * k2];
        for (i, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let w = p * weight(i % k);
            if w == 0.0 {
                continue;
            }
            for (x2, q) in next(i % k).into_iter().enumerate() {
                probs[i * k2 + x2] = w * q;
            }
        }
        let mut sizes = self.sizes.clone();
        sizes.push(k2);
        Self { sizes, probs }
    }

    fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    fn normalize(&mut self) {
        let s = self.total();
        self.probs.iter_mut().for_each(|p| *p /= s);
    }
}

/// The belief system induced by a CIB profile along one common history:
/// per-agent trajectory distributions whose product, times the indicator of
/// an agent's own trajectory, is that agent's belief.
#[derive(Clone, Debug)]
pub struct FullBelief {
    pub history: CommonHistory,
    /// Common-information state reached along the history.
    pub state: CibState,
    pub agents: Vec<AgentTrajectories>,
    /// Strategy-independent trajectory distributions.
    pub signaling_free: Vec<AgentTrajectories>,
    /// Agents for which Bayes' rule was silent at some step.
    pub fallback: Vec<bool>,
    /// False once the history is impossible under every strategy.
    pub possible: bool,
}

impl FullBelief {
    pub fn initial(spec: &GameSpec, c0: usize) -> Self {
        let prior = spec.initial_marginals();
        let agents: Vec<AgentTrajectories> =
            (0..spec.num_agents).map(|n| AgentTrajectories { sizes: vec![spec.num_local(n, 0)], probs: prior[n].clone() }).collect();
        Self {
            history: CommonHistory::new(c0),
            state: CibState::initial(spec, c0),
            signaling_free: agents.clone(),
            agents,
            fallback: vec![false; spec.num_agents],
            possible: spec.initial_public.get(c0).is_some_and(|p| *p > 0.0),
        }
    }

    pub fn time(&self) -> usize {
        self.history.time()
    }

    /// Extend the history by `(a, y, c2)`.
    pub fn step(&self, spec: &GameSpec, profile: &dyn CibProfile, a: usize, y: &[usize], c2: usize) -> Result<Self> {
        let t = self.time();
        if t + 1 >= spec.horizon {
            return Err(Error::Shape("no step after the last time".into()));
        }
        let count: u64 = self.agents.iter().map(|m| m.probs.len() as u64).max().unwrap_or(0);
        let widest = (0..spec.num_agents).map(|n| spec.num_local(n, t + 1) as u64).max().unwrap_or(1);
        if count * widest > TRAJECTORY_BUDGET {
            return Err(Error::Budget {
                what: "trajectory enumeration".into(),
                needed: (count * widest) as u128,
                budget: TRAJECTORY_BUDGET as u128,
            });
        }
        let slice = profile.strategy(&self.state)?;
        let psi = profile.update(&self.state)?.ok_or_else(|| Error::Bundle(format!("no update at time {}", t + 1)))?;
        let ar = spec.action_radix(t);
        let mut agents = Vec::with_capacity(spec.num_agents);
        let mut hats = Vec::with_capacity(spec.num_agents);
        let mut fallback = self.fallback.clone();
        let mut possible = self.possible;
        for k in 0..spec.num_agents {
            let own = ar.digit(a, k);
            let k2 = spec.num_local(k, t + 1);
            let adm = |x: usize| if spec.is_admissible(k, t, x, own) { 1.0 } else { 0.0 };
            let q = |x: usize| spec.obs_kernel[k][t].get(x, a, y[k]);
            let p = |x: usize| spec.local_kernel[k][t].row(x, a).to_vec();
            let mut hat = self.signaling_free[k].extend(k2, |x| adm(x) * q(x), p);
            if hat.total() <= 0.0 {
                possible = false;
                let uniform = AgentTrajectories {
                    sizes: self.signaling_free[k].sizes.clone(),
                    probs: vec![1.0 / self.signaling_free[k].probs.len() as f64; self.signaling_free[k].probs.len()],
                };
                hat = uniform.extend(k2, |x| adm(x) * q(x), p);
                if hat.total() <= 0.0 {
                    hat = uniform.extend(k2, adm, p);
                }
                if hat.total() <= 0.0 {
                    hat = uniform.extend(k2, |_| 1.0, |_| vec![1.0; k2]);
                }
            }
            hat.normalize();
            let mut mu = self.agents[k].extend(k2, |x| slice.prob(k, x, own) * q(x), p);
            if mu.total() > 0.0 {
                mu.normalize();
            } else {
                fallback[k] = true;
                let gamma = psi.next(k, y[k], a);
                let mut support = vec![0usize; k2];
                for (i, &h) in hat.probs.iter().enumerate() {
                    if h != 0.0 {
                        support[i % k2] += 1;
                    }
                }
                for (i, m) in mu.probs.iter_mut().enumerate() {
                    let x2 = i % k2;
                    *m = if hat.probs[i] != 0.0 { gamma[x2] / support[x2] as f64 } else { 0.0 };
                }
            }
            agents.push(mu);
            hats.push(hat);
        }
        Ok(Self {
            history: self.history.extended(a, y, c2),
            state: advance(spec, &self.state, &psi, a, y, c2),
            agents,
            signaling_free: hats,
            fallback,
            possible: possible && spec.public_kernel[t].get(self.history.publics[t], a, c2) > 0.0,
        })
    }

    /// Largest gap between each agent's current-state marginal and the
    /// strategic belief of the reached state.
    pub fn marginal_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (k, mu) in self.agents.iter().enumerate() {
            for (u, v) in mu.current_marginal().iter().zip(self.state.pi.marginal(k)) {
                worst = worst.max((u - v).abs());
            }
        }
        worst
    }

    /// Agent `n`'s belief over joint trajectories given its own trajectory
    /// `own`, indexed as [`crate::belief::TrajectoryDistribution`].
    pub fn agent_belief(&self, spec: &GameSpec, n: usize, own: usize) -> Vec<f64> {
        let index = JointIndex::new(spec, self.time());
        (0..index.len())
            .map(|j| {
                let parts = index.agents(j);
                if parts[n] != own {
                    return 0.0;
                }
                (0..spec.num_agents).filter(|&k| k != n).map(|k| self.agents[k].probs[parts[k]]).product()
            })
            .collect()
    }
}

/// Maps joint-trajectory indices up to time `t` to per-agent trajectory indices.
struct JointIndex {
    table: Vec<usize>,
    agents: usize,
}

impl JointIndex {
    fn new(spec: &GameSpec, t: usize) -> Self {
        let nn = spec.num_agents;
        let radices: Vec<_> = (0..=t).map(|s| spec.local_radix(s)).collect();
        let count: usize = radices.iter().map(|r| r.len()).product();
        let mut table = vec![0usize; count * nn];
        for j in 0..count {
            let mut rest = j;
            let mut digits = Vec::with_capacity(t + 1);
            for r in radices.iter().rev() {
                digits.push(rest % r.len());
                rest /= r.len();
            }
            digits.reverse();
            for n in 0..nn {
                let mut idx = 0;
                for (s, &x) in digits.iter().enumerate() {
                    idx = idx * spec.num_local(n, s) + radices[s].digit(x, n);
                }
                table[j * nn + n] = idx;
            }
        }
        Self { table, agents: nn }
    }

    fn len(&self) -> usize {
        self.table.len() / self.agents
    }

    fn agents(&self, j: usize) -> &[usize] {
        &self.table[j * self.agents..(j + 1) * self.agents]
    }
}

/// The belief system of `profile` along `history`.
pub fn construct_full_belief(spec: &GameSpec, profile: &dyn CibProfile, history: &CommonHistory) -> Result<FullBelief> {
    let t = history.time();
    if history.publics.len() != t + 1 || history.observations.len() != t || t >= spec.horizon {
        return Err(Error::Shape("malformed common history".into()));
    }
    if history.publics[0] >= spec.num_public(0) {
        return Err(Error::Shape("initial public state out of range".into()));
    }
    let mut fb = FullBelief::initial(spec, history.publics[0]);
    for s in 0..t {
        let (a, y, c2) = (history.actions[s], &history.observations[s], history.publics[s + 1]);
        if a >= spec.action_radix(s).len() || y.len() != spec.num_agents || c2 >= spec.num_public(s + 1) {
            return Err(Error::Shape(format!("history entry at time {} is out of range", s + 1)));
        }
        fb = fb.step(spec, profile, a, y, c2)?;
    }
    Ok(fb)
}

/// Children `(a, y, c2)` of a node at time `t` with public state `c`.
fn branches(spec: &GameSpec, t: usize, c: usize) -> Vec<(usize, Vec<usize>, usize)> {
    let usable = spec.usable_profiles(t);
    let yr = spec.obs_radix(t);
    let mut out = Vec::new();
    for a in (0..usable.len()).filter(|&a| usable[a]) {
        for y in 0..yr.len() {
            for (c2, &f) in spec.public_kernel[t].row(c, a).iter().enumerate() {
                if f > 0.0 {
                    out.push((a, yr.decode(y), c2));
                }
            }
        }
    }
    out
}

/// Number of common histories of every length below the horizon.
fn history_count(spec: &GameSpec) -> u128 {
    let roots = spec.initial_public.iter().filter(|p| **p > 0.0).count() as u128;
    let mut level = roots;
    let mut total = roots;
    for t in 0..spec.horizon.saturating_sub(1) {
        let usable = spec.usable_profiles(t).iter().filter(|u| **u).count() as u128;
        level = level.saturating_mul(usable * spec.obs_radix(t).len() as u128 * spec.num_public(t + 1) as u128);
        total = total.saturating_add(level);
    }
    total
}

fn joint_trajectories(spec: &GameSpec) -> u128 {
    (0..spec.horizon).map(|s| spec.local_radix(s).len() as u128).product()
}

/// How the histories of a check were covered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coverage {
    pub checked: usize,
    pub total: u128,
    pub sampled: bool,
}

impl Coverage {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.checked as f64 / self.total as f64
        }
    }
}

/// Depth-first over every history, or random walks when the enumeration
/// would exceed `budget` trajectories.
fn explore<S: Clone>(
    spec: &GameSpec,
    roots: Vec<S>,
    history: impl Fn(&S) -> &CommonHistory,
    children: impl Fn(&S) -> Result<Vec<S>>,
    mut visit: impl FnMut(&S) -> Result<()>,
    budget: u64,
    seed: u64,
) -> Result<Coverage> {
    let total = history_count(spec);
    let cost = joint_trajectories(spec).max(1);
    if total.saturating_mul(cost) <= budget as u128 {
        let mut stack = roots;
        let mut checked = 0;
        while let Some(s) = stack.pop() {
            visit(&s)?;
            checked += 1;
            stack.extend(children(&s)?);
        }
        return Ok(Coverage { checked, total, sampled: false });
    }
    let walks = (budget as u128 / (cost * spec.horizon as u128)).max(1) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    for _ in 0..walks {
        if roots.is_empty() {
            break;
        }
        let mut cur = roots[rng.random_range(0..roots.len())].clone();
        loop {
            if seen.insert(history(&cur).key()) {
                visit(&cur)?;
            }
            let mut next = children(&cur)?;
            if next.is_empty() {
                break;
            }
            cur = next.swap_remove(rng.random_range(0..next.len()));
        }
    }
    Ok(Coverage { checked: seen.len(), total, sampled: true })
}

fn roots(spec: &GameSpec) -> Vec<FullBelief> {
    (0..spec.num_public(0)).filter(|&c| spec.initial_public[c] > 0.0).map(|c| FullBelief::initial(spec, c)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    /// Trajectory marginal differs from the strategic belief.
    Marginal,
    /// Positive belief where the signaling-free belief is zero.
    Support,
    /// Belief differs from Bayes' rule applied to the previous belief.
    Bayes,
    /// Posterior under a deviation does not factorize.
    Factorization,
}

#[derive(Clone, Debug)]
pub struct Violation {
    pub kind: ViolationKind,
    pub agent: usize,
    pub history: CommonHistory,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub coverage: Coverage,
    pub marginal_residual: f64,
    pub support_residual: f64,
    pub bayes_residual: f64,
    /// Residuals above [`VIOLATION_TOL`], at most a thousand.
    pub violations: Vec<Violation>,
}

impl ConsistencyReport {
    pub fn max_residual(&self) -> f64 {
        self.marginal_residual.max(self.support_residual).max(self.bayes_residual)
    }
}

fn record(list: &mut Vec<Violation>, kind: ViolationKind, agent: usize, history: &CommonHistory, residual: f64) {
    if residual > VIOLATION_TOL && list.len() < MAX_LISTED {
        list.push(Violation { kind, agent, history: history.clone(), residual });
    }
}

/// Check the belief system of `profile` at every history that is possible
/// under some strategy: marginals against the strategic beliefs, the
/// support condition against the signaling-free trajectory oracle, and
/// Bayes' rule for every agent's belief wherever it applies.
pub fn check_consistency(spec: &GameSpec, profile: &dyn CibProfile, budget: u64) -> Result<ConsistencyReport> {
    let report = RefCell::new(ConsistencyReport {
        coverage: Coverage { checked: 0, total: 0, sampled: false },
        marginal_residual: 0.0,
        support_residual: 0.0,
        bayes_residual: 0.0,
        violations: Vec::new(),
    });
    let children = |fb: &FullBelief| -> Result<Vec<FullBelief>> {
        let t = fb.time();
        if t + 1 >= spec.horizon {
            return Ok(Vec::new());
        }
        let slice = profile.strategy(&fb.state)?;
        let mut out = Vec::new();
        for (a, y, c2) in branches(spec, t, fb.history.publics[t]) {
            let next = fb.step(spec, profile, a, &y, c2)?;
            if !next.possible {
                continue;
            }
            let mut rep = report.borrow_mut();
            for (n, r) in bayes_residuals(spec, fb, &next, &slice, a, &y).into_iter().enumerate() {
                rep.bayes_residual = rep.bayes_residual.max(r);
                record(&mut rep.violations, ViolationKind::Bayes, n, &next.history, r);
            }
            out.push(next);
        }
        Ok(out)
    };
    let visit = |fb: &FullBelief| -> Result<()> {
        let mut rep = report.borrow_mut();
        let t = fb.time();
        for k in 0..spec.num_agents {
            let mut r = 0.0f64;
            for (u, v) in fb.agents[k].current_marginal().iter().zip(fb.state.pi.marginal(k)) {
                r = r.max((u - v).abs());
            }
            r = r.max((fb.agents[k].total() - 1.0).abs());
            rep.marginal_residual = rep.marginal_residual.max(r);
            record(&mut rep.violations, ViolationKind::Marginal, k, &fb.history, r);
        }
        for n in 0..spec.num_agents {
            for own in 0..fb.agents[n].probs.len() {
                let xs: Vec<usize> = (0..=t).map(|s| fb.agents[n].state_at(own, s)).collect();
                let oracle = match joint_bayes_oracle(spec, &fb.history.actions, &fb.history.observations, Some((n, &xs))) {
                    Ok(o) => o,
                    Err(Error::ZeroProbability(_)) => continue,
                    Err(e) => return Err(e),
                };
                let belief = fb.agent_belief(spec, n, own);
                let outside: f64 = belief.iter().zip(&oracle.probs).filter(|(_, o)| **o == 0.0).map(|(b, _)| *b).sum();
                rep.support_residual = rep.support_residual.max(outside);
                record(&mut rep.violations, ViolationKind::Support, n, &fb.history, outside);
            }
        }
        Ok(())
    };
    let coverage = explore(
        spec,
        roots(spec).into_iter().filter(|r| r.possible).collect(),
        |fb| &fb.history,
        children,
        visit,
        budget,
        mix(budget, &[spec.horizon as u64]),
    )?;
    let mut report = report.into_inner();
    report.coverage = coverage;
    Ok(report)
}

/// For each agent, the largest difference between its belief at `child`
/// and Bayes' rule applied to its belief at `parent`, over own trajectories
/// where the rule applies. Computed on joint trajectories.
fn bayes_residuals(spec: &GameSpec, parent: &FullBelief, child: &FullBelief, slice: &StrategySlice, a: usize, y: &[usize]) -> Vec<f64> {
    let t = parent.time();
    let nn = spec.num_agents;
    let xr = spec.local_radix(t);
    let xr2 = spec.local_radix(t + 1);
    let ar = spec.action_radix(t);
    let adig = ar.decode(a);
    let mut out = vec![0.0f64; nn];
    for n in 0..nn {
        let k2 = spec.num_local(n, t + 1);
        for own in 0..parent.agents[n].probs.len() {
            let prior = parent.agent_belief(spec, n, own);
            for own2 in 0..k2 {
                let own_next = own * k2 + own2;
                let mut post = vec![0.0; prior.len() * xr2.len()];
                for (j, &p) in prior.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let x = j % xr.len();
                    let mut w = p;
                    for k in 0..nn {
                        let xk = xr.digit(x, k);
                        if k != n {
                            w *= slice.prob(k, xk, adig[k]);
                        } else if !spec.is_admissible(k, t, xk, adig[k]) {
                            w = 0.0;
                        }
                        if w == 0.0 {
                            break;
                        }
                        w *= spec.obs_kernel[k][t].get(xk, a, y[k]);
                    }
                    if w == 0.0 {
                        continue;
                    }
                    for x2 in 0..xr2.len() {
                        if xr2.digit(x2, n) != own2 {
                            continue;
                        }
                        let mut v = w;
                        for k in 0..nn {
                            v *= spec.local_kernel[k][t].get(xr.digit(x, k), a, xr2.digit(x2, k));
                        }
                        post[j * xr2.len() + x2] = v;
                    }
                }
                let den: f64 = post.iter().sum();
                if den <= 0.0 {
                    continue;
                }
                let got = child.agent_belief(spec, n, own_next);
                for (g, p) in got.iter().zip(&post) {
                    out[n] = out[n].max((g - p / den).abs());
                }
            }
        }
    }
    out
}

/// A behavioral strategy of one agent that may depend on its whole local
/// trajectory and the common history.
#[derive(Clone, Debug)]
pub enum Deviation {
    /// Play the profile's own slice (no deviation).
    Profile { agent: usize },
    /// A fixed action sequence, played whenever admissible.
    OpenLoop { agent: usize, actions: Vec<usize> },
    /// Pseudo-random distributions keyed by the agent's full information.
    Random { agent: usize, seed: u64 },
}

impl Deviation {
    pub fn agent(&self) -> usize {
        match self {
            Deviation::Profile { agent } | Deviation::OpenLoop { agent, .. } | Deviation::Random { agent, .. } => *agent,
        }
    }

    /// Probability of own action `an` after own trajectory `own` (index
    /// among the agent's trajectories, current state `x`).
    fn prob(&self, spec: &GameSpec, slice: &StrategySlice, h: &CommonHistory, own: usize, x: usize, an: usize) -> f64 {
        let t = h.time();
        let n = self.agent();
        let adm = &spec.admissible[n][t][x];
        if !adm.contains(&an) {
            return 0.0;
        }
        match self {
            Deviation::Profile { .. } => slice.prob(n, x, an),
            Deviation::OpenLoop { actions, .. } => {
                let want = actions[t.min(actions.len() - 1)];
                if adm.contains(&want) {
                    (an == want) as u8 as f64
                } else {
                    (an == adm[0]) as u8 as f64
                }
            }
            Deviation::Random { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(*seed, &[h.key(), own as u64, t as u64]));
                if rng.random_bool(0.3) {
                    let pick = adm[rng.random_range(0..adm.len())];
                    return (an == pick) as u8 as f64;
                }
                let w: Vec<f64> = adm.iter().map(|_| rng.random::<f64>() + 0.01).collect();
                let s: f64 = w.iter().sum();
                adm.iter().zip(&w).find(|(a, _)| **a == an).map_or(0.0, |(_, v)| v / s)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct IndependenceReport {
    pub coverage: Coverage,
    pub max_residual: f64,
    pub violations: Vec<Violation>,
}

#[derive(Clone)]
struct CiNode {
    fb: FullBelief,
    /// Unnormalized probability of each joint trajectory and the history.
    weights: Vec<f64>,
}

/// Check that, under each unilateral deviation, the deviator's exact
/// posterior over the other agents' trajectories equals the product of
/// their trajectory distributions, at every positive-probability history.
pub fn check_conditional_independence(
    spec: &GameSpec,
    profile: &dyn CibProfile,
    deviations: &[Deviation],
    budget: u64,
) -> Result<IndependenceReport> {
    let nn = spec.num_agents;
    let mut report =
        IndependenceReport { coverage: Coverage { checked: 0, total: 0, sampled: false }, max_residual: 0.0, violations: Vec::new() };
    let indices: Vec<JointIndex> = (0..spec.horizon).map(|t| JointIndex::new(spec, t)).collect();
    let prior = spec.initial_marginals();
    let xr0 = spec.local_radix(0);
    let root_weights: Vec<f64> = (0..xr0.len()).map(|x| (0..nn).map(|n| prior[n][xr0.digit(x, n)]).product()).collect();
    for (d_idx, dev) in deviations.iter().enumerate() {
        let n = dev.agent();
        if n >= nn {
            return Err(Error::Shape(format!("deviation for agent {} in a {}-agent game", n + 1, nn)));
        }
        let roots: Vec<CiNode> = roots(spec)
            .into_iter()
            .filter(|r| r.possible)
            .map(|fb| {
                let w = spec.initial_public[fb.history.publics[0]];
                CiNode { weights: root_weights.iter().map(|p| p * w).collect(), fb }
            })
            .collect();
        let children = |node: &CiNode| -> Result<Vec<CiNode>> {
            let t = node.fb.time();
            if t + 1 >= spec.horizon {
                return Ok(Vec::new());
            }
            let xr = spec.local_radix(t);
            let xr2 = spec.local_radix(t + 1);
            let ar = spec.action_radix(t);
            let slice = profile.strategy(&node.fb.state)?;
            let c = node.fb.history.publics[t];
            let mut out = Vec::new();
            for (a, y, c2) in branches(spec, t, c) {
                let adig = ar.decode(a);
                let f = spec.public_kernel[t].get(c, a, c2);
                let mut w2 = vec![0.0; node.weights.len() * xr2.len()];
                for (j, &w) in node.weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let x = j % xr.len();
                    let own = indices[t].agents(j)[n];
                    let mut v = w * f * dev.prob(spec, &slice, &node.fb.history, own, xr.digit(x, n), adig[n]);
                    for k in 0..nn {
                        if v == 0.0 {
                            break;
                        }
                        let xk = xr.digit(x, k);
                        if k != n {
                            v *= slice.prob(k, xk, adig[k]);
                        }
                        v *= spec.obs_kernel[k][t].get(xk, a, y[k]);
                    }
                    if v == 0.0 {
                        continue;
                    }
                    for x2 in 0..xr2.len() {
                        let mut u = v;
                        for k in 0..nn {
                            u *= spec.local_kernel[k][t].get(xr.digit(x, k), a, xr2.digit(x2, k));
                        }
                        w2[j * xr2.len() + x2] = u;
                    }
                }
                let s: f64 = w2.iter().sum();
                if s > 0.0 {
                    w2.iter_mut().for_each(|v| *v /= s);
                    out.push(CiNode { fb: node.fb.step(spec, profile, a, &y, c2)?, weights: w2 });
                }
            }
            Ok(out)
        };
        let visit = |node: &CiNode, report: &mut IndependenceReport| {
            let t = node.fb.time();
            let index = &indices[t];
            let mut own_mass = vec![0.0; node.fb.agents[n].probs.len()];
            for (j, &w) in node.weights.iter().enumerate() {
                own_mass[index.agents(j)[n]] += w;
            }
            let mut worst = 0.0f64;
            for (j, &w) in node.weights.iter().enumerate() {
                let parts = index.agents(j);
                let m = own_mass[parts[n]];
                if m <= 0.0 {
                    continue;
                }
                let prod: f64 = (0..nn).filter(|&k| k != n).map(|k| node.fb.agents[k].probs[parts[k]]).product();
                worst = worst.max((w / m - prod).abs());
            }
            report.max_residual = report.max_residual.max(worst);
            record(&mut report.violations, ViolationKind::Factorization, n, &node.fb.history, worst);
        };
        let cov = explore(
            spec,
            roots,
            |node| &node.fb.history,
            children,
            |node| {
                visit(node, &mut report);
                Ok(())
            },
            budget,
            mix(budget, &[d_idx as u64]),
        )?;
        report.coverage.checked += cov.checked;
        report.coverage.total += cov.total;
        report.coverage.sampled |= cov.sampled;
    }
    Ok(report)
}

/// Optimal values of agent `n` over unrestricted behavioral strategies
/// (computed on its information sets) against the values of its best CIB
/// deviation, at every initial public state and own initial state.
#[derive(Clone, Debug)]
pub struct WitnessReport {
    pub agent: usize,
    /// `(public state, own state, behavioral optimum, CIB deviation value)`
    pub entries: Vec<(usize, usize, f64, f64)>,
    pub residual: f64,
}

pub fn behavioral_witness(spec: &GameSpec, profile: &dyn CibProfile, n: usize) -> Result<WitnessReport> {
    if n >= spec.num_agents {
        return Err(Error::Shape(format!("agent {} out of range", n + 1)));
    }
    if joint_trajectories(spec).saturating_mul(history_count(spec)) > TRAJECTORY_BUDGET as u128 {
        return Err(Error::Budget {
            what: "behavioral deviation search".into(),
            needed: joint_trajectories(spec).saturating_mul(history_count(spec)),
            budget: TRAJECTORY_BUDGET as u128,
        });
    }
    let prior = spec.initial_marginals();
    let xr0 = spec.local_radix(0);
    let mut entries = Vec::new();
    let mut residual = 0.0f64;
    for c0 in (0..spec.num_public(0)).filter(|&c| spec.initial_public[c] > 0.0) {
        let b0 = CibState::initial(spec, c0);
        let (_, best) = profile_values(spec, profile, &b0)?;
        for x0 in (0..spec.num_local(n, 0)).filter(|&x| prior[n][x] > 0.0) {
            let mut post: Vec<f64> = (0..xr0.len())
                .map(|x| {
                    if xr0.digit(x, n) == x0 {
                        (0..spec.num_agents).filter(|&k| k != n).map(|k| prior[k][xr0.digit(x, k)]).product()
                    } else {
                        0.0
                    }
                })
                .collect();
            let s: f64 = post.iter().sum();
            post.iter_mut().for_each(|p| *p /= s);
            let v = behavioral_value(spec, profile, n, &b0, &post, x0)?;
            residual = residual.max((v - best[n][x0]).abs());
            entries.push((c0, x0, v, best[n][x0]));
        }
    }
    Ok(WitnessReport { agent: n, entries, residual })
}

/// Best expected remaining payoff of agent `n` at an information set with
/// own state `own`, common state `b` and posterior `post` over joint states.
fn behavioral_value(spec: &GameSpec, profile: &dyn CibProfile, n: usize, b: &CibState, post: &[f64], own: usize) -> Result<f64> {
    let t = b.time();
    let nn = spec.num_agents;
    let last = t + 1 == spec.horizon;
    let slice = profile.strategy(b)?;
    let psi = if last { None } else { profile.update(b)? };
    let xr = spec.local_radix(t);
    let ar = spec.action_radix(t);
    let usable = spec.usable_profiles(t);
    let c = b.public;
    let mut best = f64::NEG_INFINITY;
    for &an in &spec.admissible[n][t][own] {
        let mut total = 0.0;
        for a in (0..ar.len()).filter(|&a| usable[a] && ar.digit(a, n) == an) {
            let adig = ar.decode(a);
            let pa: Vec<f64> = (0..xr.len())
                .map(|x| {
                    if post[x] == 0.0 {
                        return 0.0;
                    }
                    (0..nn).filter(|&k| k != n).fold(post[x], |acc, k| acc * slice.prob(k, xr.digit(x, k), adig[k]))
                })
                .collect();
            for (x, &p) in pa.iter().enumerate() {
                if p > 0.0 {
                    total += p * spec.utility[n][t].get(c, x, a);
                }
            }
            let Some(psi) = &psi else { continue };
            let xr2 = spec.local_radix(t + 1);
            let yr = spec.obs_radix(t);
            for y in 0..yr.len() {
                let ydig = yr.decode(y);
                let mut w2 = vec![0.0; xr2.len()];
                for (x, &p) in pa.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let q: f64 = (0..nn).map(|k| spec.obs_kernel[k][t].get(xr.digit(x, k), a, ydig[k])).product();
                    if q == 0.0 {
                        continue;
                    }
                    for (x2, w) in w2.iter_mut().enumerate() {
                        *w += p * q * (0..nn).map(|k| spec.local_kernel[k][t].get(xr.digit(x, k), a, xr2.digit(x2, k))).product::<f64>();
                    }
                }
                for own2 in 0..spec.num_local(n, t + 1) {
                    let mass: f64 = w2.iter().enumerate().filter(|(x2, _)| xr2.digit(*x2, n) == own2).map(|(_, w)| w).sum();
                    if mass <= 0.0 {
                        continue;
                    }
                    let post2: Vec<f64> =
                        w2.iter().enumerate().map(|(x2, w)| if xr2.digit(x2, n) == own2 { w / mass } else { 0.0 }).collect();
                    for (c2, &f) in spec.public_kernel[t].row(c, a).iter().enumerate() {
                        if f > 0.0 {
                            let b2 = advance(spec, b, psi, a, &ydig, c2);
                            total += f * mass * behavioral_value(spec, profile, n, &b2, &post2, own2)?;
                        }
                    }
                }
            }
        }
        best = best.max(total);
    }
    Ok(best)
}
