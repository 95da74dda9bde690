//! Finite dynamic game primitives.
//!
//! Time is 0-based in memory (`t = 0..horizon`) and 1-based in files, CSV
//! exports and messages. Transition and observation kernels exist for
//! `t = 0..horizon-1` only: nothing after the last decision epoch matters.
//!
//! All tables are dense and indexed by enumerated alphabet elements. Joint
//! profiles (states, actions, observations) use [`Radix`] row-major order
//! with agent 0 as the most significant digit.

mod file;
mod radix;

pub use file::{load_spec, parse_spec, save_spec, spec_to_toml};
pub use radix::Radix;

use crate::error::{Diagnostic, Error, Result};

/// Absolute tolerance for stochasticity checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Dense three-way probability table `row x column -> distribution over outcomes`.
///
/// Rows that the model never queries (inadmissible own action) may be left
/// undefined; they are stored as NaN.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub rows: usize,
    pub cols: usize,
    pub outcomes: usize,
    pub data: Vec<f64>,
}

impl PartialEq for Kernel {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.outcomes == other.outcomes
            && self.data.iter().zip(&other.data).all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl Kernel {
    pub fn undefined(rows: usize, cols: usize, outcomes: usize) -> Self {
        Self { rows, cols, outcomes, data: vec![f64::NAN; rows * cols * outcomes] }
    }

    pub fn from_fn(rows: usize, cols: usize, outcomes: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols * outcomes);
        for r in 0..rows {
            for c in 0..cols {
                for o in 0..outcomes {
                    data.push(f(r, c, o));
                }
            }
        }
        Self { rows, cols, outcomes, data }
    }

    #[inline]
    pub fn row(&self, r: usize, c: usize) -> &[f64] {
        let start = (r * self.cols + c) * self.outcomes;
        &self.data[start..start + self.outcomes]
    }

    pub fn row_mut(&mut self, r: usize, c: usize) -> &mut [f64] {
        let start = (r * self.cols + c) * self.outcomes;
        &mut self.data[start..start + self.outcomes]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, o: usize) -> f64 {
        self.data[(r * self.cols + c) * self.outcomes + o]
    }

    pub fn is_defined(&self, r: usize, c: usize) -> bool {
        self.row(r, c).iter().all(|v| !v.is_nan())
    }
}

/// Stage payoff table `public state x joint local state x joint action`.
#[derive(Clone, Debug, PartialEq)]
pub struct Utility {
    pub publics: usize,
    pub states: usize,
    pub actions: usize,
    pub data: Vec<f64>,
}

impl Utility {
    pub fn from_fn(publics: usize, states: usize, actions: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(publics * states * actions);
        for c in 0..publics {
            for x in 0..states {
                for a in 0..actions {
                    data.push(f(c, x, a));
                }
            }
        }
        Self { publics, states, actions, data }
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, a: usize) -> f64 {
        self.data[(c * self.states + x) * self.actions + a]
    }
}

/// Prior over the initial local states.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialPrior {
    /// One distribution per agent; the joint prior is their product.
    Product(Vec<Vec<f64>>),
    /// A joint table over initial local-state profiles. Only valid when it
    /// factorizes across agents.
    Joint(Vec<f64>),
}

/// The primitive data of a finite dynamic game with asymmetric information.
#[derive(Clone, Debug, PartialEq)]
pub struct GameSpec {
    pub name: String,
    pub horizon: usize,
    pub num_agents: usize,
    /// `[t]` public-state alphabet.
    pub public_states: Vec<Vec<String>>,
    /// `[n][t]` local-state alphabet.
    pub local_states: Vec<Vec<Vec<String>>>,
    /// `[n][t]` full action alphabet.
    pub actions: Vec<Vec<Vec<String>>>,
    /// `[n][t][x]` admissible action indices, ascending.
    pub admissible: Vec<Vec<Vec<Vec<usize>>>>,
    /// `[n][t]` observation alphabet, `t < horizon - 1`. A game without
    /// observations uses a single placeholder symbol.
    pub observations: Vec<Vec<Vec<String>>>,
    /// `[n][t]` local kernel, `x_t x joint action -> x_{t+1}`.
    pub local_kernel: Vec<Vec<Kernel>>,
    /// `[n][t]` observation kernel, `x_t x joint action -> y_t`.
    pub obs_kernel: Vec<Vec<Kernel>>,
    /// `[t]` public-state kernel, `c_t x joint action -> c_{t+1}`.
    pub public_kernel: Vec<Kernel>,
    /// `[n][t]` stage payoff.
    pub utility: Vec<Vec<Utility>>,
    pub initial_public: Vec<f64>,
    pub initial_local: InitialPrior,
}

impl GameSpec {
    pub fn local_radix(&self, t: usize) -> Radix {
        Radix::new((0..self.num_agents).map(|n| self.local_states[n][t].len()).collect())
    }

    pub fn action_radix(&self, t: usize) -> Radix {
        Radix::new((0..self.num_agents).map(|n| self.actions[n][t].len()).collect())
    }

    /// Joint observation radix. Only defined for `t < horizon - 1`.
    pub fn obs_radix(&self, t: usize) -> Radix {
        Radix::new((0..self.num_agents).map(|n| self.observations[n][t].len()).collect())
    }

    pub fn num_local(&self, n: usize, t: usize) -> usize {
        self.local_states[n][t].len()
    }

    pub fn num_actions(&self, n: usize, t: usize) -> usize {
        self.actions[n][t].len()
    }

    pub fn num_public(&self, t: usize) -> usize {
        self.public_states[t].len()
    }

    #[inline]
    pub fn is_admissible(&self, n: usize, t: usize, x: usize, a: usize) -> bool {
        self.admissible[n][t][x].contains(&a)
    }

    /// Actions of agent `n` admissible at some local state.
    pub fn usable_actions(&self, n: usize, t: usize) -> Vec<bool> {
        let mut used = vec![false; self.num_actions(n, t)];
        for set in &self.admissible[n][t] {
            for &a in set {
                if a < used.len() {
                    used[a] = true;
                }
            }
        }
        used
    }

    /// Joint action profiles in which every agent plays an action that is
    /// admissible at one of its states.
    pub fn usable_profiles(&self, t: usize) -> Vec<bool> {
        let radix = self.action_radix(t);
        let usable: Vec<Vec<bool>> = (0..self.num_agents).map(|n| self.usable_actions(n, t)).collect();
        (0..radix.len()).map(|a| (0..self.num_agents).all(|n| usable[n][radix.digit(a, n)])).collect()
    }

    /// Per-agent marginals of the initial local-state prior.
    pub fn initial_marginals(&self) -> Vec<Vec<f64>> {
        match &self.initial_local {
            InitialPrior::Product(m) => m.clone(),
            InitialPrior::Joint(joint) => joint_marginals(&self.local_radix(0), joint),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<Diagnostic>> {
        validate_spec(self)
    }

    /// True when relabelling agents 0 and 1 maps the game onto itself. Only
    /// two-agent games without an action-dependent public state qualify.
    pub fn swap_symmetric(&self) -> bool {
        if self.num_agents != 2 {
            return false;
        }
        let t_range = 0..self.horizon;
        for t in t_range {
            if self.local_states[0][t].len() != self.local_states[1][t].len()
                || self.actions[0][t].len() != self.actions[1][t].len()
                || self.admissible[0][t] != self.admissible[1][t]
            {
                return false;
            }
            let xr = self.local_radix(t);
            let ar = self.action_radix(t);
            for c in 0..self.num_public(t) {
                for x in 0..xr.len() {
                    for a in 0..ar.len() {
                        let u0 = self.utility[0][t].get(c, x, a);
                        let u1 = self.utility[1][t].get(c, xr.swap(x, 0, 1), ar.swap(a, 0, 1));
                        if (u0 - u1).abs() > 1e-12 {
                            return false;
                        }
                    }
                }
            }
            if t + 1 < self.horizon {
                if self.observations[0][t].len() != self.observations[1][t].len() {
                    return false;
                }
                for a in 0..ar.len() {
                    let sa = ar.swap(a, 0, 1);
                    for x in 0..self.num_local(0, t) {
                        let same = |k0: &Kernel, k1: &Kernel| {
                            k0.row(x, a).iter().zip(k1.row(x, sa)).all(|(u, v)| (u - v).abs() <= 1e-12 || (u.is_nan() && v.is_nan()))
                        };
                        if !same(&self.local_kernel[0][t], &self.local_kernel[1][t])
                            || !same(&self.obs_kernel[0][t], &self.obs_kernel[1][t])
                        {
                            return false;
                        }
                    }
                    for c in 0..self.num_public(t) {
                        let k = &self.public_kernel[t];
                        if k.row(c, a).iter().zip(k.row(c, sa)).any(|(u, v)| (u - v).abs() > 1e-12) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn validated(self) -> Result<Self> {
        validate_spec(&self).map_err(Error::Invalid)?;
        Ok(self)
    }
}

pub(crate) fn joint_marginals(radix: &Radix, joint: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = radix.sizes().iter().map(|&s| vec![0.0; s]).collect();
    for (i, &p) in joint.iter().enumerate() {
        for (n, m) in out.iter_mut().enumerate() {
            m[radix.digit(i, n)] += p;
        }
    }
    out
}

fn check_distribution(loc: &str, dist: &[f64], diags: &mut Vec<Diagnostic>) {
    if dist.iter().any(|p| !p.is_finite() || *p < 0.0) {
        diags.push(Diagnostic::new(loc, "negative or non-finite probability"));
        return;
    }
    let s: f64 = dist.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        diags.push(Diagnostic::new(loc, format!("row sums to {s} instead of 1")));
    }
}

/// Check every model invariant, reporting all violations.
pub fn validate_spec(spec: &GameSpec) -> std::result::Result<(), Vec<Diagnostic>> {
    let mut d = Vec::new();
    let tt = spec.horizon;
    let nn = spec.num_agents;
    if tt == 0 {
        d.push(Diagnostic::new("meta.horizon", "horizon must be at least 1"));
    }
    if nn == 0 {
        d.push(Diagnostic::new("meta.agents", "at least one agent is required"));
    }
    if !d.is_empty() {
        return Err(d);
    }
    let per_agent = |len: usize, what: &str, want: usize, d: &mut Vec<Diagnostic>| {
        if len != want {
            d.push(Diagnostic::new(what, format!("expected {want} entries, found {len}")));
        }
    };
    per_agent(spec.public_states.len(), "alphabets.public", tt, &mut d);
    per_agent(spec.local_states.len(), "alphabets.local", nn, &mut d);
    per_agent(spec.actions.len(), "alphabets.action", nn, &mut d);
    per_agent(spec.admissible.len(), "admissible_actions", nn, &mut d);
    per_agent(spec.observations.len(), "alphabets.observation", nn, &mut d);
    per_agent(spec.local_kernel.len(), "kernels.local", nn, &mut d);
    per_agent(spec.obs_kernel.len(), "kernels.observation", nn, &mut d);
    per_agent(spec.public_kernel.len(), "kernels.public", tt - 1, &mut d);
    per_agent(spec.utility.len(), "utilities", nn, &mut d);
    if !d.is_empty() {
        return Err(d);
    }
    for n in 0..nn {
        let a = n + 1;
        per_agent(spec.local_states[n].len(), &format!("alphabets.local[agent={a}]"), tt, &mut d);
        per_agent(spec.actions[n].len(), &format!("alphabets.action[agent={a}]"), tt, &mut d);
        per_agent(spec.admissible[n].len(), &format!("admissible_actions[agent={a}]"), tt, &mut d);
        per_agent(spec.utility[n].len(), &format!("utilities[agent={a}]"), tt, &mut d);
        per_agent(spec.observations[n].len(), &format!("alphabets.observation[agent={a}]"), tt - 1, &mut d);
        per_agent(spec.local_kernel[n].len(), &format!("kernels.local[agent={a}]"), tt - 1, &mut d);
        per_agent(spec.obs_kernel[n].len(), &format!("kernels.observation[agent={a}]"), tt - 1, &mut d);
    }
    if !d.is_empty() {
        return Err(d);
    }

    for t in 0..tt {
        if spec.public_states[t].is_empty() {
            d.push(Diagnostic::new(format!("alphabets.public[time={}]", t + 1), "empty public-state alphabet"));
        }
        for n in 0..nn {
            let loc = format!("agent={},time={}", n + 1, t + 1);
            if spec.local_states[n][t].is_empty() {
                d.push(Diagnostic::new(format!("alphabets.local[{loc}]"), "empty local-state alphabet"));
            }
            if spec.actions[n][t].is_empty() {
                d.push(Diagnostic::new(format!("alphabets.action[{loc}]"), "empty action alphabet"));
            }
            if spec.admissible[n][t].len() != spec.local_states[n][t].len() {
                d.push(Diagnostic::new(
                    format!("admissible_actions[{loc}]"),
                    format!("expected one set per local state ({}), found {}", spec.local_states[n][t].len(), spec.admissible[n][t].len()),
                ));
                continue;
            }
            for (x, set) in spec.admissible[n][t].iter().enumerate() {
                let where_ = format!("admissible_actions[{loc},state={}]", x + 1);
                if set.is_empty() {
                    d.push(Diagnostic::new(where_, "empty admissible action set"));
                } else if set.iter().any(|&a| a >= spec.actions[n][t].len()) {
                    d.push(Diagnostic::new(where_, "action index out of range"));
                } else if set.windows(2).any(|w| w[0] >= w[1]) {
                    d.push(Diagnostic::new(where_, "admissible actions must be distinct and ascending"));
                }
            }
            if t + 1 < tt && spec.observations[n][t].is_empty() {
                d.push(Diagnostic::new(format!("alphabets.observation[{loc}]"), "empty observation alphabet"));
            }
        }
    }
    if !d.is_empty() {
        return Err(d);
    }

    for t in 0..tt {
        let xr = spec.local_radix(t);
        let ar = spec.action_radix(t);
        let usable = spec.usable_profiles(t);
        for n in 0..nn {
            let loc = format!("agent={},time={}", n + 1, t + 1);
            let u = &spec.utility[n][t];
            if (u.publics, u.states, u.actions) != (spec.num_public(t), xr.len(), ar.len()) {
                d.push(Diagnostic::new(
                    format!("utilities[{loc}]"),
                    format!(
                        "expected shape {}x{}x{}, found {}x{}x{}",
                        spec.num_public(t),
                        xr.len(),
                        ar.len(),
                        u.publics,
                        u.states,
                        u.actions
                    ),
                ));
            } else if u.data.iter().any(|v| !v.is_finite()) {
                d.push(Diagnostic::new(format!("utilities[{loc}]"), "non-finite utility entry"));
            }
            if t + 1 >= tt {
                continue;
            }
            let nx = spec.num_local(n, t);
            let checks = [
                ("kernels.local", &spec.local_kernel[n][t], spec.num_local(n, t + 1)),
                ("kernels.observation", &spec.obs_kernel[n][t], spec.observations[n][t].len()),
            ];
            for (what, k, outcomes) in checks {
                if (k.rows, k.cols, k.outcomes) != (nx, ar.len(), outcomes) {
                    d.push(Diagnostic::new(
                        format!("{what}[{loc}]"),
                        format!("expected shape {}x{}x{}, found {}x{}x{}", nx, ar.len(), outcomes, k.rows, k.cols, k.outcomes),
                    ));
                    continue;
                }
                for x in 0..nx {
                    for a in 0..ar.len() {
                        if !usable[a] || !spec.is_admissible(n, t, x, ar.digit(a, n)) {
                            continue;
                        }
                        let row_loc = format!("{what}[{loc},state={},action_profile={}]", x + 1, a + 1);
                        check_distribution(&row_loc, k.row(x, a), &mut d);
                    }
                }
            }
        }
        if t + 1 < tt {
            let k = &spec.public_kernel[t];
            let want = (spec.num_public(t), ar.len(), spec.num_public(t + 1));
            if (k.rows, k.cols, k.outcomes) != want {
                d.push(Diagnostic::new(
                    format!("kernels.public[time={}]", t + 1),
                    format!("expected shape {}x{}x{}, found {}x{}x{}", want.0, want.1, want.2, k.rows, k.cols, k.outcomes),
                ));
            } else {
                for c in 0..k.rows {
                    for a in 0..ar.len() {
                        if usable[a] {
                            let row_loc = format!("kernels.public[time={},public={},action_profile={}]", t + 1, c + 1, a + 1);
                            check_distribution(&row_loc, k.row(c, a), &mut d);
                        }
                    }
                }
            }
        }
    }

    if spec.initial_public.len() != spec.num_public(0) {
        d.push(Diagnostic::new("initial.public", "length differs from the time-1 public alphabet"));
    } else {
        check_distribution("initial.public", &spec.initial_public, &mut d);
    }
    let xr0 = spec.local_radix(0);
    match &spec.initial_local {
        InitialPrior::Product(m) => {
            if m.len() != nn {
                d.push(Diagnostic::new("initial.local", format!("expected {nn} distributions, found {}", m.len())));
            } else {
                for (n, dist) in m.iter().enumerate() {
                    let loc = format!("initial.local[agent={}]", n + 1);
                    if dist.len() != spec.num_local(n, 0) {
                        d.push(Diagnostic::new(loc, "length differs from the time-1 local alphabet"));
                    } else {
                        check_distribution(&loc, dist, &mut d);
                    }
                }
            }
        }
        InitialPrior::Joint(joint) => {
            if joint.len() != xr0.len() {
                d.push(Diagnostic::new("initial.joint", "length differs from the joint time-1 local alphabet"));
            } else {
                check_distribution("initial.joint", joint, &mut d);
                let marg = joint_marginals(&xr0, joint);
                let worst = (0..joint.len())
                    .map(|i| {
                        let prod: f64 = (0..nn).map(|n| marg[n][xr0.digit(i, n)]).product();
                        (prod - joint[i]).abs()
                    })
                    .fold(0.0, f64::max);
                if worst > STOCHASTIC_TOL {
                    d.push(Diagnostic::new(
                        "initial.joint",
                        format!(
                            "initial prior is not a product of per-agent marginals (deviation {worst:.3e}); \
                             initial local states must be mutually independent"
                        ),
                    ));
                }
            }
        }
    }
    if d.is_empty() {
        Ok(())
    } else {
        Err(d)
    }
}

#[cfg(test)]
mod tests;
