use crate::belief::{bayes_step_own, restart_agent, signaling_free_agent, CibState};
use crate::dp::{Layout, StencilScratch, ValueTable};
use crate::error::{Error, Result};
use crate::model::{GameSpec, Radix};
use crate::strategy::{StrategySlice, UpdateSlice};

use super::{Pair, Payoffs, StageGame};

/// Next-time values through which continuation payoffs are read.
#[derive(Clone, Copy, Debug)]
pub struct Continuation<'a> {
    pub layout: &'a Layout,
    /// One table per agent.
    pub values: &'a [ValueTable],
}

/// Transition data that does not depend on the strategy.
struct Transition<'a> {
    cont: Continuation<'a>,
    yr: Radix,
    /// `[y * N + n]`
    ydig: Vec<usize>,
    /// `[(x * |A| + a) * |Y| + y]`, product of the agents' observation probabilities
    qjoint: Vec<f64>,
    /// `[a * |Y| + y]`
    y_possible: Vec<bool>,
    /// `[a]` next public states with positive probability
    public_next: Vec<Vec<(usize, f64)>>,
    /// signaling-free updates, with the restart rule where undefined
    hat: UpdateSlice,
    /// `[n][y * |A| + a]`
    hat_defined: Vec<Vec<bool>>,
    /// `[n][(a * |Y| + y) * |X'^n| + x']`
    cont_val: Vec<Vec<f64>>,
    next_sizes: Vec<usize>,
    pi_flat: Vec<f64>,
    hat_flat: Vec<f64>,
    ws: StencilScratch,
    stencil: Vec<(usize, f64)>,
}

/// Reusable workspace for one common-information state: builds the stage
/// game for a candidate strategy slice (deriving the consistent update) or
/// for a given update, and evaluates certificates.
pub struct StageContext<'a> {
    spec: &'a GameSpec,
    pub state: CibState,
    pub game: StageGame,
    /// `[n][x * |A| + a]` instantaneous payoffs
    phi: Vec<Vec<f64>>,
    usable: Vec<usize>,
    trans: Option<Transition<'a>>,
    /// Update currently embedded in `game`; `None` at the last time.
    pub psi: Option<UpdateSlice>,
    ep: Payoffs,
    pub evaluations: usize,
}

impl<'a> StageContext<'a> {
    /// `cont` must be given for every time but the last, and is ignored there.
    pub fn new(spec: &'a GameSpec, state: CibState, cont: Option<Continuation<'a>>) -> Result<Self> {
        let t = state.time();
        let nn = spec.num_agents;
        if t >= spec.horizon || state.pi.num_agents() != nn || state.pi_hat.time != t {
            return Err(Error::Shape("common-information state does not match the model".into()));
        }
        for n in 0..nn {
            if state.pi.size(n) != spec.num_local(n, t) || state.pi_hat.size(n) != spec.num_local(n, t) {
                return Err(Error::Shape(format!("belief of agent {} has the wrong size", n + 1)));
            }
        }
        if state.public >= spec.num_public(t) {
            return Err(Error::Shape(format!("public state {} out of range", state.public + 1)));
        }
        let xr = spec.local_radix(t);
        let ar = spec.action_radix(t);
        let (nx, na) = (xr.len(), ar.len());
        let xdig: Vec<usize> = (0..nx).flat_map(|x| xr.decode(x)).collect();
        let adig: Vec<usize> = (0..na).flat_map(|a| ar.decode(a)).collect();
        let admissible: Vec<Vec<Vec<usize>>> = (0..nn).map(|n| spec.admissible[n][t].clone()).collect();
        let mut pairs = Vec::new();
        for x in 0..nx {
            for a in 0..na {
                if (0..nn).all(|n| spec.is_admissible(n, t, xdig[x * nn + n], adig[a * nn + n])) {
                    pairs.push(Pair { x, a });
                }
            }
        }
        let c = state.public;
        let mut phi: Vec<Vec<f64>> = vec![vec![0.0; nx * na]; nn];
        for n in 0..nn {
            let u = &spec.utility[n][t];
            for p in &pairs {
                phi[n][p.x * na + p.a] = u.get(c, p.x, p.a);
            }
        }
        let usable_mask = spec.usable_profiles(t);
        let usable: Vec<usize> = (0..na).filter(|&a| usable_mask[a]).collect();
        let game = StageGame { time: t, prior: state.pi.clone(), xr, ar, xdig, adig, admissible, pairs, payoff: phi.clone() };
        let ep = game.new_payoffs();
        let last = t + 1 == spec.horizon;
        let trans = if last {
            None
        } else {
            let cont = cont.ok_or_else(|| Error::Shape(format!("missing value tables for time {}", t + 2)))?;
            if cont.layout.time() != t + 1 || cont.values.len() != nn || cont.values.iter().any(|v| v.time != t + 1) {
                return Err(Error::Shape(format!("continuation for time {} has the wrong time or agent count", t + 2)));
            }
            Some(Transition::new(spec, &state, &game, &usable, cont)?)
        };
        let psi = trans.as_ref().map(|tr| tr.hat.clone());
        Ok(Self { spec, state, game, phi, usable, trans, psi, ep, evaluations: 0 })
    }

    pub fn spec(&self) -> &'a GameSpec {
        self.spec
    }

    pub fn time(&self) -> usize {
        self.game.time
    }

    pub fn is_last(&self) -> bool {
        self.trans.is_none()
    }

    /// Signaling-free update at this state (restart rule where undefined).
    pub fn signaling_free(&self) -> Option<&UpdateSlice> {
        self.trans.as_ref().map(|tr| &tr.hat)
    }

    /// Whether the signaling-free update of agent `n` is defined at `(y, a)`.
    pub fn hat_defined(&self, n: usize, y: usize, a: usize) -> bool {
        self.trans.as_ref().is_some_and(|tr| tr.hat_defined[n][y * self.game.ar.len() + a])
    }

    /// Joint action profiles whose components are each admissible somewhere.
    pub fn usable_profiles(&self) -> &[usize] {
        &self.usable
    }

    /// The update consistent with `slice`, falling back to the
    /// signaling-free update where Bayes' rule is silent.
    pub fn consistent_into(&self, slice: &StrategySlice, out: &mut UpdateSlice) {
        let Some(tr) = &self.trans else { return };
        let t = self.time();
        let nn = self.spec.num_agents;
        for &a in &self.usable {
            for n in 0..nn {
                let own = self.game.adig[a * nn + n];
                for y in 0..tr.hat.num_obs(n) {
                    let slot = out.next_mut(n, y, a);
                    let den = bayes_step_own(self.spec, t, n, self.state.pi.marginal(n), y, a, own, |x| slice.prob(n, x, own), slot);
                    if den <= 0.0 {
                        slot.copy_from_slice(tr.hat.next(n, y, a));
                    }
                }
            }
        }
    }

    /// Largest deviation of `psi` from the update consistent with `slice`.
    /// Where the Bayes denominator vanishes, measures the mass `psi` puts
    /// outside the support of the signaling-free update.
    pub fn consistency_residual(&self, slice: &StrategySlice, psi: &UpdateSlice) -> f64 {
        let Some(tr) = &self.trans else { return 0.0 };
        let t = self.time();
        let nn = self.spec.num_agents;
        let mut worst = 0.0f64;
        let mut buf = Vec::new();
        for &a in &self.usable {
            for n in 0..nn {
                let own = self.game.adig[a * nn + n];
                buf.resize(tr.next_sizes[n], 0.0);
                for y in 0..tr.hat.num_obs(n) {
                    let got = psi.next(n, y, a);
                    let den = bayes_step_own(self.spec, t, n, self.state.pi.marginal(n), y, a, own, |x| slice.prob(n, x, own), &mut buf);
                    if den > 0.0 {
                        for (u, v) in got.iter().zip(&buf) {
                            worst = worst.max((u - v).abs());
                        }
                    } else {
                        if tr.hat_defined[n][y * self.game.ar.len() + a] {
                            for (u, h) in got.iter().zip(tr.hat.next(n, y, a)) {
                                if *h == 0.0 {
                                    worst = worst.max(u.abs());
                                }
                            }
                        }
                        let s: f64 = got.iter().sum();
                        worst = worst.max((s - 1.0).abs());
                        if got.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                            worst = f64::INFINITY;
                        }
                    }
                }
            }
        }
        worst
    }

    /// Embed the update consistent with `slice` and rebuild the payoffs.
    pub fn build(&mut self, slice: &StrategySlice) -> Result<()> {
        if let Some(mut psi) = self.psi.take() {
            self.consistent_into(slice, &mut psi);
            self.psi = Some(psi);
            self.rebuild()?;
        }
        Ok(())
    }

    /// Embed a given update and rebuild the payoffs.
    pub fn build_with_update(&mut self, psi: &UpdateSlice) -> Result<()> {
        if let Some(cur) = &mut self.psi {
            if cur.data().len() != psi.data().len() {
                return Err(Error::Shape("update slice does not match the stage".into()));
            }
            cur.clone_from(psi);
            self.rebuild()?;
        }
        Ok(())
    }

    fn rebuild(&mut self) -> Result<()> {
        let (Some(tr), Some(psi)) = (&mut self.trans, &self.psi) else { return Ok(()) };
        let nn = self.spec.num_agents;
        let t = self.game.time;
        let na = self.game.ar.len();
        let ny = tr.yr.len();
        for cv in tr.cont_val.iter_mut() {
            cv.iter_mut().for_each(|v| *v = 0.0);
        }
        for &a in &self.usable {
            for y in 0..ny {
                if !tr.y_possible[a * ny + y] {
                    continue;
                }
                tr.pi_flat.clear();
                tr.hat_flat.clear();
                for n in 0..nn {
                    let yn = tr.ydig[y * nn + n];
                    tr.pi_flat.extend_from_slice(psi.next(n, yn, a));
                    tr.hat_flat.extend_from_slice(tr.hat.next(n, yn, a));
                }
                for &(c2, f) in &tr.public_next[a] {
                    tr.cont.layout.locate(c2, &tr.pi_flat, &tr.hat_flat, &mut tr.ws, &mut tr.stencil)?;
                    for n in 0..nn {
                        let k = tr.next_sizes[n];
                        let table = &tr.cont.values[n];
                        let dst = &mut tr.cont_val[n][(a * ny + y) * k..(a * ny + y + 1) * k];
                        for &(cell, w) in &tr.stencil {
                            let fw = f * w;
                            for (d, v) in dst.iter_mut().zip(table.cell(cell)) {
                                *d += fw * v;
                            }
                        }
                    }
                }
            }
        }
        for n in 0..nn {
            let pk = &self.spec.local_kernel[n][t];
            let k = tr.next_sizes[n];
            let out = &mut self.game.payoff[n];
            let phi = &self.phi[n];
            for p in &self.game.pairs {
                let xn = self.game.xdig[p.x * nn + n];
                let row = pk.row(xn, p.a);
                let q = &tr.qjoint[(p.x * na + p.a) * ny..(p.x * na + p.a + 1) * ny];
                let mut acc = 0.0;
                for (y, &qy) in q.iter().enumerate() {
                    if qy == 0.0 {
                        continue;
                    }
                    let cv = &tr.cont_val[n][(p.a * ny + y) * k..(p.a * ny + y + 1) * k];
                    let mut s = 0.0;
                    for (pv, v) in row.iter().zip(cv) {
                        s += pv * v;
                    }
                    acc += qy * s;
                }
                out[p.x * na + p.a] = phi[p.x * na + p.a] + acc;
            }
        }
        Ok(())
    }

    /// Build for `slice` and return its equilibrium gap.
    pub fn evaluate(&mut self, slice: &StrategySlice) -> Result<f64> {
        self.evaluations += 1;
        self.build(slice)?;
        Ok(self.gap(slice))
    }

    /// Gap of `slice` in the currently built game.
    pub fn gap(&mut self, slice: &StrategySlice) -> f64 {
        self.game.expected_payoffs_into(slice, &mut self.ep);
        self.game.gap_from(slice, &self.ep)
    }

    /// Expected payoffs of `slice` in the currently built game.
    pub fn payoffs(&mut self, slice: &StrategySlice) -> &Payoffs {
        self.game.expected_payoffs_into(slice, &mut self.ep);
        &self.ep
    }

    /// Own-type conditional values of `slice` in the currently built game.
    pub fn values(&mut self, slice: &StrategySlice) -> Vec<Vec<f64>> {
        self.game.expected_payoffs_into(slice, &mut self.ep);
        self.game.values_from(slice, &self.ep)
    }

    /// Largest expected payoff per own type in the currently built game,
    /// i.e. the value of a one-shot best response.
    pub fn best_values(&mut self, slice: &StrategySlice) -> Vec<Vec<f64>> {
        self.game.expected_payoffs_into(slice, &mut self.ep);
        let g = &self.game;
        (0..g.num_agents())
            .map(|n| {
                (0..g.num_states(n))
                    .map(|x| g.admissible[n][x].iter().map(|&a| self.ep.get(n, x, a)).fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            })
            .collect()
    }
}

impl<'a> Transition<'a> {
    fn new(spec: &GameSpec, state: &CibState, game: &StageGame, usable: &[usize], cont: Continuation<'a>) -> Result<Self> {
        let t = state.time();
        let nn = spec.num_agents;
        let yr = spec.obs_radix(t);
        let (nx, na, ny) = (game.xr.len(), game.ar.len(), yr.len());
        let ydig: Vec<usize> = (0..ny).flat_map(|y| yr.decode(y)).collect();
        let mut qjoint = vec![0.0; nx * na * ny];
        let mut y_possible = vec![false; na * ny];
        for p in &game.pairs {
            for y in 0..ny {
                let mut q = 1.0;
                for n in 0..nn {
                    q *= spec.obs_kernel[n][t].get(game.xdig[p.x * nn + n], p.a, ydig[y * nn + n]);
                }
                qjoint[(p.x * na + p.a) * ny + y] = q;
                if q > 0.0 {
                    y_possible[p.a * ny + y] = true;
                }
            }
        }
        let public_next = (0..na)
            .map(|a| {
                spec.public_kernel[t].row(state.public, a).iter().enumerate().filter(|(_, f)| **f > 0.0).map(|(c, f)| (c, *f)).collect()
            })
            .collect();
        let next_sizes: Vec<usize> = (0..nn).map(|n| spec.num_local(n, t + 1)).collect();
        for (n, v) in cont.values.iter().enumerate() {
            if v.num_states != next_sizes[n] || v.num_cells() != cont.layout.num_cells() {
                return Err(Error::Shape(format!("value table of agent {} does not match time {}", n + 1, t + 2)));
            }
        }
        let mut hat = UpdateSlice::zeros(spec, t);
        let mut hat_defined: Vec<Vec<bool>> = (0..nn).map(|n| vec![false; hat.num_obs(n) * na]).collect();
        for &a in usable {
            for n in 0..nn {
                for y in 0..hat.num_obs(n) {
                    let slot = hat.next_mut(n, y, a);
                    if signaling_free_agent(spec, t, n, state.pi_hat.marginal(n), y, a, slot) {
                        hat_defined[n][y * na + a] = true;
                    } else {
                        restart_agent(spec, t, n, y, a, slot);
                    }
                }
            }
        }
        let cont_val = (0..nn).map(|n| vec![0.0; na * ny * next_sizes[n]]).collect();
        Ok(Self {
            cont,
            yr,
            ydig,
            qjoint,
            y_possible,
            public_next,
            hat,
            hat_defined,
            cont_val,
            next_sizes,
            pi_flat: Vec::new(),
            hat_flat: Vec::new(),
            ws: StencilScratch::default(),
            stencil: Vec::new(),
        })
    }
}

/// The stage game at `b` with continuation values read from `next` at the
/// beliefs produced by `psi`.
pub fn build_stage_game(spec: &GameSpec, next: Option<Continuation<'_>>, psi: Option<&UpdateSlice>, b: &CibState) -> Result<StageGame> {
    let mut ctx = StageContext::new(spec, b.clone(), next)?;
    if !ctx.is_last() {
        let psi = psi.ok_or_else(|| Error::Shape("missing update slice".into()))?;
        if psi.time != b.time() {
            return Err(Error::Shape(format!("update slice for time {} used at time {}", psi.time + 1, b.time() + 1)));
        }
        ctx.build_with_update(psi)?;
    }
    Ok(ctx.game)
}

/// Own-type conditional values of `(slice, psi)` at `b`.
pub fn value_update(
    spec: &GameSpec,
    next: Option<Continuation<'_>>,
    slice: &StrategySlice,
    psi: Option<&UpdateSlice>,
    b: &CibState,
) -> Result<Vec<Vec<f64>>> {
    Ok(build_stage_game(spec, next, psi, b)?.value_update(slice))
}
