//! Games with uncontrolled dynamics and no private values.
//!
//! Local states change only at evolution epochs, through action-independent
//! kernels, and are observed through action-independent kernels at those
//! epochs only. Between epochs the public state records the actions played
//! since the last epoch; at an epoch it is redrawn from a kernel that
//! depends on the public state recorded right after the previous epoch.
//! Stage payoffs never depend on the payee's own local state.
//!
//! Public states are encoded as integers: inside a segment starting at time
//! `s`, `c_{t+1} = c_t * |A_t| + a_t`, so the segment's base state is
//! `c_t / (|A_s| ... |A_{t-1}|)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{signaling_free_next, signaling_free_tree, spec_fingerprint, sweep, EquilibriumBundle, Layout, StencilScratch};
use crate::error::{Diagnostic, Error, Result};
use crate::model::{GameSpec, InitialPrior, Kernel, Utility};
use crate::stage::nash::support_enumeration;
use crate::stage::{certify_with_update, ties, SolveMethod, SolverConfig, StageContext, StageSolution};
use crate::strategy::StrategySlice;

/// Shape of a generated game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameMSizes {
    pub agents: usize,
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    /// 0-based times at which local states evolve; each below `horizon - 1`.
    pub epochs: Vec<usize>,
    /// Number of public states drawn at each epoch.
    pub public_states: usize,
    /// Agents move in turn; the others have a single wait action.
    pub sequential: bool,
    /// All payoffs zero.
    pub zero_utility: bool,
}

impl Default for GameMSizes {
    fn default() -> Self {
        Self {
            agents: 2,
            horizon: 3,
            states: 2,
            actions: 2,
            observations: 2,
            epochs: vec![1],
            public_states: 2,
            sequential: false,
            zero_utility: false,
        }
    }
}

/// A generated game together with its epoch structure.
#[derive(Clone, Debug, PartialEq)]
pub struct GameMSpec {
    pub spec: GameSpec,
    pub epochs: Vec<usize>,
}

impl GameMSpec {
    pub fn is_epoch(&self, t: usize) -> bool {
        self.epochs.contains(&t)
    }

    /// First time of the segment containing `t`.
    pub fn segment_start(&self, t: usize) -> usize {
        self.epochs.iter().filter(|&&e| e < t).map(|&e| e + 1).max().unwrap_or(0)
    }

    /// Public state recorded at the start of the segment containing `t`.
    pub fn base(&self, t: usize, c: usize) -> usize {
        let div: usize = (self.segment_start(t)..t).map(|s| self.spec.action_radix(s).len()).product();
        c / div
    }

    /// Recover the epoch structure from a model, checking every structural
    /// requirement.
    pub fn from_spec(spec: GameSpec) -> Result<Self> {
        let tt = spec.horizon;
        let epochs: Vec<usize> = (0..tt.saturating_sub(1))
            .filter(|&t| (0..spec.num_agents).any(|n| spec.observations[n][t].len() > 1 || !is_identity(&spec.local_kernel[n][t])))
            .collect();
        let gm = Self { spec, epochs };
        let diags = gm.structure_diagnostics();
        if diags.is_empty() {
            Ok(gm)
        } else {
            Err(Error::Invalid(diags))
        }
    }

    /// Violations of the structural requirements.
    pub fn structure_diagnostics(&self) -> Vec<Diagnostic> {
        let spec = &self.spec;
        let mut d = Vec::new();
        if let Err(mut v) = spec.validate() {
            d.append(&mut v);
        }
        if !d.is_empty() {
            return d;
        }
        for t in 0..spec.horizon {
            let xr = spec.local_radix(t);
            let ar = spec.action_radix(t);
            for n in 0..spec.num_agents {
                for x in 0..spec.num_local(n, t) {
                    if spec.admissible[n][t][x].len() != spec.num_actions(n, t) {
                        d.push(Diagnostic::new(format!("admissible[{}][{}][{}]", n + 1, t + 1, x + 1), "every action must be admissible"));
                    }
                }
                let u = &spec.utility[n][t];
                'own: for c in 0..spec.num_public(t) {
                    for xj in 0..xr.len() {
                        let base = xr.with_digit(xj, n, 0);
                        for a in 0..ar.len() {
                            if u.get(c, xj, a) != u.get(c, base, a) {
                                d.push(Diagnostic::new(format!("utility[{}][{}]", n + 1, t + 1), "payoff depends on own local state"));
                                break 'own;
                            }
                        }
                    }
                }
                if t + 1 >= spec.horizon {
                    continue;
                }
                let pk = &spec.local_kernel[n][t];
                let qk = &spec.obs_kernel[n][t];
                let loc = |k: &str| format!("{k}[{}][{}]", n + 1, t + 1);
                for x in 0..spec.num_local(n, t) {
                    for a in 0..ar.len() {
                        if pk.row(x, a) != pk.row(x, 0) {
                            d.push(Diagnostic::new(loc("local_kernel"), "transition depends on the actions"));
                        }
                        if qk.row(x, a) != qk.row(x, 0) {
                            d.push(Diagnostic::new(loc("obs_kernel"), "observation depends on the actions"));
                        }
                    }
                }
                if !self.is_epoch(t) && (!is_identity(pk) || spec.observations[n][t].len() != 1) {
                    d.push(Diagnostic::new(loc("local_kernel"), "local state changes or is observed off an epoch"));
                }
            }
            if t + 1 >= spec.horizon {
                continue;
            }
            let pc = &spec.public_kernel[t];
            for c in 0..spec.num_public(t) {
                for a in 0..ar.len() {
                    let row = pc.row(c, a);
                    if self.is_epoch(t) {
                        let same_base = (0..spec.num_public(t)).filter(|&c2| self.base(t, c2) == self.base(t, c));
                        if same_base.into_iter().any(|c2| pc.row(c2, 0) != row) {
                            d.push(Diagnostic::new(
                                format!("public_kernel[{}]", t + 1),
                                "epoch draw depends on more than the segment base",
                            ));
                        }
                    } else {
                        let want = c * ar.len() + a;
                        if row.len() <= want || row[want] != 1.0 {
                            d.push(Diagnostic::new(format!("public_kernel[{}]", t + 1), "public state does not record the actions"));
                        }
                    }
                }
            }
        }
        d.sort_by(|a, b| (&a.location, &a.message).cmp(&(&b.location, &b.message)));
        d.dedup();
        d
    }
}

fn is_identity(k: &Kernel) -> bool {
    k.rows == k.outcomes
        && (0..k.rows).all(|x| (0..k.cols).all(|a| k.row(x, a).iter().enumerate().all(|(x2, &p)| p == if x2 == x { 1.0 } else { 0.0 })))
}

fn random_dist(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    // bounded away from zero so every state stays reachable
    let w: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Seeded random game with the requested sizes.
pub fn game_m_generate(seed: u64, sizes: &GameMSizes) -> Result<GameMSpec> {
    let GameMSizes { agents: nn, horizon: tt, states: nx, actions: na, observations: ny, .. } = *sizes;
    if nn == 0 || tt == 0 || nx == 0 || na == 0 || ny == 0 || sizes.public_states == 0 {
        return Err(Error::Shape("all sizes must be positive".into()));
    }
    let mut epochs = sizes.epochs.clone();
    epochs.sort_unstable();
    epochs.dedup();
    if epochs.iter().any(|&e| e + 1 >= tt) {
        return Err(Error::Shape("epochs must lie before the last time".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seg_start = |t: usize| epochs.iter().filter(|&&e| e < t).map(|&e| e + 1).max().unwrap_or(0);
    let mover = |t: usize| (t - seg_start(t)) % nn;
    let actions_of = |n: usize, t: usize| if sizes.sequential && mover(t) != n { 1 } else { na };
    let labels = |k: usize, p: &str| (0..k).map(|i| format!("{p}{}", i + 1)).collect::<Vec<_>>();
    let action_labels =
        |n: usize, t: usize| if actions_of(n, t) == 1 && sizes.sequential { vec!["wait".to_string()] } else { labels(na, "a") };
    let joint_actions = |t: usize| -> usize { (0..nn).map(|n| actions_of(n, t)).product() };

    // public alphabet sizes
    let mut publics = vec![1usize; tt];
    for t in 1..tt {
        publics[t] = if epochs.contains(&(t - 1)) { sizes.public_states } else { publics[t - 1] * joint_actions(t - 1) };
    }
    let budget = 1usize << 20;
    if publics.iter().any(|&p| p > budget) {
        return Err(Error::Budget { what: "public states".into(), needed: *publics.iter().max().unwrap() as u128, budget: budget as u128 });
    }

    let mut local_kernel = vec![Vec::new(); nn];
    let mut obs_kernel = vec![Vec::new(); nn];
    let mut observations = vec![Vec::new(); nn];
    let mut public_kernel = Vec::new();
    for t in 0..tt.saturating_sub(1) {
        let ja = joint_actions(t);
        let epoch = epochs.contains(&t);
        for n in 0..nn {
            if epoch {
                let rows: Vec<Vec<f64>> = (0..nx).map(|_| random_dist(&mut rng, nx)).collect();
                local_kernel[n].push(Kernel::from_fn(nx, ja, nx, |x, _, x2| rows[x][x2]));
                let obs: Vec<Vec<f64>> = (0..nx).map(|_| random_dist(&mut rng, ny)).collect();
                obs_kernel[n].push(Kernel::from_fn(nx, ja, ny, |x, _, y| obs[x][y]));
                observations[n].push(labels(ny, "y"));
            } else {
                local_kernel[n].push(Kernel::from_fn(nx, ja, nx, |x, _, x2| if x == x2 { 1.0 } else { 0.0 }));
                obs_kernel[n].push(Kernel::from_fn(nx, ja, 1, |_, _, _| 1.0));
                observations[n].push(vec!["-".to_string()]);
            }
        }
        if epoch {
            let start = seg_start(t);
            let div: usize = (start..t).map(&joint_actions).product();
            let bases = publics[t] / div;
            let rows: Vec<Vec<f64>> = (0..bases).map(|_| random_dist(&mut rng, publics[t + 1])).collect();
            public_kernel.push(Kernel::from_fn(publics[t], ja, publics[t + 1], |c, _, c2| rows[c / div][c2]));
        } else {
            public_kernel.push(Kernel::from_fn(publics[t], ja, publics[t + 1], |c, a, c2| if c2 == c * ja + a { 1.0 } else { 0.0 }));
        }
    }

    let mut utility = vec![Vec::new(); nn];
    for t in 0..tt {
        let ja = joint_actions(t);
        let joint_x = nx.pow(nn as u32);
        for (n, u) in utility.iter_mut().enumerate() {
            let stride = nx.pow((nn - 1 - n) as u32);
            // payoff of agent n at (c, x^{-n}, a)
            let others = joint_x / nx;
            let table: Vec<f64> =
                (0..publics[t] * others * ja).map(|_| if sizes.zero_utility { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
            u.push(Utility::from_fn(publics[t], joint_x, ja, |c, x, a| {
                // drop own digit from the joint index
                let hi = x / (stride * nx);
                let lo = x % stride;
                let xo = hi * stride + lo;
                table[(c * others + xo) * ja + a]
            }));
        }
    }
    let prior: Vec<Vec<f64>> = (0..nn).map(|_| random_dist(&mut rng, nx)).collect();

    let spec = GameSpec {
        name: format!("game-m-{seed}"),
        horizon: tt,
        num_agents: nn,
        public_states: publics.iter().map(|&p| labels(p, "c")).collect(),
        local_states: vec![vec![labels(nx, "x"); tt]; nn],
        actions: (0..nn).map(|n| (0..tt).map(|t| action_labels(n, t)).collect()).collect(),
        admissible: (0..nn).map(|n| (0..tt).map(|t| vec![(0..actions_of(n, t)).collect(); nx]).collect()).collect(),
        observations,
        local_kernel,
        obs_kernel,
        public_kernel,
        utility,
        initial_public: vec![1.0],
        initial_local: InitialPrior::Product(prior),
    };
    let gm = GameMSpec { spec, epochs };
    let diags = gm.structure_diagnostics();
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    Ok(gm)
}

/// Output of [`game_m_solve`].
#[derive(Clone, Debug)]
pub struct GameMSolution {
    pub bundle: EquilibriumBundle,
    /// Largest violation of the value decomposition into a public part and
    /// an own-state part that ignores the actions recorded in the segment.
    pub decomposition_residual: f64,
    /// How often each reduced-game solver produced the stage strategy.
    pub paths: Vec<(String, usize)>,
}

/// Solve on the exact tree of signaling-free beliefs with strategies that
/// ignore own local states, holding the update at the signaling-free one.
pub fn game_m_solve(gm: &GameMSpec, config: &SolverConfig) -> Result<GameMSolution> {
    let spec = &gm.spec;
    let diags = gm.structure_diagnostics();
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    let layouts = signaling_free_tree(spec, config.max_cells)?;
    let layers = sweep(spec, layouts, config, false, |ctx, _, seed| solve_reduced(ctx, config, seed))?;
    let bundle = EquilibriumBundle {
        spec_name: spec.name.clone(),
        fingerprint: spec_fingerprint(spec),
        config: config.clone(),
        resolution: None,
        layers,
    };
    let mut counts: Vec<(String, usize)> = Vec::new();
    for c in bundle.layers.iter().flat_map(|l| &l.certificates) {
        let key = c.method.to_string();
        match counts.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 += 1,
            None => counts.push((key, 1)),
        }
    }
    let decomposition_residual = decomposition_residual(gm, &bundle)?;
    Ok(GameMSolution { bundle, decomposition_residual, paths: counts })
}

/// Reduced complete-information game at a stage: payoffs averaged over all
/// local states, `[n][a]`.
fn reduced_payoffs(ctx: &StageContext<'_>) -> Vec<Vec<f64>> {
    let g = &ctx.game;
    let spec = ctx.spec();
    let t = ctx.time();
    let xr = spec.local_radix(t);
    let na = spec.action_radix(t).len();
    let joint = ctx.state.pi_hat.joint(&xr);
    (0..spec.num_agents).map(|n| (0..na).map(|a| joint.iter().enumerate().map(|(x, p)| p * g.payoff(n, x, a)).sum()).collect()).collect()
}

fn pooled(spec: &GameSpec, t: usize, sigma: &[Vec<f64>]) -> StrategySlice {
    StrategySlice::from_fn(spec, t, |n, _, a| sigma[n][a])
}

fn solve_reduced(ctx: &mut StageContext<'_>, config: &SolverConfig, seed: u64) -> Result<StageSolution> {
    let spec = ctx.spec();
    let t = ctx.time();
    if let Some(hat) = ctx.signaling_free().cloned() {
        ctx.build_with_update(&hat)?;
    }
    let tol = config.bne_tol;
    let uniform = StrategySlice::uniform(spec, t);
    if ctx.gap(&uniform) <= tol {
        return certify_with_update(ctx, uniform, None, SolveMethod::Uniform, tol);
    }
    let r = reduced_payoffs(ctx);
    let ar = spec.action_radix(t);
    let nn = spec.num_agents;
    let sizes: Vec<usize> = (0..nn).map(|n| ar.size(n)).collect();
    if nn == 2 {
        let a = DMatrix::from_fn(sizes[0], sizes[1], |i, j| r[0][ar.encode(&[i, j])]);
        let b = DMatrix::from_fn(sizes[0], sizes[1], |i, j| r[1][ar.encode(&[i, j])]);
        if let Some((s0, s1)) = support_enumeration(&a, &b, 1e-12) {
            let slice = pooled(spec, t, &[s0, s1]);
            let sol = certify_with_update(ctx, slice, None, SolveMethod::Reduced { path: "support-enumeration".into() }, tol)?;
            if sol.converged {
                return Ok(sol);
            }
        }
    }
    // damped best response on the reduced game, from uniform and from random starts
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for restart in 0..=config.restarts {
        let mut sigma: Vec<Vec<f64>> =
            (0..nn).map(|n| if restart == 0 { vec![1.0 / sizes[n] as f64; sizes[n]] } else { random_dist(&mut rng, sizes[n]) }).collect();
        for _ in 0..config.max_iters {
            let (gap, br) = reduced_best_response(&r, &ar, &sigma);
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, sigma.clone()));
            }
            if gap <= 0.1 * tol {
                break;
            }
            let mut change = 0.0f64;
            for n in 0..nn {
                for (a, s) in sigma[n].iter_mut().enumerate() {
                    let target = if a == br[n] { 1.0 } else { 0.0 };
                    let new = (1.0 - config.damping) * *s + config.damping * target;
                    change = change.max((new - *s).abs());
                    *s = new;
                }
            }
            if change < 1e-12 {
                break;
            }
        }
        let slice = pooled(spec, t, &best.as_ref().unwrap().1);
        if ctx.gap(&slice) <= tol {
            return certify_with_update(ctx, slice, None, SolveMethod::Reduced { path: format!("best-response-{restart}") }, tol);
        }
    }
    let slice = pooled(spec, t, &best.unwrap().1);
    certify_with_update(ctx, slice, None, SolveMethod::Failed, tol)
}

/// Gap of `sigma` in the reduced game and each agent's lowest-index best action.
fn reduced_best_response(r: &[Vec<f64>], ar: &crate::model::Radix, sigma: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let nn = sigma.len();
    let mut ep: Vec<Vec<f64>> = (0..nn).map(|n| vec![0.0; ar.size(n)]).collect();
    for a in 0..ar.len() {
        let d = ar.decode(a);
        for n in 0..nn {
            let w: f64 = (0..nn).filter(|&k| k != n).map(|k| sigma[k][d[k]]).product();
            ep[n][d[n]] += w * r[n][a];
        }
    }
    let mut gap = 0.0f64;
    let mut br = Vec::with_capacity(nn);
    for n in 0..nn {
        let best = ep[n].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cur: f64 = sigma[n].iter().zip(&ep[n]).map(|(s, e)| s * e).sum();
        gap = gap.max(best - cur);
        br.push(ep[n].iter().position(|&e| ties(best, e)).unwrap());
    }
    (gap, br)
}

/// Rebuild the values as a public part plus an own-state part and report
/// the largest violation: of the sum against the stored values, and of the
/// own-state part's independence from actions recorded within a segment.
pub fn decomposition_residual(gm: &GameMSpec, bundle: &EquilibriumBundle) -> Result<f64> {
    let spec = &gm.spec;
    let nn = spec.num_agents;
    let tt = spec.horizon;
    let mut worst = 0.0f64;
    // [n][cell] public part and [n][cell][x] own-state part of the next time
    let mut next_u: Vec<Vec<f64>> = Vec::new();
    let mut next_v: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut ws = StencilScratch::default();
    for t in (0..tt).rev() {
        let layer = bundle.layer(t);
        let Layout::Tree(tree) = &layer.layout else {
            return Err(Error::Bundle("value decomposition needs tree layers".into()));
        };
        let xr = spec.local_radix(t);
        let ar = spec.action_radix(t);
        let mut cur_u = vec![vec![0.0; tree.num_cells()]; nn];
        let mut cur_v = vec![vec![Vec::new(); tree.num_cells()]; nn];
        for cell in 0..tree.num_cells() {
            let b = tree.state(cell);
            let slice = &layer.strategies[cell];
            let joint = b.pi_hat.joint(&xr);
            let prob_a = |a: usize| -> f64 { ar.decode(a).iter().enumerate().map(|(n, &an)| slice.prob(n, 0, an)).product() };
            for n in 0..nn {
                let u = &spec.utility[n][t];
                let mut e_phi = 0.0;
                for (x, px) in joint.iter().enumerate() {
                    for a in 0..ar.len() {
                        e_phi += px * prob_a(a) * u.get(b.public, x, a);
                    }
                }
                cur_u[n][cell] = e_phi;
                cur_v[n][cell] = vec![0.0; spec.num_local(n, t)];
            }
            if t + 1 == tt {
                continue;
            }
            let next_layout = &bundle.layer(t + 1).layout;
            let yr = spec.obs_radix(t);
            let locate = |y: usize, a: usize, c2: usize, ws: &mut StencilScratch| -> Result<usize> {
                let nb = signaling_free_next(spec, &b.pi_hat, &yr.decode(y), a);
                let mut out = Vec::new();
                next_layout.locate(c2, nb.data(), nb.data(), ws, &mut out)?;
                Ok(out[0].0)
            };
            if gm.is_epoch(t) {
                for n in 0..nn {
                    for xn in 0..spec.num_local(n, t) {
                        cur_v[n][cell][xn] = epoch_own_value(gm, bundle, &next_u, &next_v, t, cell, n, xn, &mut ws)?;
                    }
                }
            } else {
                let y = 0;
                for n in 0..nn {
                    let mut cont_u = 0.0;
                    let mut cont_v = vec![0.0; spec.num_local(n, t)];
                    for a in 0..ar.len() {
                        let pa = prob_a(a);
                        if pa == 0.0 {
                            continue;
                        }
                        for (c2, &f) in spec.public_kernel[t].row(b.public, a).iter().enumerate() {
                            if f == 0.0 {
                                continue;
                            }
                            let nc = locate(y, a, c2, &mut ws)?;
                            cont_u += pa * f * next_u[n][nc];
                            for (xn, v) in cont_v.iter_mut().enumerate() {
                                *v += pa * f * next_v[n][nc][xn];
                            }
                        }
                    }
                    cur_u[n][cell] += cont_u;
                    cur_v[n][cell] = cont_v;
                }
            }
        }
        // sum against stored values
        for n in 0..nn {
            for cell in 0..tree.num_cells() {
                for xn in 0..spec.num_local(n, t) {
                    let d = (layer.values[n].get(cell, xn) - cur_u[n][cell] - cur_v[n][cell][xn]).abs();
                    worst = worst.max(d);
                }
            }
        }
        // own-state part depends on the public state only through the segment base
        let mut seen: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
        for cell in 0..tree.num_cells() {
            let b = tree.state(cell);
            let key = (gm.base(t, b.public), b.pi_hat.data().iter().map(|v| v.to_bits()).collect());
            match seen.get(&key) {
                Some(&other) => {
                    for n in 0..nn {
                        for (u, v) in cur_v[n][cell].iter().zip(&cur_v[n][other]) {
                            worst = worst.max((u - v).abs());
                        }
                    }
                }
                None => {
                    seen.insert(key, cell);
                }
            }
        }
        next_u = cur_u;
        next_v = cur_v;
    }
    Ok(worst)
}

/// Own-state part at an epoch: the continuation given own state `xn`, with
/// the other agents' states drawn from their beliefs.
#[allow(clippy::too_many_arguments)]
fn epoch_own_value(
    gm: &GameMSpec,
    bundle: &EquilibriumBundle,
    next_u: &[Vec<f64>],
    next_v: &[Vec<Vec<f64>>],
    t: usize,
    cell: usize,
    n: usize,
    xn: usize,
    ws: &mut StencilScratch,
) -> Result<f64> {
    let spec = &gm.spec;
    let nn = spec.num_agents;
    let layer = bundle.layer(t);
    let b = layer.layout.state(cell);
    let slice = &layer.strategies[cell];
    let xr = spec.local_radix(t);
    let ar = spec.action_radix(t);
    let yr = spec.obs_radix(t);
    let next_layout = &bundle.layer(t + 1).layout;
    let mut acc = 0.0;
    for x in 0..xr.len() {
        let xd = xr.decode(x);
        if xd[n] != xn {
            continue;
        }
        let w: f64 = (0..nn).filter(|&k| k != n).map(|k| b.pi_hat.marginal(k)[xd[k]]).product();
        for y in 0..yr.len() {
            let yd = yr.decode(y);
            let qy: f64 = (0..nn).map(|k| spec.obs_kernel[k][t].get(xd[k], 0, yd[k])).product();
            if qy == 0.0 || w == 0.0 {
                continue;
            }
            for a in 0..ar.len() {
                let pa: f64 = ar.decode(a).iter().enumerate().map(|(k, &ak)| slice.prob(k, 0, ak)).product();
                if pa == 0.0 {
                    continue;
                }
                let nb = signaling_free_next(spec, &b.pi_hat, &yd, a);
                for (c2, &f) in spec.public_kernel[t].row(b.public, a).iter().enumerate() {
                    if f == 0.0 {
                        continue;
                    }
                    let mut out = Vec::new();
                    next_layout.locate(c2, nb.data(), nb.data(), ws, &mut out)?;
                    let nc = out[0].0;
                    let vv: f64 = spec.local_kernel[n][t].row(xn, a).iter().enumerate().map(|(x2, p)| p * next_v[n][nc][x2]).sum();
                    acc += w * qy * pa * f * (next_u[n][nc] + vv);
                }
            }
        }
    }
    Ok(acc)
}
