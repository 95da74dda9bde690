//! Backward induction over grid or tree layers.

use rayon::prelude::*;

use crate::belief::{restart_agent, signaling_free_agent, BeliefVector, CibState};
use crate::error::{Error, Result};
use crate::model::GameSpec;
use crate::stage::{cell_seed, certify, enumerate_stage, solve_stage, SolveMethod, SolverConfig, StageContext, StageSolution};

use super::bundle::{spec_fingerprint, EquilibriumBundle, Layer};
use super::grid::{GridLayout, HatMode};
use super::layer::Layout;
use super::tree::TreeLayout;

/// Crossed belief grid of time `t` at resolution `m`, refused when its cell
/// count exceeds `budget`.
pub fn make_belief_grid(spec: &GameSpec, t: usize, m: usize, budget: u64) -> Result<GridLayout> {
    grid_layer(spec, t, m, HatMode::Crossed, crate::dp::Interpolation::Multilinear, budget)
}

fn grid_layer(spec: &GameSpec, t: usize, m: usize, mode: HatMode, interp: crate::dp::Interpolation, budget: u64) -> Result<GridLayout> {
    if m == 0 {
        return Err(Error::Shape("grid resolution must be at least 1".into()));
    }
    let needed = GridLayout::count(spec, t, m, mode);
    if needed > budget as u128 {
        return Err(Error::Budget { what: format!("grid cells at time {}", t + 1), needed, budget: budget as u128 });
    }
    GridLayout::new(spec, t, m, mode, interp)
}

/// Grid layouts of every time, with the signaling-free coordinate handled
/// per [`HatMode::for_time`].
pub fn grid_layouts(spec: &GameSpec, m: usize, config: &SolverConfig) -> Result<Vec<Layout>> {
    (0..spec.horizon)
        .map(|t| grid_layer(spec, t, m, HatMode::for_time(t, spec.horizon), config.interpolation, config.max_cells).map(Layout::Grid))
        .collect()
}

/// Solve the dynamic program on a belief grid of resolution `m`.
pub fn backward_induct(spec: &GameSpec, m: usize, config: &SolverConfig) -> Result<EquilibriumBundle> {
    spec.validate().map_err(Error::Invalid)?;
    let layouts = grid_layouts(spec, m, config)?;
    let symmetric = config.symmetric_mode && spec.swap_symmetric();
    let layers = sweep(spec, layouts, config, symmetric, |ctx, sym, seed| solve_stage(ctx, config, sym, seed))?;
    Ok(EquilibriumBundle {
        spec_name: spec.name.clone(),
        fingerprint: spec_fingerprint(spec),
        config: config.clone(),
        resolution: Some(m),
        layers,
    })
}

/// Run a stage solver over every cell of every layer, last time first.
/// With `symmetric`, grid cells that are the agent-swapped image of a
/// lower-numbered cell are filled from it.
pub(crate) fn sweep<F>(spec: &GameSpec, layouts: Vec<Layout>, config: &SolverConfig, symmetric: bool, solve: F) -> Result<Vec<Layer>>
where
    F: Fn(&mut StageContext<'_>, bool, u64) -> Result<StageSolution> + Sync,
{
    let horizon = layouts.len();
    let mut done: Vec<Layer> = Vec::with_capacity(horizon);
    for layout in layouts.into_iter().rev() {
        let t = layout.time();
        let cont = done.last().map(Layer::continuation);
        let cells = layout.num_cells();
        let mirror = |cell: usize| match &layout {
            Layout::Grid(g) if symmetric => g.mirror(cell),
            _ => cell,
        };
        let canonical: Vec<Option<StageSolution>> = (0..cells)
            .into_par_iter()
            .map(|cell| {
                let m = mirror(cell);
                if m < cell {
                    return Ok(None);
                }
                let mut ctx = StageContext::new(spec, layout.state(cell), cont)?;
                solve(&mut ctx, symmetric && m == cell, cell_seed(config.seed, t, cell)).map(Some)
            })
            .collect::<Result<_>>()?;
        let solutions: Vec<StageSolution> = (0..cells)
            .into_par_iter()
            .map(|cell| match &canonical[cell] {
                Some(s) => Ok(s.clone()),
                None => {
                    let src = canonical[mirror(cell)].as_ref().expect("mirror cell is canonical");
                    let mut ctx = StageContext::new(spec, layout.state(cell), cont)?;
                    let method = if src.converged { SolveMethod::Mirrored } else { SolveMethod::Failed };
                    certify(&mut ctx, src.strategy.swapped(), method, config.bne_tol)
                }
            })
            .collect::<Result<_>>()?;
        drop(canonical);
        done.push(Layer::from_solutions(layout, spec.num_agents, solutions));
    }
    done.reverse();
    Ok(done)
}

/// Every stage equilibrium found at every cell of `bundle`, indexed
/// `[time][cell]`, each computed against the bundle's own continuation
/// values. Agent-swapped cells of a symmetric grid list the swapped
/// equilibria of their mirror cell.
pub fn enumerate_bundle(spec: &GameSpec, bundle: &EquilibriumBundle, config: &SolverConfig) -> Result<Vec<Vec<Vec<StageSolution>>>> {
    let symmetric = config.symmetric_mode && spec.swap_symmetric();
    (0..bundle.horizon())
        .map(|t| {
            let layer = bundle.layer(t);
            let cont = bundle.continuation(t);
            let mirror = |cell: usize| match &layer.layout {
                Layout::Grid(g) if symmetric => g.mirror(cell),
                _ => cell,
            };
            let own: Vec<Option<Vec<StageSolution>>> = (0..layer.num_cells())
                .into_par_iter()
                .map(|cell| {
                    if mirror(cell) < cell {
                        return Ok(None);
                    }
                    let mut ctx = StageContext::new(spec, layer.layout.state(cell), cont)?;
                    enumerate_stage(&mut ctx, config, symmetric && mirror(cell) == cell, cell_seed(config.seed, t, cell)).map(Some)
                })
                .collect::<Result<_>>()?;
            (0..layer.num_cells())
                .into_par_iter()
                .map(|cell| match &own[cell] {
                    Some(list) => Ok(list.clone()),
                    None => {
                        let mut ctx = StageContext::new(spec, layer.layout.state(cell), cont)?;
                        own[mirror(cell)]
                            .as_ref()
                            .expect("mirror cell is canonical")
                            .iter()
                            .map(|s| certify(&mut ctx, s.strategy.swapped(), SolveMethod::Mirrored, config.bne_tol))
                            .collect()
                    }
                })
                .collect()
        })
        .collect()
}

/// Signaling-free next belief computed agent by agent as the stage solver
/// does, restarting agents whose observation is impossible.
pub fn signaling_free_next(spec: &GameSpec, pi_hat: &BeliefVector, y: &[usize], a: usize) -> BeliefVector {
    let t = pi_hat.time;
    let sizes: Vec<usize> = (0..spec.num_agents).map(|n| spec.num_local(n, t + 1)).collect();
    let mut flat = Vec::with_capacity(sizes.iter().sum());
    for (n, &k) in sizes.iter().enumerate() {
        let mut out = vec![0.0; k];
        if !signaling_free_agent(spec, t, n, pi_hat.marginal(n), y[n], a, &mut out) {
            restart_agent(spec, t, n, y[n], a, &mut out);
        }
        flat.extend(out);
    }
    BeliefVector::from_flat(t + 1, &sizes, flat)
}

/// Tree layers holding every state reachable from the prior when both
/// beliefs follow the signaling-free update. Beliefs are computed with the
/// same arithmetic the stage solver uses, so lookups are exact. Exact for
/// solutions whose update equals the signaling-free one.
pub fn signaling_free_tree(spec: &GameSpec, budget: u64) -> Result<Vec<Layout>> {
    let nn = spec.num_agents;
    let mut root = TreeLayout::new(0);
    for (c, &p) in spec.initial_public.iter().enumerate() {
        if p > 0.0 {
            root.insert(CibState::initial(spec, c));
        }
    }
    let mut layers = vec![root];
    for t in 0..spec.horizon.saturating_sub(1) {
        let mut next = TreeLayout::new(t + 1);
        let xr = spec.local_radix(t);
        let ar = spec.action_radix(t);
        let yr = spec.obs_radix(t);
        let usable = spec.usable_profiles(t);
        for b in layers[t].states() {
            for a in (0..ar.len()).filter(|&a| usable[a]) {
                let adig = ar.decode(a);
                for y in 0..yr.len() {
                    let ydig = yr.decode(y);
                    let possible = (0..xr.len()).any(|x| {
                        let xd = xr.decode(x);
                        (0..nn).all(|n| spec.is_admissible(n, t, xd[n], adig[n]) && spec.obs_kernel[n][t].get(xd[n], a, ydig[n]) > 0.0)
                    });
                    if !possible {
                        continue;
                    }
                    let belief = signaling_free_next(spec, &b.pi_hat, &ydig, a);
                    for (c2, &f) in spec.public_kernel[t].row(b.public, a).iter().enumerate() {
                        if f > 0.0 {
                            next.insert(CibState::new(c2, belief.clone(), belief.clone()));
                        }
                    }
                }
            }
            if next.num_cells() as u64 > budget {
                return Err(Error::Budget {
                    what: format!("tree states at time {}", t + 2),
                    needed: next.num_cells() as u128,
                    budget: budget as u128,
                });
            }
        }
        layers.push(next);
    }
    Ok(layers.into_iter().map(Layout::Tree).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::mac::{mac_beta2_closed_form, mac_spec, mac_value2_closed_form, MacParams};

    #[test]
    fn grid_budget_reports_the_count() {
        let spec = mac_spec(&MacParams::default());
        match make_belief_grid(&spec, 0, 10, 100) {
            Err(Error::Budget { needed, .. }) => assert_eq!(needed, 121 * 121),
            other => panic!("expected a budget error, got {other:?}"),
        }
        let g = make_belief_grid(&spec, 0, 2, 100).unwrap();
        assert_eq!(g.num_belief_points(), 9);
    }

    #[test]
    fn static_game_is_one_sweep_of_stage_equilibria() {
        let q = MacParams { horizon: 1, ..MacParams::default() };
        let spec = mac_spec(&q);
        let cfg = SolverConfig { symmetric_mode: true, ..SolverConfig::default() };
        let bundle = backward_induct(&spec, 10, &cfg).unwrap();
        assert!(bundle.is_complete());
        let l = bundle.layer(0);
        for cell in 0..l.num_cells() {
            let b = l.layout.state(cell);
            let pi = [b.pi.marginal(0)[1], b.pi.marginal(1)[1]];
            if pi.iter().any(|p| (p - q.threshold()).abs() < 1e-3) {
                continue;
            }
            let want = mac_beta2_closed_form(pi, &q);
            for n in 0..2 {
                assert!((l.strategies[cell].prob(n, 1, 1) - want[n]).abs() < 1e-6);
                for x in 0..2 {
                    let v = l.values[n].get(cell, x);
                    assert!((v - mac_value2_closed_form(n, x, pi, &q)).abs() < 1e-9, "{pi:?} {n} {x}");
                }
            }
        }
    }

    #[test]
    fn sweeps_are_deterministic_and_symmetric() {
        let spec = mac_spec(&MacParams::default());
        let cfg = SolverConfig { symmetric_mode: true, ..SolverConfig::default() };
        let a = backward_induct(&spec, 6, &cfg).unwrap();
        let b = backward_induct(&spec, 6, &cfg).unwrap();
        assert!(a.is_complete(), "{:?}", a.failed_cells());
        let l = a.layer(0);
        let Layout::Grid(g) = &l.layout else { unreachable!() };
        for cell in 0..l.num_cells() {
            assert_eq!(l.strategies[cell].data(), b.layer(0).strategies[cell].data());
            let m = g.mirror(cell);
            assert!((l.strategies[cell].prob(0, 1, 1) - l.strategies[m].prob(1, 1, 1)).abs() < 1e-12);
        }
    }
}
