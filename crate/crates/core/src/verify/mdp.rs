//! Policy evaluation and single-agent deviation MDPs over the cells of a
//! bundle, plus the set of cells reached on the equilibrium path.

use rayon::prelude::*;

use crate::dp::{signaling_free_next, EquilibriumBundle, StencilScratch, ValueTable};
use crate::error::{Error, Result};
use crate::model::GameSpec;
use crate::stage::{Continuation, StageContext};

/// Stencil weights at or below this do not make a cell reachable.
const REACH_TOL: f64 = 1e-12;

/// Quantities recomputed at one cell.
#[derive(Clone, Debug, Default)]
pub(crate) struct CellCheck {
    pub stage_gap: f64,
    /// Largest gain of a best deviation over the recomputed value.
    pub deviation_gap: f64,
    pub residual: f64,
    /// Largest difference between recomputed and stored values.
    pub value_error: f64,
    pub error: Option<String>,
}

pub(crate) struct Recomputed {
    /// `[t][n]` values of agent `n`'s best deviation.
    pub best: Vec<Vec<ValueTable>>,
    pub cells: Vec<Vec<CellCheck>>,
}

struct CellOut {
    values: Vec<Vec<f64>>,
    best: Vec<Vec<f64>>,
    check: CellCheck,
}

fn check_cell(
    spec: &GameSpec,
    bundle: &EquilibriumBundle,
    t: usize,
    cell: usize,
    cont_v: Option<Continuation<'_>>,
    cont_w: Option<Continuation<'_>>,
) -> Result<CellOut> {
    let layer = bundle.layer(t);
    let state = layer.layout.state(cell);
    let slice = &layer.strategies[cell];
    let mut ctx = StageContext::new(spec, state.clone(), cont_v)?;
    let mut residual = 0.0;
    if let Some(psi) = layer.update(cell) {
        residual = ctx.consistency_residual(slice, psi);
        ctx.build_with_update(psi)?;
    }
    let values = ctx.values(slice);
    let stage_gap = ctx.gap(slice);
    let mut ctx = StageContext::new(spec, state, cont_w)?;
    if let Some(psi) = layer.update(cell) {
        ctx.build_with_update(psi)?;
    }
    let best = ctx.best_values(slice);
    let mut deviation_gap = 0.0f64;
    let mut value_error = 0.0f64;
    for n in 0..spec.num_agents {
        for (x, (v, w)) in values[n].iter().zip(&best[n]).enumerate() {
            deviation_gap = deviation_gap.max(w - v);
            value_error = value_error.max((v - layer.values[n].get(cell, x)).abs());
        }
    }
    Ok(CellOut { values, best, check: CellCheck { stage_gap, deviation_gap, residual, value_error, error: None } })
}

/// Recompute every cell's values by policy evaluation and every agent's
/// best deviation values by backward induction over the same cells.
pub(crate) fn recompute(spec: &GameSpec, bundle: &EquilibriumBundle) -> Result<Recomputed> {
    let horizon = bundle.horizon();
    let mut values: Vec<Vec<ValueTable>> = Vec::with_capacity(horizon);
    let mut best: Vec<Vec<ValueTable>> = Vec::with_capacity(horizon);
    let mut cells: Vec<Vec<CellCheck>> = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let layer = bundle.layer(t);
        let next = bundle.layers.get(t + 1).map(|l| &l.layout);
        let cont_v = next.zip(values.last()).map(|(layout, v)| Continuation { layout, values: v });
        let cont_w = next.zip(best.last()).map(|(layout, w)| Continuation { layout, values: w });
        let outs: Vec<CellOut> = (0..layer.num_cells())
            .into_par_iter()
            .map(|cell| {
                check_cell(spec, bundle, t, cell, cont_v, cont_w).unwrap_or_else(|e| {
                    let stored: Vec<Vec<f64>> = layer.values.iter().map(|v| v.cell(cell).to_vec()).collect();
                    let best = stored.iter().map(|v| vec![f64::INFINITY; v.len()]).collect();
                    CellOut {
                        values: stored,
                        best,
                        check: CellCheck {
                            stage_gap: f64::INFINITY,
                            deviation_gap: f64::INFINITY,
                            residual: f64::INFINITY,
                            value_error: f64::INFINITY,
                            error: Some(e.to_string()),
                        },
                    }
                })
            })
            .collect();
        let mut v: Vec<ValueTable> = (0..spec.num_agents).map(|n| ValueTable::zeros(t, n, spec.num_local(n, t), outs.len())).collect();
        let mut w = v.clone();
        let mut checks = Vec::with_capacity(outs.len());
        for (cell, out) in outs.into_iter().enumerate() {
            for n in 0..spec.num_agents {
                v[n].cell_mut(cell).copy_from_slice(&out.values[n]);
                w[n].cell_mut(cell).copy_from_slice(&out.best[n]);
            }
            checks.push(out.check);
        }
        values.push(v);
        best.push(w);
        cells.push(checks);
    }
    best.reverse();
    cells.reverse();
    Ok(Recomputed { best, cells })
}

/// Cells reached with positive probability when play starts at any cell of
/// the first time and follows the stored profile, and the `(time, cell)`
/// pairs whose successors could not be placed in the next layout.
pub(crate) fn on_path(spec: &GameSpec, bundle: &EquilibriumBundle) -> (Vec<Vec<bool>>, Vec<(usize, usize)>) {
    let horizon = bundle.horizon();
    let mut reach: Vec<Vec<bool>> = bundle.layers.iter().map(|l| vec![false; l.num_cells()]).collect();
    let mut escapes = Vec::new();
    if horizon == 0 {
        return (reach, escapes);
    }
    reach[0].iter_mut().for_each(|r| *r = true);
    let nn = spec.num_agents;
    for t in 0..horizon - 1 {
        let layer = bundle.layer(t);
        let next = &bundle.layer(t + 1).layout;
        let xr = spec.local_radix(t);
        let ar = spec.action_radix(t);
        let yr = spec.obs_radix(t);
        let usable = spec.usable_profiles(t);
        let found: Vec<(usize, Vec<usize>, bool)> = (0..layer.num_cells())
            .into_par_iter()
            .filter(|&cell| reach[t][cell])
            .map(|cell| {
                let b = layer.layout.state(cell);
                let slice = &layer.strategies[cell];
                let psi = layer.update(cell).expect("updates exist before the last time");
                let mut ws = StencilScratch::default();
                let mut stencil = Vec::new();
                let mut hit = Vec::new();
                let mut escaped = false;
                for a in (0..ar.len()).filter(|&a| usable[a]) {
                    let adig = ar.decode(a);
                    // probability of the action profile, agent by agent
                    let plays = (0..nn).all(|n| (0..xr.size(n)).any(|x| b.pi.marginal(n)[x] > 0.0 && slice.prob(n, x, adig[n]) > 0.0));
                    if !plays {
                        continue;
                    }
                    for y in 0..yr.len() {
                        let ydig = yr.decode(y);
                        let possible = (0..nn).all(|n| {
                            (0..xr.size(n)).any(|x| {
                                b.pi.marginal(n)[x] > 0.0
                                    && slice.prob(n, x, adig[n]) > 0.0
                                    && spec.obs_kernel[n][t].get(x, a, ydig[n]) > 0.0
                            })
                        });
                        if !possible {
                            continue;
                        }
                        let pi: Vec<f64> = (0..nn).flat_map(|n| psi.next(n, ydig[n], a).iter().copied()).collect();
                        let hat = signaling_free_next(spec, &b.pi_hat, &ydig, a);
                        for (c2, &f) in spec.public_kernel[t].row(b.public, a).iter().enumerate() {
                            if f <= 0.0 {
                                continue;
                            }
                            if next.locate(c2, &pi, hat.data(), &mut ws, &mut stencil).is_err() {
                                escaped = true;
                                continue;
                            }
                            hit.extend(stencil.iter().filter(|(_, w)| *w > REACH_TOL).map(|(c, _)| *c));
                        }
                    }
                }
                (cell, hit, escaped)
            })
            .collect();
        for (cell, hit, escaped) in found {
            if escaped {
                escapes.push((t, cell));
            }
            for c in hit {
                reach[t + 1][c] = true;
            }
        }
    }
    (reach, escapes)
}

/// Values of agent `n`'s best unilateral CIB deviation at every cell of
/// every time, `[t]`, computed by backward induction with the same
/// interpolation the bundle uses. Fails when a cell whose stage search did
/// not converge is reachable.
pub fn deviation_mdp_best_response(spec: &GameSpec, bundle: &EquilibriumBundle, n: usize) -> Result<Vec<ValueTable>> {
    bundle.check_against(spec)?;
    if n >= spec.num_agents {
        return Err(Error::Shape(format!("agent {} out of range", n + 1)));
    }
    let (reach, _) = on_path(spec, bundle);
    for (t, l) in bundle.layers.iter().enumerate() {
        for (cell, cert) in l.certificates.iter().enumerate() {
            if reach[t][cell] && !cert.converged {
                return Err(Error::Bundle(format!("reachable cell {} at time {} failed to solve", cell + 1, t + 1)));
            }
        }
    }
    let mut rec = recompute(spec, bundle)?;
    Ok(rec.best.iter_mut().map(|w| w.swap_remove(n)).collect())
}
