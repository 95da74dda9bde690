//! Monte Carlo rollouts of a bundle's profile from chosen cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::belief::CibState;
use crate::dp::{signaling_free_next, EquilibriumBundle, Layout, StencilScratch};
use crate::error::Result;
use crate::model::GameSpec;

use super::profile::mix;

/// Simulated against stored value of one agent and own state at one cell.
#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub time: usize,
    pub cell: usize,
    pub agent: usize,
    pub state: usize,
    pub samples: usize,
    pub mean: f64,
    pub std_error: f64,
    pub value: f64,
    /// Standard errors allowed for this rollout.
    pub threshold: f64,
    pub passed: bool,
}

fn sample(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = i;
            if u < p {
                return i;
            }
            u -= p;
        }
    }
    last
}

/// Total payoff of agent `n` along one simulated play starting at `cell` of
/// time `t` with own state `x`. On grids, the next cell is drawn from the
/// interpolation stencil and the other agents' states are redrawn from the
/// cell's belief at every step; on trees, they are carried forward.
fn simulate(spec: &GameSpec, bundle: &EquilibriumBundle, t0: usize, cell0: usize, n: usize, x: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let nn = spec.num_agents;
    let mut cell = cell0;
    let mut xs = vec![0usize; nn];
    let mut total = 0.0;
    let mut ws = StencilScratch::default();
    let mut stencil = Vec::new();
    let mut b: CibState = bundle.layer(t0).layout.state(cell0);
    for k in 0..nn {
        xs[k] = if k == n { x } else { sample(rng, b.pi.marginal(k)) };
    }
    for t in t0..bundle.horizon() {
        let layer = bundle.layer(t);
        if t > t0 {
            b = layer.layout.state(cell);
            if !layer.layout.is_tree() {
                for k in (0..nn).filter(|&k| k != n) {
                    xs[k] = sample(rng, b.pi.marginal(k));
                }
            }
        }
        let slice = &layer.strategies[cell];
        let ar = spec.action_radix(t);
        let xr = spec.local_radix(t);
        let adig: Vec<usize> = (0..nn).map(|k| sample(rng, slice.dist(k, xs[k]))).collect();
        let a = ar.encode(&adig);
        total += spec.utility[n][t].get(b.public, xr.encode(&xs), a);
        if t + 1 == bundle.horizon() {
            break;
        }
        let y: Vec<usize> = (0..nn).map(|k| sample(rng, spec.obs_kernel[k][t].row(xs[k], a))).collect();
        for k in 0..nn {
            if k == n || layer.layout.is_tree() {
                xs[k] = sample(rng, spec.local_kernel[k][t].row(xs[k], a));
            }
        }
        let c2 = sample(rng, spec.public_kernel[t].row(b.public, a));
        let psi = layer.update(cell).expect("updates exist before the last time");
        let pi: Vec<f64> = (0..nn).flat_map(|k| psi.next(k, y[k], a).iter().copied()).collect();
        let hat = signaling_free_next(spec, &b.pi_hat, &y, a);
        let next: &Layout = &bundle.layer(t + 1).layout;
        next.locate(c2, &pi, hat.data(), &mut ws, &mut stencil)?;
        let weights: Vec<f64> = stencil.iter().map(|(_, w)| *w).collect();
        cell = stencil[sample(rng, &weights)].0;
    }
    Ok(total)
}

/// Standard errors allowed for each of `k` comparisons so that the chance of
/// any false alarm among them equals that of a single two-sided test at
/// `se_factor` standard errors. Equals `se_factor` when `k` is 1.
pub fn family_threshold(se_factor: f64, k: usize) -> f64 {
    if k <= 1 {
        return se_factor;
    }
    let z = Normal::standard();
    let alpha = 2.0 * z.sf(se_factor);
    let each = -((-alpha).ln_1p() / k as f64).exp_m1();
    z.inverse_cdf(1.0 - each / 2.0).max(se_factor)
}

/// Roll out from each of `cells` at time `t`, for every agent and every own
/// state with positive probability, and compare the sample mean with the
/// stored value. The allowed number of standard errors is `se_factor`,
/// widened by [`family_threshold`] for the number of rollouts.
pub fn rollouts(
    spec: &GameSpec,
    bundle: &EquilibriumBundle,
    t: usize,
    cells: &[usize],
    samples: usize,
    se_factor: f64,
    seed: u64,
) -> Result<Vec<RolloutResult>> {
    let layer = bundle.layer(t);
    let mut tasks = Vec::new();
    for &cell in cells {
        let b = layer.layout.state(cell);
        for n in 0..spec.num_agents {
            for x in 0..spec.num_local(n, t) {
                if b.pi.marginal(n)[x] > 0.0 {
                    tasks.push((cell, n, x));
                }
            }
        }
    }
    let threshold = family_threshold(se_factor, tasks.len());
    tasks
        .into_par_iter()
        .map(|(cell, n, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[t as u64, cell as u64, n as u64, x as u64]));
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..samples {
                let v = simulate(spec, bundle, t, cell, n, x, &mut rng)?;
                sum += v;
                sq += v * v;
            }
            let k = samples.max(1) as f64;
            let mean = sum / k;
            let var = if samples > 1 { ((sq - k * mean * mean) / (k - 1.0)).max(0.0) } else { 0.0 };
            let std_error = (var / k).sqrt();
            let value = layer.values[n].get(cell, x);
            let passed = (mean - value).abs() <= threshold * std_error + 1e-9;
            Ok(RolloutResult { time: t, cell, agent: n, state: x, samples, mean, std_error, value, threshold, passed })
        })
        .collect()
}
