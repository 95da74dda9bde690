//! Seeded random games with arbitrary controlled dynamics, used by property
//! tests and brute-force checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{GameSpec, InitialPrior, Kernel, Utility};

#[derive(Clone, Debug)]
pub struct RandomSizes {
    pub agents: usize,
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    pub public_states: usize,
    /// Probability that a kernel or prior entry is forced to zero.
    pub sparsity: f64,
    /// Drop actions at random from admissible sets (at least one remains).
    pub restrict_actions: bool,
}

impl Default for RandomSizes {
    fn default() -> Self {
        Self { agents: 2, horizon: 3, states: 2, actions: 2, observations: 2, public_states: 1, sparsity: 0.2, restrict_actions: false }
    }
}

fn sparse_dist(rng: &mut ChaCha8Rng, k: usize, sparsity: f64) -> Vec<f64> {
    let keep = rng.random_range(0..k);
    let mut v: Vec<f64> = (0..k).map(|i| if i != keep && rng.random_bool(sparsity) { 0.0 } else { 0.05 + rng.random::<f64>() }).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    v
}

pub fn random_game(seed: u64, sizes: &RandomSizes) -> Result<GameSpec> {
    let RandomSizes { agents: nn, horizon: tt, states: nx, actions: na, observations: ny, public_states: nc, sparsity, .. } = *sizes;
    if nn == 0 || tt == 0 || nx == 0 || na == 0 || ny == 0 || nc == 0 {
        return Err(Error::Shape("all sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = |k: usize, p: &str| (0..k).map(|i| format!("{p}{}", i + 1)).collect::<Vec<_>>();
    let admissible: Vec<Vec<Vec<Vec<usize>>>> = (0..nn)
        .map(|_| {
            (0..tt)
                .map(|_| {
                    (0..nx)
                        .map(|_| {
                            if !sizes.restrict_actions {
                                return (0..na).collect();
                            }
                            let keep = rng.random_range(0..na);
                            (0..na).filter(|&a| a == keep || rng.random_bool(0.6)).collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let ja = na.pow(nn as u32);
    let jx = nx.pow(nn as u32);
    let mut local_kernel = vec![Vec::new(); nn];
    let mut obs_kernel = vec![Vec::new(); nn];
    let mut public_kernel = Vec::new();
    for t in 0..tt.saturating_sub(1) {
        for n in 0..nn {
            let own_digit = |a: usize| (a / na.pow((nn - 1 - n) as u32)) % na;
            let mut lk = Kernel::undefined(nx, ja, nx);
            let mut ok = Kernel::undefined(nx, ja, ny);
            for x in 0..nx {
                for a in 0..ja {
                    if admissible[n][t][x].contains(&own_digit(a)) {
                        lk.row_mut(x, a).copy_from_slice(&sparse_dist(&mut rng, nx, sparsity));
                        ok.row_mut(x, a).copy_from_slice(&sparse_dist(&mut rng, ny, sparsity));
                    }
                }
            }
            local_kernel[n].push(lk);
            obs_kernel[n].push(ok);
        }
        let mut pk = Kernel::undefined(nc, ja, nc);
        for c in 0..nc {
            for a in 0..ja {
                pk.row_mut(c, a).copy_from_slice(&sparse_dist(&mut rng, nc, sparsity));
            }
        }
        public_kernel.push(pk);
    }
    let utility: Vec<Vec<Utility>> = (0..nn)
        .map(|_| {
            (0..tt)
                .map(|_| {
                    let table: Vec<f64> = (0..nc * jx * ja).map(|_| rng.random_range(-1.0..1.0)).collect();
                    Utility::from_fn(nc, jx, ja, |c, x, a| table[(c * jx + x) * ja + a])
                })
                .collect()
        })
        .collect();
    let prior: Vec<Vec<f64>> = (0..nn).map(|_| sparse_dist(&mut rng, nx, sparsity)).collect();
    let initial_public = sparse_dist(&mut rng, nc, sparsity);
    GameSpec {
        name: format!("random-{seed}"),
        horizon: tt,
        num_agents: nn,
        public_states: vec![labels(nc, "c"); tt],
        local_states: vec![vec![labels(nx, "x"); tt]; nn],
        actions: vec![vec![labels(na, "a"); tt]; nn],
        admissible,
        observations: vec![vec![labels(ny, "y"); tt.saturating_sub(1)]; nn],
        local_kernel,
        obs_kernel,
        public_kernel,
        utility,
        initial_public,
        initial_local: InitialPrior::Product(prior),
    }
    .validated()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_games_validate_and_are_reproducible() {
        for seed in 0..20 {
            let sizes = RandomSizes { restrict_actions: seed % 2 == 0, public_states: 1 + seed as usize % 2, ..RandomSizes::default() };
            let a = random_game(seed, &sizes).unwrap();
            let b = random_game(seed, &sizes).unwrap();
            assert_eq!(a, b);
        }
    }
}
