//! CIB strategy profiles evaluated at arbitrary common-information states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::{consistent_agent, restart_agent, signaling_free_agent, BeliefVector, CibState};
use crate::dp::{signaling_free_next, EquilibriumBundle, Layout, TreeLayout, ValueTable};
use crate::error::{Error, Result};
use crate::model::GameSpec;
use crate::stage::{Continuation, StageContext};
use crate::strategy::{StrategySlice, UpdateSlice};

/// A pair (strategy, update rule) that can be queried at any state.
pub trait CibProfile {
    fn strategy(&self, b: &CibState) -> Result<StrategySlice>;
    /// `None` at the last time.
    fn update(&self, b: &CibState) -> Result<Option<UpdateSlice>>;
}

/// Bundles are played by reading the slices of the cell that represents `b`.
impl CibProfile for EquilibriumBundle {
    fn strategy(&self, b: &CibState) -> Result<StrategySlice> {
        let cell = self.cell_at(b)?;
        Ok(self.layer(b.time()).strategies[cell].clone())
    }

    fn update(&self, b: &CibState) -> Result<Option<UpdateSlice>> {
        let cell = self.cell_at(b)?;
        Ok(self.layer(b.time()).update(cell).cloned())
    }
}

/// Next common-information state after `(a, y, c2)` from `b`, with the
/// strategic belief read from `psi` and the signaling-free one propagated.
pub fn advance(spec: &GameSpec, b: &CibState, psi: &UpdateSlice, a: usize, y: &[usize], c2: usize) -> CibState {
    let t = b.time();
    let sizes: Vec<usize> = (0..spec.num_agents).map(|n| spec.num_local(n, t + 1)).collect();
    let flat: Vec<f64> = (0..spec.num_agents).flat_map(|n| psi.next(n, y[n], a).iter().copied()).collect();
    let pi = BeliefVector::from_flat(t + 1, &sizes, flat);
    CibState::new(c2, pi, signaling_free_next(spec, &b.pi_hat, y, a))
}

/// Update consistent with `slice` at `b`, falling back to the signaling-free
/// update and then to the restart rule.
pub fn consistent_slice(spec: &GameSpec, slice: &StrategySlice, b: &CibState) -> UpdateSlice {
    let t = b.time();
    let mut psi = UpdateSlice::zeros(spec, t);
    let usable = spec.usable_profiles(t);
    for a in (0..usable.len()).filter(|&a| usable[a]) {
        for n in 0..spec.num_agents {
            for y in 0..psi.num_obs(n) {
                let out = psi.next_mut(n, y, a);
                if !consistent_agent(spec, t, n, slice, b.pi.marginal(n), y, a, out)
                    && !signaling_free_agent(spec, t, n, b.pi_hat.marginal(n), y, a, out)
                {
                    restart_agent(spec, t, n, y, a, out);
                }
            }
        }
    }
    psi
}

pub(crate) fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = (h ^ p).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
        h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 29;
    }
    h
}

/// Random strategy whose action probabilities are softmax functions of the
/// strategic belief, paired with its consistent update. Some actions get
/// probability zero so that Bayes denominators can vanish.
#[derive(Clone, Debug)]
pub struct RandomProfile {
    pub spec: GameSpec,
    pub seed: u64,
    /// Chance that an admissible action is never played.
    pub zero_prob: f64,
}

impl RandomProfile {
    pub fn new(spec: GameSpec, seed: u64) -> Self {
        Self { spec, seed, zero_prob: 0.25 }
    }
}

impl CibProfile for RandomProfile {
    fn strategy(&self, b: &CibState) -> Result<StrategySlice> {
        let spec = &self.spec;
        let t = b.time();
        let features = b.pi.data();
        let mut slice = StrategySlice::from_fn(spec, t, |_, _, _| 0.0);
        for n in 0..spec.num_agents {
            for x in 0..spec.num_local(n, t) {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, &[t as u64, n as u64, x as u64]));
                let adm = &spec.admissible[n][t][x];
                let keep = adm[rng.random_range(0..adm.len())];
                let dist = slice.dist_mut(n, x);
                for &a in adm {
                    let bias: f64 = rng.random_range(-2.0..2.0);
                    let logit = features.iter().fold(bias, |acc, f| acc + rng.random_range(-2.0..2.0) * f);
                    let off = a != keep && rng.random_bool(self.zero_prob);
                    dist[a] = if off { 0.0 } else { logit.exp() };
                }
                let s: f64 = dist.iter().sum();
                dist.iter_mut().for_each(|p| *p /= s);
            }
        }
        Ok(slice)
    }

    fn update(&self, b: &CibState) -> Result<Option<UpdateSlice>> {
        if b.time() + 1 >= self.spec.horizon {
            return Ok(None);
        }
        Ok(Some(consistent_slice(&self.spec, &self.strategy(b)?, b)))
    }
}

/// Values indexed `[agent][local state]`.
pub type TypeValues = Vec<Vec<f64>>;

/// Exact values at `b` when everyone follows `profile`, and the values of a
/// unilateral best deviation of each agent, computed by expanding every
/// continuation state.
pub fn profile_values(spec: &GameSpec, profile: &dyn CibProfile, b: &CibState) -> Result<(TypeValues, TypeValues)> {
    let t = b.time();
    if t >= spec.horizon {
        return Err(Error::Shape("state lies past the horizon".into()));
    }
    let slice = profile.strategy(b)?;
    let nn = spec.num_agents;
    if t + 1 == spec.horizon {
        let mut ctx = StageContext::new(spec, b.clone(), None)?;
        return Ok((ctx.values(&slice), ctx.best_values(&slice)));
    }
    let psi = profile.update(b)?.ok_or_else(|| Error::Bundle(format!("no update at time {}", t + 1)))?;
    let mut tree = TreeLayout::new(t + 1);
    let ar = spec.action_radix(t);
    let yr = spec.obs_radix(t);
    let usable = spec.usable_profiles(t);
    for a in (0..ar.len()).filter(|&a| usable[a]) {
        for y in 0..yr.len() {
            let ydig = yr.decode(y);
            for (c2, &f) in spec.public_kernel[t].row(b.public, a).iter().enumerate() {
                if f > 0.0 {
                    tree.insert(advance(spec, b, &psi, a, &ydig, c2));
                }
            }
        }
    }
    let cells = tree.num_cells();
    let mut v: Vec<ValueTable> = (0..nn).map(|n| ValueTable::zeros(t + 1, n, spec.num_local(n, t + 1), cells)).collect();
    let mut w = v.clone();
    for cell in 0..cells {
        let (vc, wc) = profile_values(spec, profile, tree.state(cell))?;
        for n in 0..nn {
            v[n].cell_mut(cell).copy_from_slice(&vc[n]);
            w[n].cell_mut(cell).copy_from_slice(&wc[n]);
        }
    }
    let layout = Layout::Tree(tree);
    let mut ctx = StageContext::new(spec, b.clone(), Some(Continuation { layout: &layout, values: &v }))?;
    ctx.build_with_update(&psi)?;
    let values = ctx.values(&slice);
    let mut ctx = StageContext::new(spec, b.clone(), Some(Continuation { layout: &layout, values: &w }))?;
    ctx.build_with_update(&psi)?;
    Ok((values, ctx.best_values(&slice)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::random::{random_game, RandomSizes};

    #[test]
    fn random_profiles_are_valid_and_deterministic() {
        let spec = random_game(3, &RandomSizes { restrict_actions: true, ..RandomSizes::default() }).unwrap();
        let p = RandomProfile::new(spec.clone(), 7);
        let b = CibState::initial(&spec, 0);
        let s = p.strategy(&b).unwrap();
        s.check(&spec, 1e-12).unwrap();
        assert_eq!(s, p.strategy(&b).unwrap());
        let psi = p.update(&b).unwrap().unwrap();
        let usable = spec.usable_profiles(0);
        for a in (0..usable.len()).filter(|&a| usable[a]) {
            for n in 0..2 {
                for y in 0..psi.num_obs(n) {
                    let row = psi.next(n, y, a);
                    assert!(row.iter().all(|v| *v >= 0.0));
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn deviation_values_dominate_profile_values() {
        for seed in 0..5 {
            let spec = random_game(seed, &RandomSizes::default()).unwrap();
            let p = RandomProfile::new(spec.clone(), seed);
            let (v, w) = profile_values(&spec, &p, &CibState::initial(&spec, 0)).unwrap();
            for n in 0..2 {
                for x in 0..2 {
                    assert!(w[n][x] >= v[n][x] - 1e-12);
                }
            }
        }
    }
}
