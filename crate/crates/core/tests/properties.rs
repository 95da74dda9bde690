use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cibpbe::belief::{consistent_update, joint_bayes_oracle, signaling_free_step, BeliefVector, CibState};
use cibpbe::dp::{Interpolation, SimplexGrid};
use cibpbe::games::random::{random_game, RandomSizes};
use cibpbe::model::{GameSpec, Radix};
use cibpbe::stage::build_stage_game;
use cibpbe::strategy::StrategySlice;

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    WeightedIndex::new(probs).unwrap().sample(rng)
}

/// A common history of length `steps` drawn by simulating the game with
/// uniformly random admissible actions.
fn simulate_history(spec: &GameSpec, rng: &mut ChaCha8Rng, steps: usize) -> (Vec<usize>, Vec<Vec<usize>>) {
    let nn = spec.num_agents;
    let prior = spec.initial_marginals();
    let mut x: Vec<usize> = (0..nn).map(|n| draw(rng, &prior[n])).collect();
    let (mut actions, mut observations) = (Vec::new(), Vec::new());
    for t in 0..steps {
        let adig: Vec<usize> = (0..nn)
            .map(|n| {
                let adm = &spec.admissible[n][t][x[n]];
                adm[rng.random_range(0..adm.len())]
            })
            .collect();
        let a = spec.action_radix(t).encode(&adig);
        observations.push((0..nn).map(|n| draw(rng, spec.obs_kernel[n][t].row(x[n], a))).collect());
        x = (0..nn).map(|n| draw(rng, spec.local_kernel[n][t].row(x[n], a))).collect();
        actions.push(a);
    }
    (actions, observations)
}

fn random_slice(spec: &GameSpec, t: usize, rng: &mut ChaCha8Rng) -> StrategySlice {
    let mut s = StrategySlice::from_fn(spec, t, |_, _, _| rng.random::<f64>() + 0.01);
    for n in 0..spec.num_agents {
        for x in 0..spec.num_local(n, t) {
            let d = s.dist_mut(n, x);
            // occasionally make a type play a pure action
            if rng.random_bool(0.3) {
                let keep = spec.admissible[n][t][x][0];
                d.iter_mut().enumerate().for_each(|(a, p)| *p = if a == keep { 1.0 } else { 0.0 });
            }
            let total: f64 = d.iter().sum();
            d.iter_mut().for_each(|p| *p /= total);
        }
    }
    s
}

fn game(seed: u64) -> GameSpec {
    random_game(seed, &RandomSizes { restrict_actions: true, states: 3, ..RandomSizes::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radix_round_trips(sizes in prop::collection::vec(1usize..5, 1..5), pick in any::<u64>()) {
        let r = Radix::new(sizes.clone());
        let i = (pick % r.len() as u64) as usize;
        let digits = r.decode(i);
        prop_assert_eq!(r.encode(&digits), i);
        for (n, &d) in digits.iter().enumerate() {
            prop_assert!(d < sizes[n]);
            prop_assert_eq!(r.digit(i, n), d);
        }
    }

    #[test]
    fn stencils_are_convex_combinations_of_the_query(dim in 2usize..5, m in 1usize..7, raw in prop::collection::vec(0.0f64..1.0, 5)) {
        let total: f64 = raw[..dim].iter().sum::<f64>() + 1e-9;
        let dist: Vec<f64> = raw[..dim].iter().map(|v| (v + 1e-9 / dim as f64) / total).collect();
        let grid = SimplexGrid::new(dim, m).unwrap();
        let mut stencil = Vec::new();
        grid.stencil(&dist, Interpolation::Multilinear, &mut stencil);
        let weight: f64 = stencil.iter().map(|(_, w)| w).sum();
        assert_abs_diff_eq!(weight, 1.0, epsilon = 1e-12);
        let mut back = vec![0.0; dim];
        for &(v, w) in &stencil {
            prop_assert!(w >= 0.0);
            for (b, p) in back.iter_mut().zip(grid.point(v)) {
                *b += w * p;
            }
        }
        for (b, d) in back.iter().zip(&dist) {
            assert_abs_diff_eq!(b, d, epsilon = 1e-12);
        }
    }

    #[test]
    fn signaling_free_beliefs_are_the_bayes_marginals(seed in any::<u64>(), steps in 0usize..3) {
        let spec = game(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (actions, observations) = simulate_history(&spec, &mut rng, steps);
        let oracle = joint_bayes_oracle(&spec, &actions, &observations, None).unwrap();
        let mut b = BeliefVector::prior(&spec);
        for s in 0..steps {
            b = signaling_free_step(&spec, &b, &observations[s], actions[s]).unwrap();
        }
        for n in 0..spec.num_agents {
            let want = BeliefVector::from_marginals(steps, &[oracle.marginal(steps, n)]);
            let got = BeliefVector::from_marginals(steps, &[b.marginal(n).to_vec()]);
            prop_assert!(got.total_variation(&want) <= 1e-12);
        }
    }

    #[test]
    fn consistent_updates_are_distributions(seed in any::<u64>()) {
        let spec = game(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slice = random_slice(&spec, 0, &mut rng);
        let b = CibState::initial(&spec, 0);
        let (actions, observations) = simulate_history(&spec, &mut rng, 1);
        let next = consistent_update(&spec, &slice, &b, &observations[0], actions[0]).unwrap();
        for n in 0..spec.num_agents {
            prop_assert!(next.marginal(n).iter().all(|p| *p >= 0.0));
            assert_abs_diff_eq!(next.marginal(n).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pooled_strategies_reveal_nothing(seed in any::<u64>()) {
        let spec = random_game(seed, &RandomSizes { states: 3, ..RandomSizes::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let choice: Vec<Vec<f64>> = (0..2).map(|_| rng.random::<f64>()).map(|p| vec![p, 1.0 - p]).collect();
        let pooled = StrategySlice::from_fn(&spec, 0, |n, _, a| choice[n][a]);
        let b = CibState::initial(&spec, 0);
        let (actions, observations) = simulate_history(&spec, &mut rng, 1);
        let next = consistent_update(&spec, &pooled, &b, &observations[0], actions[0]).unwrap();
        let hat = signaling_free_step(&spec, &b.pi_hat, &observations[0], actions[0]).unwrap();
        for n in 0..2 {
            for (u, v) in next.marginal(n).iter().zip(hat.marginal(n)) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stage_gap_is_the_largest_best_response_gain(seed in any::<u64>()) {
        let spec = random_game(seed, &RandomSizes { horizon: 1, states: 3, actions: 3, restrict_actions: true, ..RandomSizes::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slice = random_slice(&spec, 0, &mut rng);
        let g = build_stage_game(&spec, None, None, &CibState::initial(&spec, 0)).unwrap();
        let values = g.value_update(&slice);
        let mut gain = 0.0f64;
        for n in 0..2 {
            for (x, br) in g.best_response(n, &slice).iter().enumerate() {
                prop_assert!(values[n][x] <= br.value + 1e-12);
                gain = gain.max(br.value - values[n][x]);
            }
        }
        let gap = g.bne_gap(&slice);
        prop_assert!(gap >= 0.0);
        assert_abs_diff_eq!(gap, gain, epsilon = 1e-12);
    }
}
