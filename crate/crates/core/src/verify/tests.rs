use super::*;
use crate::dp::backward_induct;
use crate::games::game_m::{game_m_generate, game_m_solve, GameMSizes};
use crate::games::mac::{mac_spec, MacParams};
use crate::games::random::{random_game, RandomSizes};
use crate::stage::{SolverConfig, StageContext};
use crate::strategy::{StrategySlice, UpdateSlice};

fn quick() -> Tolerances {
    Tolerances { rollout_samples: 20_000, ..Tolerances::default() }
}

fn mac_bundle(m: usize) -> (GameSpec, EquilibriumBundle) {
    let spec = mac_spec(&MacParams::default());
    let cfg = SolverConfig { symmetric_mode: true, ..SolverConfig::default() };
    let bundle = backward_induct(&spec, m, &cfg).unwrap();
    (spec, bundle)
}

#[test]
fn mac_bundle_is_certified() {
    let (spec, bundle) = mac_bundle(20);
    let report = verify_cib_pbe(&spec, &bundle, &quick()).unwrap();
    assert!(report.passed(), "{report}");
    assert!(!report.rollouts.is_empty());
    assert!(report.cells.iter().any(|c| c.on_path && c.time == 1));
}

#[test]
fn corrupted_slice_is_caught_where_it_was_planted() {
    let (spec, mut bundle) = mac_bundle(20);
    let layer = &bundle.layers[0];
    // a cell whose stored equilibrium is pure and strict
    let target = (0..layer.num_cells())
        .find(|&cell| {
            let s = &layer.strategies[cell];
            if s.data().iter().any(|p| *p > 1e-12 && *p < 1.0 - 1e-12) {
                return false;
            }
            let b = layer.layout.state(cell);
            if b.pi.data().iter().any(|p| *p < 0.2) {
                return false;
            }
            let cont = bundle.continuation(0);
            let mut ctx = StageContext::new(&spec, b, cont).unwrap();
            ctx.build_with_update(layer.update(cell).unwrap()).unwrap();
            ctx.gap(&StrategySlice::uniform(&spec, 0)) > 1e-3
        })
        .expect("a strict pure cell exists");
    bundle.layers[0].strategies[target] = StrategySlice::uniform(&spec, 0);
    let report = verify_cib_pbe(&spec, &bundle, &Tolerances { rollout_samples: 0, ..Tolerances::default() }).unwrap();
    assert!(!report.passed());
    let (gap, at) = report.worst_deviation();
    assert!(gap > 1e-3);
    assert_eq!(at, Some((0, target)));
    let others = report.cells.iter().filter(|c| c.on_path && (c.time, c.cell) != (0, target)).map(|c| c.deviation_gap).fold(0.0, f64::max);
    assert!(others <= 1e-4, "{others}");
}

#[test]
fn game_m_bundle_is_certified_exactly() {
    for seed in 0..3 {
        let gm = game_m_generate(seed, &GameMSizes::default()).unwrap();
        let cfg = SolverConfig { bne_tol: 1e-10, ..SolverConfig::default() };
        let sol = game_m_solve(&gm, &cfg).unwrap();
        let report = verify_cib_pbe(&gm.spec, &sol.bundle, &Tolerances { epsilon: 1e-8, ..quick() }).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.certified_set.contains("tree"));
    }
}

#[test]
fn one_shot_deviation_values_are_stage_best_responses() {
    let spec = random_game(4, &RandomSizes { horizon: 1, ..RandomSizes::default() }).unwrap();
    let bundle = backward_induct(&spec, 4, &SolverConfig::default()).unwrap();
    for n in 0..2 {
        let w = deviation_mdp_best_response(&spec, &bundle, n).unwrap();
        for cell in 0..bundle.layer(0).num_cells() {
            let mut ctx = StageContext::new(&spec, bundle.layer(0).layout.state(cell), None).unwrap();
            let best = ctx.best_values(&bundle.layer(0).strategies[cell]);
            assert_eq!(w[0].cell(cell), &best[n][..]);
        }
    }
}

/// Best total payoff from each initial state over every deterministic
/// Markov policy of a single-agent game.
fn exhaustive_policy_values(spec: &GameSpec) -> Vec<f64> {
    let tt = spec.horizon;
    let choices: Vec<Vec<Vec<usize>>> = (0..tt).map(|t| spec.admissible[0][t].clone()).collect();
    let slots: Vec<(usize, usize)> = (0..tt).flat_map(|t| (0..spec.num_local(0, t)).map(move |x| (t, x))).collect();
    let count: usize = slots.iter().map(|&(t, x)| choices[t][x].len()).product();
    let mut best = vec![f64::NEG_INFINITY; spec.num_local(0, 0)];
    for mut code in 0..count {
        let mut policy = vec![vec![0usize; 0]; tt];
        for t in 0..tt {
            policy[t] = vec![0; spec.num_local(0, t)];
        }
        for &(t, x) in &slots {
            let k = choices[t][x].len();
            policy[t][x] = choices[t][x][code % k];
            code /= k;
        }
        for (x0, b) in best.iter_mut().enumerate() {
            let mut dist = vec![0.0; spec.num_local(0, 0)];
            dist[x0] = 1.0;
            let mut total = 0.0;
            for t in 0..tt {
                let mut next = vec![0.0; if t + 1 < tt { spec.num_local(0, t + 1) } else { 0 }];
                for (x, &p) in dist.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let a = policy[t][x];
                    total += p * spec.utility[0][t].get(0, x, a);
                    for (x2, v) in next.iter_mut().enumerate() {
                        *v += p * spec.local_kernel[0][t].get(x, a, x2);
                    }
                }
                dist = next;
            }
            *b = b.max(total);
        }
    }
    best
}

#[test]
fn single_agent_deviation_values_match_exhaustive_policy_search() {
    for seed in 0..4 {
        let sizes = RandomSizes {
            agents: 1,
            horizon: 3,
            states: 2,
            actions: 2,
            observations: 2,
            restrict_actions: seed % 2 == 1,
            ..RandomSizes::default()
        };
        let spec = random_game(seed, &sizes).unwrap();
        let bundle = backward_induct(&spec, 4, &SolverConfig::default()).unwrap();
        let w = deviation_mdp_best_response(&spec, &bundle, 0).unwrap();
        let want = exhaustive_policy_values(&spec);
        for cell in 0..bundle.layer(0).num_cells() {
            for (x, v) in want.iter().enumerate() {
                assert!((w[0].get(cell, x) - v).abs() < 1e-10, "seed {seed} cell {cell}: {} vs {v}", w[0].get(cell, x));
            }
        }
    }
}

#[test]
fn full_belief_starts_at_the_prior() {
    let spec = random_game(1, &RandomSizes::default()).unwrap();
    let p = RandomProfile::new(spec.clone(), 1);
    let fb = construct_full_belief(&spec, &p, &CommonHistory::new(0)).unwrap();
    let prior = spec.initial_marginals();
    for n in 0..2 {
        assert_eq!(fb.agents[n].probs, prior[n]);
    }
    assert_eq!(fb.marginal_residual(), 0.0);
}

#[test]
fn full_belief_marginals_follow_the_update_rule() {
    for seed in 0..10 {
        let spec = random_game(seed, &RandomSizes::default()).unwrap();
        let p = RandomProfile::new(spec.clone(), seed);
        let report = check_consistency(&spec, &p, TRAJECTORY_BUDGET).unwrap();
        assert!(!report.coverage.sampled);
        assert!(report.max_residual() <= 1e-12, "seed {seed}: {:?}", &report.violations[..report.violations.len().min(3)]);
    }
}

#[test]
fn zero_denominator_branch_spreads_over_the_signaling_free_support() {
    let sizes = RandomSizes { sparsity: 0.0, ..RandomSizes::default() };
    // an instance in which agent 1 never plays some action at time 1
    let (spec, p, a1) = (0..100)
        .find_map(|seed| {
            let spec = random_game(seed, &sizes).unwrap();
            let mut p = RandomProfile::new(spec.clone(), seed);
            p.zero_prob = 1.0;
            let slice = p.strategy(&CibState::initial(&spec, 0)).unwrap();
            let unused = (0..2).find(|&a| (0..2).all(|x| slice.prob(0, x, a) == 0.0))?;
            Some((spec, p, unused))
        })
        .expect("some seed pools agent 1");
    let a = spec.action_radix(0).encode(&[a1, 0]);
    let h = CommonHistory::new(0).extended(a, &[0, 0], 0);
    let fb = construct_full_belief(&spec, &p, &h).unwrap();
    assert!(fb.fallback[0]);
    let gamma = fb.state.pi.marginal(0);
    let hat = &fb.signaling_free[0];
    for (i, m) in fb.agents[0].probs.iter().enumerate() {
        let x2 = i % 2;
        let support = hat.probs.iter().enumerate().filter(|(j, v)| j % 2 == x2 && **v != 0.0).count();
        let want = if hat.probs[i] != 0.0 { gamma[x2] / support as f64 } else { 0.0 };
        assert_eq!(*m, want);
    }
}

struct Corrupted<'a> {
    inner: &'a RandomProfile,
    agent: usize,
    y: usize,
    a: usize,
}

impl CibProfile for Corrupted<'_> {
    fn strategy(&self, b: &CibState) -> Result<StrategySlice> {
        self.inner.strategy(b)
    }

    fn update(&self, b: &CibState) -> Result<Option<UpdateSlice>> {
        let mut psi = self.inner.update(b)?;
        if let (Some(psi), 0) = (&mut psi, b.time()) {
            let row = psi.next_mut(self.agent, self.y, self.a);
            row.reverse();
            if row[0] == row[1] {
                row.copy_from_slice(&[1.0, 0.0]);
            }
        }
        Ok(psi)
    }
}

#[test]
fn corrupted_update_is_localized_to_histories_through_it() {
    let sizes = RandomSizes { sparsity: 0.0, ..RandomSizes::default() };
    let spec = random_game(5, &sizes).unwrap();
    let mut inner = RandomProfile::new(spec.clone(), 5);
    inner.zero_prob = 0.0;
    let bad = Corrupted { inner: &inner, agent: 1, y: 1, a: 2 };
    let report = check_consistency(&spec, &bad, TRAJECTORY_BUDGET).unwrap();
    assert!(report.marginal_residual > 1e-3);
    assert!(!report.violations.is_empty());
    for v in &report.violations {
        assert_eq!(v.history.actions[0], 2, "{}", v.history);
        assert_eq!(v.history.observations[0][1], 1, "{}", v.history);
    }
}

#[test]
fn mac_bundle_beliefs_are_consistent() {
    let (spec, bundle) = mac_bundle(10);
    let report = check_consistency(&spec, &bundle, TRAJECTORY_BUDGET).unwrap();
    assert!(report.max_residual() <= 1e-9, "{:?}", report.violations.first());
    // the agent's belief about the other equals the stored strategic belief
    let h = CommonHistory::new(0).extended(1, &[0, 0], 0);
    let fb = construct_full_belief(&spec, &bundle, &h).unwrap();
    let cell = bundle.layer(0).layout.nearest(&CibState::initial(&spec, 0)).unwrap();
    let psi = bundle.layer(0).update(cell).unwrap();
    for k in 0..2 {
        for (u, v) in fb.agents[k].current_marginal().iter().zip(psi.next(k, 0, 1)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn pooled_bundle_beliefs_are_signaling_free() {
    let gm = game_m_generate(11, &GameMSizes::default()).unwrap();
    let sol = game_m_solve(&gm, &SolverConfig { bne_tol: 1e-10, ..SolverConfig::default() }).unwrap();
    let report = check_consistency(&gm.spec, &sol.bundle, TRAJECTORY_BUDGET).unwrap();
    assert!(report.max_residual() <= 1e-12, "{:?}", report.violations.first());
}

#[test]
fn posteriors_factorize_under_deviations() {
    let spec = random_game(8, &RandomSizes { restrict_actions: true, ..RandomSizes::default() }).unwrap();
    let p = RandomProfile::new(spec.clone(), 8);
    let mut devs = vec![Deviation::Profile { agent: 0 }, Deviation::OpenLoop { agent: 1, actions: vec![1, 0, 1] }];
    devs.extend((0..20).map(|s| Deviation::Random { agent: s % 2, seed: s as u64 }));
    let report = check_conditional_independence(&spec, &p, &devs, TRAJECTORY_BUDGET).unwrap();
    assert!(report.coverage.checked > 100);
    assert!(report.max_residual <= 1e-10, "{:?}", report.violations.first());

    let (mac, bundle) = mac_bundle(10);
    let devs = [Deviation::OpenLoop { agent: 0, actions: vec![1, 1] }, Deviation::Profile { agent: 1 }];
    let report = check_conditional_independence(&mac, &bundle, &devs, TRAJECTORY_BUDGET).unwrap();
    assert!(report.max_residual <= 1e-10);
}

#[test]
fn behavioral_deviations_gain_nothing_over_cib_deviations() {
    for seed in 0..6 {
        let sizes = RandomSizes { horizon: 2, restrict_actions: seed % 2 == 0, ..RandomSizes::default() };
        let spec = random_game(seed, &sizes).unwrap();
        let p = RandomProfile::new(spec.clone(), seed);
        for n in 0..2 {
            let w = behavioral_witness(&spec, &p, n).unwrap();
            assert!(!w.entries.is_empty());
            assert!(w.residual <= 1e-10, "seed {seed} agent {n}: {:?}", w.entries);
        }
    }
    let (mac, bundle) = mac_bundle(10);
    let w = behavioral_witness(&mac, &bundle, 0).unwrap();
    assert!(w.residual <= 1e-10, "{:?}", w.entries);
}

#[test]
fn sampled_checks_report_partial_coverage() {
    let spec = random_game(3, &RandomSizes { horizon: 4, ..RandomSizes::default() }).unwrap();
    let p = RandomProfile::new(spec.clone(), 3);
    let report = check_consistency(&spec, &p, 20_000).unwrap();
    assert!(report.coverage.sampled);
    assert!(report.coverage.fraction() < 1.0);
    assert!(report.max_residual() <= 1e-12);
}

/// Two-sided normal tail by Simpson's rule on the density.
fn two_sided_tail(z: f64) -> f64 {
    let steps = 200_000;
    let upper = 12.0;
    let h = (upper - z) / steps as f64;
    let density = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = density(z) + density(upper);
    for i in 1..steps {
        s += density(z + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * s * h / 3.0
}

#[test]
fn rollout_threshold_keeps_the_single_test_false_alarm_rate() {
    assert_eq!(family_threshold(3.0, 1), 3.0);
    let alpha = two_sided_tail(3.0);
    assert!((alpha - 0.0026998).abs() < 1e-6);
    for k in [2, 8, 30] {
        let z = family_threshold(3.0, k);
        assert!(z > 3.0);
        let family = 1.0 - (1.0 - two_sided_tail(z)).powi(k as i32);
        assert!((family - alpha).abs() < 1e-9, "k {k}: {family} vs {alpha}");
    }
}
