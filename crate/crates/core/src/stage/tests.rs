use super::*;
use crate::belief::{consistent_update, CibState};
use crate::dp::backward_induct;
use crate::games::mac::{mac_spec, MacParams};
use crate::games::random::{random_game, RandomSizes};
use crate::model::{GameSpec, Utility};

fn mac_last(pi: [f64; 2]) -> CibState {
    let b = BeliefVector::from_marginals(1, &[vec![1.0 - pi[0], pi[0]], vec![1.0 - pi[1], pi[1]]]);
    CibState::new(0, b.clone(), b)
}

/// A full agent transmits with probability `beta[n]`; an empty one waits.
fn mac_slice(spec: &GameSpec, beta: [f64; 2]) -> StrategySlice {
    StrategySlice::from_fn(spec, 1, |n, x, a| match (x, a) {
        (0, 0) => 1.0,
        (1, 1) => beta[n],
        (1, 0) => 1.0 - beta[n],
        _ => 0.0,
    })
}

fn last_stage(pi: [f64; 2]) -> (GameSpec, StageGame) {
    let spec = mac_spec(&MacParams::default());
    let game = build_stage_game(&spec, None, None, &mac_last(pi)).unwrap();
    (spec, game)
}

#[test]
fn mac_last_stage_payoffs() {
    let (_, g) = last_stage([0.5, 0.5]);
    // both full, both transmit: collision, and each full queue risks a drop
    assert_eq!((g.payoff(0, 3, 3), g.payoff(1, 3, 3)), (-1.0, -1.0));
    // agent 1 full transmits alone: success, and its queue empties
    assert_eq!(g.payoff(0, 2, 2), 1.0);
}

#[test]
fn zero_game_has_zero_payoffs_and_uniform_solution() {
    let mut spec = random_game(4, &RandomSizes { horizon: 1, ..RandomSizes::default() }).unwrap();
    for u in spec.utility.iter_mut().flatten() {
        *u = Utility::from_fn(1, 4, 4, |_, _, _| 0.0);
    }
    let b = CibState::initial(&spec, 0);
    let g = build_stage_game(&spec, None, None, &b).unwrap();
    for n in 0..2 {
        for x in 0..4 {
            for a in 0..4 {
                assert_eq!(g.payoff(n, x, a), 0.0);
            }
        }
    }
    let uniform = StrategySlice::uniform(&spec, 0);
    assert!(g.best_response(0, &uniform).iter().all(|br| br.actions == vec![0, 1]));
    let sol = solve_bne_consistent(&spec, None, &b, &SolverConfig::default()).unwrap();
    assert_eq!(sol.gap, 0.0);
    assert_eq!(sol.strategy, uniform);
    assert!(sol.values.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn expected_payoffs_against_a_transmitting_opponent() {
    let (spec, g) = last_stage([0.5, 0.5]);
    let slice = mac_slice(&spec, [1.0, 1.0]);
    // transmit: success when the other is empty, collision and drop risk otherwise
    assert!((g.expected_payoff(0, 1, 1, &slice).unwrap() - (0.5 * 1.0 - 0.5 * 1.0)).abs() < 1e-15);
    // wait: the other's lone success is shared, but the full queue still risks a drop
    assert!((g.expected_payoff(0, 1, 0, &slice).unwrap() - (0.5 * (1.0 - 1.0) - 0.5 * 1.0)).abs() < 1e-15);
    let br = g.best_response(0, &slice);
    assert_eq!(br[1].actions, vec![1]);
    assert!(g.expected_payoff(0, 0, 1, &slice).is_err());
}

#[test]
fn point_mass_belief_reads_the_tensor() {
    let (spec, g) = last_stage([0.5, 1.0]);
    let slice = mac_slice(&spec, [0.3, 1.0]);
    for a in 0..2 {
        // other agent surely full and transmitting
        let want = g.payoff(0, 2 + 1, 2 * a + 1);
        assert_eq!(g.expected_payoff(0, 1, a, &slice).unwrap(), want);
    }
}

#[test]
fn mixed_last_stage_equilibrium_has_no_gap() {
    let (spec, g) = last_stage([0.8, 0.8]);
    assert!(g.bne_gap(&mac_slice(&spec, [5.0 / 6.0, 5.0 / 6.0])) <= 1e-9);
    assert!(g.bne_gap(&mac_slice(&spec, [0.9, 0.9])) > 1e-3);
}

#[test]
fn perturbing_a_strict_equilibrium_opens_a_gap() {
    let (spec, g) = last_stage([0.5, 0.5]);
    assert!(g.bne_gap(&mac_slice(&spec, [1.0, 1.0])) <= 1e-12);
    // the full type of agent 1 forgoes 0 - (-0.5) on a tenth of its mass
    let gap = g.bne_gap(&mac_slice(&spec, [0.9, 1.0]));
    assert!((gap - 0.05).abs() < 1e-12, "{gap}");
}

#[test]
fn strictly_dominant_actions_are_found() {
    for seed in 0..5 {
        let mut spec = random_game(seed, &RandomSizes { horizon: 1, states: 3, actions: 3, ..RandomSizes::default() }).unwrap();
        let ar = spec.action_radix(0);
        for n in 0..2 {
            let base = spec.utility[n][0].clone();
            spec.utility[n][0] = Utility::from_fn(1, 9, 9, |c, x, a| base.get(c, x, a) + if ar.digit(a, n) == 2 { 5.0 } else { 0.0 });
        }
        let b = CibState::initial(&spec, 0);
        let g = build_stage_game(&spec, None, None, &b).unwrap();
        let anything = StrategySlice::uniform(&spec, 0);
        for n in 0..2 {
            assert!(g.best_response(n, &anything).iter().all(|br| br.actions == vec![2]));
        }
        let sol = solve_bne_consistent(&spec, None, &b, &SolverConfig::default()).unwrap();
        assert!(sol.gap <= 1e-12);
        assert_eq!(sol.strategy, StrategySlice::pure(&spec, 0, |_, _| 2));
    }
}

#[test]
fn single_agent_stage_is_a_per_type_argmax() {
    for seed in 0..10 {
        let sizes = RandomSizes { agents: 1, horizon: 1, states: 4, actions: 3, restrict_actions: true, ..RandomSizes::default() };
        let spec = random_game(seed, &sizes).unwrap();
        let b = CibState::initial(&spec, 0);
        let sol = solve_bne_consistent(&spec, None, &b, &SolverConfig::default()).unwrap();
        assert!(sol.converged);
        for x in 0..4 {
            let adm = &spec.admissible[0][0][x];
            let best = adm.iter().map(|&a| spec.utility[0][0].get(0, x, a)).fold(f64::NEG_INFINITY, f64::max);
            assert!((sol.values[0][x] - best).abs() < 1e-12, "seed {seed} type {x}");
            for &a in adm {
                if sol.strategy.prob(0, x, a) > 0.0 {
                    assert!(spec.utility[0][0].get(0, x, a) >= best - 1e-12);
                }
            }
        }
    }
}

/// Stage gap and consistency residual recomputed from the model and the
/// stored slices alone, the residual through the per-history update.
fn recertify(spec: &GameSpec, bundle: &crate::dp::EquilibriumBundle, t: usize, cell: usize) -> (f64, f64) {
    let layer = bundle.layer(t);
    let b = layer.layout.state(cell);
    let slice = &layer.strategies[cell];
    let psi = layer.update(cell);
    let gap = build_stage_game(spec, bundle.continuation(t), psi, &b).unwrap().bne_gap(slice);
    let mut residual = 0.0f64;
    if let Some(psi) = psi {
        let yr = spec.obs_radix(t);
        let usable = spec.usable_profiles(t);
        for a in (0..spec.action_radix(t).len()).filter(|&a| usable[a]) {
            for y in 0..yr.len() {
                let ys = yr.decode(y);
                let Ok(next) = consistent_update(spec, slice, &b, &ys, a) else { continue };
                for n in 0..spec.num_agents {
                    for (u, v) in psi.next(n, ys[n], a).iter().zip(next.marginal(n)) {
                        residual = residual.max((u - v).abs());
                    }
                }
            }
        }
    }
    (gap, residual)
}

#[test]
fn certificates_match_recomputation() {
    let mut cases = vec![(mac_spec(&MacParams::default()), 8)];
    for seed in 0..2 {
        cases.push((random_game(seed, &RandomSizes { horizon: 2, ..RandomSizes::default() }).unwrap(), 2));
    }
    for (spec, m) in cases {
        let bundle = backward_induct(&spec, m, &SolverConfig::default()).unwrap();
        for t in 0..bundle.horizon() {
            for (cell, cert) in bundle.layer(t).certificates.iter().enumerate() {
                let (gap, residual) = recertify(&spec, &bundle, t, cell);
                assert!((gap - cert.gap).abs() <= 1e-12, "{} t {t} cell {cell}: {gap} vs {}", spec.name, cert.gap);
                assert!((residual - cert.residual).abs() <= 1e-12, "{} t {t} cell {cell}: {residual} vs {}", spec.name, cert.residual);
            }
        }
    }
}

#[test]
fn symmetric_mode_gives_symmetric_slices_at_symmetric_beliefs() {
    let spec = mac_spec(&MacParams::default());
    let cfg = SolverConfig { symmetric_mode: true, ..SolverConfig::default() };
    for pi in [0.1, 0.5, 0.7, 0.8, 0.95] {
        let sol = solve_bne_consistent(&spec, None, &mac_last([pi, pi]), &cfg).unwrap();
        for x in 0..2 {
            assert_eq!(sol.strategy.dist(0, x), sol.strategy.dist(1, x), "pi {pi}");
        }
    }
    let bundle = backward_induct(&spec, 10, &cfg).unwrap();
    let crate::dp::Layout::Grid(g) = &bundle.layer(0).layout else { panic!("grid layout") };
    for cell in (0..g.num_cells()).filter(|&c| g.mirror(c) == c) {
        let s = &bundle.layer(0).strategies[cell];
        for x in 0..2 {
            assert_eq!(s.dist(0, x), s.dist(1, x), "cell {cell}");
        }
    }
}

/// Equilibria of the last MAC stage found by scanning both full types'
/// transmission probabilities on a lattice that contains 5/6.
fn scanned_last_stage_equilibria(pi: [f64; 2]) -> Vec<[f64; 2]> {
    let (spec, g) = last_stage(pi);
    let steps = 120;
    let mut out = Vec::new();
    for i in 0..=steps {
        for j in 0..=steps {
            let beta = [i as f64 / steps as f64, j as f64 / steps as f64];
            if g.bne_gap(&mac_slice(&spec, beta)) <= 1e-12 {
                out.push(beta);
            }
        }
    }
    out
}

#[test]
fn enumeration_finds_every_last_stage_equilibrium() {
    let spec = mac_spec(&MacParams::default());
    for pi in [[0.5, 0.5], [0.8, 0.8], [0.9, 0.7]] {
        let want = scanned_last_stage_equilibria(pi);
        assert!(!want.is_empty());
        let mut ctx = StageContext::new(&spec, mac_last(pi), None).unwrap();
        let found = enumerate_stage(&mut ctx, &SolverConfig::default(), false, 0).unwrap();
        let betas: Vec<[f64; 2]> = found.iter().map(|s| [s.strategy.prob(0, 1, 1), s.strategy.prob(1, 1, 1)]).collect();
        for w in &want {
            assert!(
                betas.iter().any(|b| (b[0] - w[0]).abs() < 1e-6 && (b[1] - w[1]).abs() < 1e-6),
                "pi {pi:?}: {w:?} missing from {betas:?}"
            );
        }
        for (s, b) in found.iter().zip(&betas) {
            assert!(s.converged && s.gap <= 1e-6, "pi {pi:?}: {b:?}");
        }
    }
}

#[test]
fn enumeration_lists_the_selected_equilibrium_first() {
    let cfg = SolverConfig::default();
    for seed in 0..6 {
        let sizes = RandomSizes { horizon: 1, states: 2, actions: 3, ..RandomSizes::default() };
        let spec = random_game(seed, &sizes).unwrap();
        let b = CibState::initial(&spec, 0);
        let chosen = solve_bne_consistent(&spec, None, &b, &cfg).unwrap();
        let mut ctx = StageContext::new(&spec, b.clone(), None).unwrap();
        let all = enumerate_stage(&mut ctx, &cfg, false, cell_seed(cfg.seed, 0, 0)).unwrap();
        if chosen.converged {
            assert_eq!(all[0].strategy, chosen.strategy, "seed {seed}");
        }
        for (i, s) in all.iter().enumerate() {
            assert!(s.gap <= cfg.bne_tol, "seed {seed}");
            assert!(all[..i].iter().all(|e| e.strategy.distance(&s.strategy) > 1e-9));
        }
    }
}
