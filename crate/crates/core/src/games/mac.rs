//! Two-agent multiple access broadcast game.
//!
//! Each agent holds a one-packet queue (`x = 0` empty, `x = 1` full) and may
//! transmit (`a = 1`) only from a full queue. A lone transmission succeeds
//! and earns both agents a unit reward; simultaneous transmissions collide
//! and both packets stay queued. A packet arrives with probability `p` each
//! slot, and an arrival into a full queue is dropped at cost `c`.

use serde::{Deserialize, Serialize};

use crate::model::{GameSpec, InitialPrior, Kernel, Utility};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    /// Arrival probability per slot.
    pub p: f64,
    /// Cost of a dropped packet.
    pub c: f64,
    pub horizon: usize,
    /// Initial probability that a queue is full, for both agents.
    pub prior: f64,
}

impl Default for MacParams {
    fn default() -> Self {
        Self { p: 0.5, c: 2.0, horizon: 2, prior: 0.5 }
    }
}

impl MacParams {
    /// Belief level above which a full-queue agent stops insisting on transmitting.
    pub fn threshold(&self) -> f64 {
        let cp = self.c * self.p;
        (1.0 + cp) / (2.0 + cp)
    }
}

/// Queue length before arrivals, given own state and both actions.
fn residual(x: usize, own: usize, other: usize) -> i64 {
    x as i64 - (own * (1 - other)) as i64
}

pub fn mac_spec(params: &MacParams) -> GameSpec {
    let tt = params.horizon;
    let p = params.p;
    let bin = || vec!["0".to_string(), "1".to_string()];
    let profile = |a: usize| (a / 2, a % 2);
    let own_other = |n: usize, a: usize| {
        let (a0, a1) = profile(a);
        if n == 0 {
            (a0, a1)
        } else {
            (a1, a0)
        }
    };
    let kernel = |n: usize| {
        let mut k = Kernel::undefined(2, 4, 2);
        for x in 0..2 {
            for a in 0..4 {
                let (own, other) = own_other(n, a);
                if own > x {
                    continue;
                }
                let row = if residual(x, own, other) >= 1 { [0.0, 1.0] } else { [1.0 - p, p] };
                k.row_mut(x, a).copy_from_slice(&row);
            }
        }
        k
    };
    let utility = |n: usize| {
        Utility::from_fn(1, 4, 4, |_, xj, a| {
            let x = if n == 0 { xj / 2 } else { xj % 2 };
            let (own, other) = own_other(n, a);
            let reward = (own ^ other) as f64;
            let drop_risk = if residual(x, own, other) == 1 { params.c * p } else { 0.0 };
            reward - drop_risk
        })
    };
    GameSpec {
        name: "multiple-access".into(),
        horizon: tt,
        num_agents: 2,
        public_states: vec![vec!["-".into()]; tt],
        local_states: vec![vec![bin(); tt]; 2],
        actions: vec![vec![bin(); tt]; 2],
        admissible: vec![vec![vec![vec![0], vec![0, 1]]; tt]; 2],
        observations: vec![vec![vec!["-".into()]; tt - 1]; 2],
        local_kernel: (0..2).map(|n| vec![kernel(n); tt - 1]).collect(),
        obs_kernel: vec![vec![Kernel::from_fn(2, 4, 1, |_, _, _| 1.0); tt - 1]; 2],
        public_kernel: vec![Kernel::from_fn(1, 4, 1, |_, _, _| 1.0); tt - 1],
        utility: (0..2).map(|n| vec![utility(n); tt]).collect(),
        initial_public: vec![1.0],
        initial_local: InitialPrior::Product(vec![vec![1.0 - params.prior, params.prior]; 2]),
    }
}

/// Last-stage equilibrium transmission probabilities of full-queue agents,
/// as a function of the beliefs that each queue is full.
pub fn mac_beta2_closed_form(pi: [f64; 2], params: &MacParams) -> [f64; 2] {
    let cs = params.threshold();
    match (pi[0] < cs, pi[1] < cs) {
        (true, true) => [1.0, 1.0],
        (true, false) => [0.0, 1.0],
        (false, true) => [1.0, 0.0],
        (false, false) => [cs / pi[0], cs / pi[1]],
    }
}

/// Last-stage equilibrium value of agent `n` with own queue state `x`.
pub fn mac_value2_closed_form(n: usize, x: usize, pi: [f64; 2], params: &MacParams) -> f64 {
    let cs = params.threshold();
    let cp = params.c * params.p;
    let (own, other) = (pi[n], pi[1 - n]);
    let own_low = own < cs;
    let other_low = other < cs;
    match (x, own_low, other_low) {
        (1, true, true) => 1.0 - other * (1.0 + cp),
        (1, true, false) => other - cp,
        (1, false, true) => 1.0,
        (1, false, false) => cs - cp,
        (_, true, true) | (_, true, false) => other,
        (_, false, true) => 0.0,
        (_, false, false) => cs,
    }
}

/// Next belief that agent `n`'s queue is full after observing the action
/// pair `(own, other)`, when a full queue transmits with probability `beta`.
///
/// The silence branch is undefined when `pi * beta = 1`; it then falls back
/// to the open-loop update of `pi_hat`.
pub fn mac_belief_update_closed_form(pi: f64, pi_hat: f64, beta: f64, own: usize, other: usize, params: &MacParams) -> f64 {
    let p = params.p;
    match (own, other) {
        (1, 1) => 1.0,
        (1, _) => p,
        _ => {
            let den = 1.0 - pi * beta;
            if den == 0.0 {
                p + pi_hat * (1.0 - p)
            } else {
                (p + pi * (1.0 - p - beta)) / den
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_instance_is_valid() {
        let spec = mac_spec(&MacParams::default());
        spec.validate().unwrap();
        assert!(spec.swap_symmetric());
        assert!((MacParams::default().threshold() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn utility_entries() {
        let spec = mac_spec(&MacParams::default());
        let u = |n: usize, x: [usize; 2], a: [usize; 2]| spec.utility[n][0].get(0, 2 * x[0] + x[1], 2 * a[0] + a[1]);
        assert_eq!((u(0, [1, 1], [1, 0]), u(1, [1, 1], [1, 0])), (1.0, 0.0));
        assert_eq!((u(0, [0, 0], [0, 0]), u(1, [0, 0], [0, 0])), (0.0, 0.0));
        assert_eq!(u(0, [1, 1], [1, 1]), -1.0);
        assert_eq!(u(0, [1, 0], [1, 0]), 1.0);
    }

    #[test]
    fn closed_form_branches() {
        let q = MacParams::default();
        assert_eq!(mac_beta2_closed_form([0.5, 0.5], &q), [1.0, 1.0]);
        let b = mac_beta2_closed_form([0.8, 0.8], &q);
        assert!((b[0] - 5.0 / 6.0).abs() < 1e-15 && (b[1] - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(mac_beta2_closed_form([0.5, 0.8], &q), [0.0, 1.0]);
        assert_eq!(mac_value2_closed_form(0, 1, [0.5, 0.5], &q), 0.0);
        assert_eq!(mac_value2_closed_form(0, 0, [0.5, 0.5], &q), 0.5);
        assert!((mac_value2_closed_form(1, 0, [0.8, 0.8], &q) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mac_belief_update_closed_form(0.5, 0.5, 1.0, 1, 1, &q), 1.0);
        assert_eq!(mac_belief_update_closed_form(0.5, 0.5, 1.0, 1, 0, &q), 0.5);
        assert_eq!(mac_belief_update_closed_form(0.5, 0.5, 1.0, 0, 1, &q), 0.5);
    }
}
