//! Common histories on the command line.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};

use cibpbe::belief::{joint_bayes_oracle, signaling_free_step, BeliefVector};
use cibpbe::dp::load_bundle;
use cibpbe::model::GameSpec;
use cibpbe::verify::{construct_full_belief, CommonHistory};

/// A label from `alphabet`, or a 1-based index into it.
fn symbol(alphabet: &[String], token: &str, what: &str) -> anyhow::Result<usize> {
    let token = token.trim();
    if let Some(i) = alphabet.iter().position(|s| s == token) {
        return Ok(i);
    }
    match token.parse::<usize>() {
        Ok(i) if (1..=alphabet.len()).contains(&i) => Ok(i - 1),
        _ => bail!("{what}: unknown symbol {token:?}, expected one of {alphabet:?}"),
    }
}

fn public(spec: &GameSpec, t: usize, token: Option<&str>) -> anyhow::Result<usize> {
    match token.map(str::trim).filter(|s| !s.is_empty()) {
        Some(tok) => symbol(&spec.public_states[t], tok, &format!("public state at time {}", t + 1)),
        None if spec.num_public(t) == 1 => Ok(0),
        None => bail!("time {} has several public states; name one", t + 1),
    }
}

fn per_agent(text: &str, alphabets: impl Fn(usize) -> Vec<String>, n_agents: usize, what: &str) -> anyhow::Result<Vec<usize>> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != n_agents {
        bail!("{what}: expected {n_agents} comma-separated entries, got {:?}", text.trim());
    }
    parts.iter().enumerate().map(|(n, tok)| symbol(&alphabets(n), tok, &format!("{what}, agent {}", n + 1))).collect()
}

pub fn parse(spec: &GameSpec, text: &str) -> anyhow::Result<CommonHistory> {
    let mut steps = text.split(';');
    let mut h = CommonHistory::new(public(spec, 0, steps.next())?);
    for (s, step) in steps.enumerate() {
        if s + 1 >= spec.horizon {
            bail!("history is longer than the horizon allows");
        }
        let parts: Vec<&str> = step.split('/').collect();
        if !(2..=3).contains(&parts.len()) {
            bail!("step {}: expected ACTIONS / OBSERVATIONS [/ PUBLIC], got {:?}", s + 1, step.trim());
        }
        let nn = spec.num_agents;
        let adig = per_agent(parts[0], |n| spec.actions[n][s].clone(), nn, &format!("actions at time {}", s + 1))?;
        let y = per_agent(parts[1], |n| spec.observations[n][s].clone(), nn, &format!("observations at time {}", s + 1))?;
        let c2 = public(spec, s + 1, parts.get(2).copied())?;
        h = h.extended(spec.action_radix(s).encode(&adig), &y, c2);
    }
    Ok(h)
}

fn marginals(spec: &GameSpec, t: usize, b: &BeliefVector) -> String {
    let mut s = String::new();
    for n in 0..spec.num_agents {
        let entries: Vec<String> = b.marginal(n).iter().zip(&spec.local_states[n][t]).map(|(p, l)| format!("{l}={p:.12}")).collect();
        let _ = writeln!(s, "  agent {}: {}", n + 1, entries.join(" "));
    }
    s
}

pub fn report(spec: &GameSpec, h: &CommonHistory, bundle: Option<&Path>) -> anyhow::Result<String> {
    let t = h.time();
    let mut out = format!("history: {h}\n");
    let dist = joint_bayes_oracle(spec, &h.actions, &h.observations, None).context("joint Bayes oracle")?;
    let oracle = BeliefVector::from_marginals(t, &(0..spec.num_agents).map(|n| dist.marginal(t, n)).collect::<Vec<_>>());
    out += &format!("Bayes marginals at time {}:\n", t + 1);
    out += &marginals(spec, t, &oracle);

    let mut hat = BeliefVector::prior(spec);
    for s in 0..t {
        hat = signaling_free_step(spec, &hat, &h.observations[s], h.actions[s])
            .with_context(|| format!("signaling-free step at time {}", s + 1))?;
    }
    out += "signaling-free belief:\n";
    out += &marginals(spec, t, &hat);
    out += &format!("total variation to the Bayes marginals: {:.3e}\n", hat.total_variation(&oracle));

    if let Some(dir) = bundle {
        let bundle = load_bundle(spec, dir)?;
        let full = construct_full_belief(spec, &bundle, h)?;
        out += "belief under the bundle's profile:\n";
        out += &marginals(spec, t, &full.state.pi);
        out += &format!("history possible under the profile: {}\n", full.possible);
        out += &format!("marginal identity residual: {:.3e}\n", full.marginal_residual());
    }
    Ok(out)
}
