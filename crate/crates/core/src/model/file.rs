//! TOML model files. The schema is documented in `docs/model-schema.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GameSpec, InitialPrior, Kernel, Radix, Utility};
use crate::error::{Diagnostic, Error, Result};

const PLACEHOLDER: &str = "-";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum When {
    At(usize),
    Named(String),
}

impl When {
    fn all() -> Self {
        When::Named("all".into())
    }

    fn matches(&self, t: usize) -> Option<bool> {
        match self {
            When::At(k) => Some(*k == t + 1),
            When::Named(s) if s == "all" => None,
            When::Named(_) => Some(false),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    meta: Meta,
    alphabets: Alphabets,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    admissible_actions: Vec<AdmissibleEntry>,
    #[serde(default)]
    kernels: Kernels,
    utilities: Vec<UtilityEntry>,
    initial: Initial,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    name: String,
    agents: usize,
    horizon: usize,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Alphabets {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    public: Vec<Entry<Vec<String>>>,
    local: Vec<Entry<Vec<String>>>,
    action: Vec<Entry<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    observation: Vec<Entry<Vec<String>>>,
}

/// A per-(agent, time) payload. `agent` is absent for public tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    agent: Option<usize>,
    time: When,
    values: T,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdmissibleEntry {
    agent: usize,
    time: When,
    /// One list of action names per local state, in alphabet order.
    sets: Vec<Vec<String>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Kernels {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    local: Vec<Entry<Table3>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    observation: Vec<Entry<Table3>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    public: Vec<Entry<Table3>>,
}

type Table3 = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtilityEntry {
    agent: usize,
    time: When,
    values: Table3,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Initial {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    public: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    local: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint: Option<Vec<f64>>,
}

/// Read, parse and validate a model file.
pub fn load_spec(path: impl AsRef<Path>) -> Result<GameSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_spec_with_context(&text, &path.display().to_string())
}

/// Parse and validate model-file text.
pub fn parse_spec(text: &str) -> Result<GameSpec> {
    parse_spec_with_context(text, "model text")
}

fn parse_spec_with_context(text: &str, context: &str) -> Result<GameSpec> {
    let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse { context: context.to_string(), message: e.to_string() })?;
    let spec = build(file).map_err(Error::Invalid)?;
    spec.validated()
}

fn pick<'a, T>(entries: &'a [Entry<T>], agent: Option<usize>, t: usize, section: &str, d: &mut Vec<Diagnostic>) -> Option<&'a T> {
    pick_by(entries.iter().map(|e| (e.agent, &e.time, &e.values)), agent, t, section, d)
}

fn pick_by<'a, T: 'a>(
    entries: impl Iterator<Item = (Option<usize>, &'a When, &'a T)>,
    agent: Option<usize>,
    t: usize,
    section: &str,
    d: &mut Vec<Diagnostic>,
) -> Option<&'a T> {
    let mut exact = Vec::new();
    let mut all = Vec::new();
    for (a, when, v) in entries {
        if a != agent {
            continue;
        }
        match when.matches(t) {
            Some(true) => exact.push(v),
            Some(false) => {}
            None => all.push(v),
        }
    }
    let loc = match agent {
        Some(a) => format!("{section}[agent={a},time={}]", t + 1),
        None => format!("{section}[time={}]", t + 1),
    };
    if exact.len() > 1 || (exact.is_empty() && all.len() > 1) {
        d.push(Diagnostic::new(loc, "duplicate entries"));
        return None;
    }
    let found = exact.first().or(all.first()).copied();
    if found.is_none() {
        d.push(Diagnostic::new(loc, "missing entry"));
    }
    found
}

fn kernel_from(table: &Table3, rows: usize, cols: usize, outcomes: usize, loc: &str, d: &mut Vec<Diagnostic>) -> Kernel {
    let mut k = Kernel::undefined(rows, cols, outcomes);
    if table.len() != rows {
        d.push(Diagnostic::new(loc, format!("expected {rows} row blocks, found {}", table.len())));
        return k;
    }
    for (r, block) in table.iter().enumerate() {
        if block.len() != cols {
            d.push(Diagnostic::new(format!("{loc}[{}]", r + 1), format!("expected {cols} action-profile rows, found {}", block.len())));
            continue;
        }
        for (c, row) in block.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            if row.len() != outcomes {
                d.push(Diagnostic::new(
                    format!("{loc}[{}][{}]", r + 1, c + 1),
                    format!("expected {outcomes} probabilities, found {}", row.len()),
                ));
                continue;
            }
            k.row_mut(r, c).copy_from_slice(row);
        }
    }
    k
}

fn build(f: ModelFile) -> std::result::Result<GameSpec, Vec<Diagnostic>> {
    let mut d = Vec::new();
    let nn = f.meta.agents;
    let tt = f.meta.horizon;
    if nn == 0 || tt == 0 {
        d.push(Diagnostic::new("meta", "agents and horizon must be positive"));
        return Err(d);
    }
    for (section, entries) in [
        ("alphabets.local", &f.alphabets.local),
        ("alphabets.action", &f.alphabets.action),
        ("alphabets.observation", &f.alphabets.observation),
    ] {
        for e in entries.iter() {
            if !matches!(e.agent, Some(a) if a >= 1 && a <= nn) {
                d.push(Diagnostic::new(section, format!("agent index {:?} outside 1..={nn}", e.agent)));
            }
        }
    }
    if !d.is_empty() {
        return Err(d);
    }

    let public_states: Vec<Vec<String>> = (0..tt)
        .map(|t| {
            if f.alphabets.public.is_empty() {
                vec![PLACEHOLDER.to_string()]
            } else {
                pick(&f.alphabets.public, None, t, "alphabets.public", &mut d).cloned().unwrap_or_default()
            }
        })
        .collect();
    let per_agent_time = |entries: &[Entry<Vec<String>>], section: &str, times: usize, d: &mut Vec<Diagnostic>| {
        (0..nn)
            .map(|n| (0..times).map(|t| pick(entries, Some(n + 1), t, section, d).cloned().unwrap_or_default()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let local_states = per_agent_time(&f.alphabets.local, "alphabets.local", tt, &mut d);
    let actions = per_agent_time(&f.alphabets.action, "alphabets.action", tt, &mut d);
    let observations = if f.alphabets.observation.is_empty() {
        vec![vec![vec![PLACEHOLDER.to_string()]; tt - 1]; nn]
    } else {
        per_agent_time(&f.alphabets.observation, "alphabets.observation", tt - 1, &mut d)
    };
    if !d.is_empty() {
        return Err(d);
    }

    let mut admissible = vec![Vec::with_capacity(tt); nn];
    for n in 0..nn {
        for t in 0..tt {
            let nx = local_states[n][t].len();
            let all: Vec<usize> = (0..actions[n][t].len()).collect();
            if f.admissible_actions.is_empty() {
                admissible[n].push(vec![all; nx]);
                continue;
            }
            let sets = pick_by(
                f.admissible_actions.iter().map(|e| (Some(e.agent), &e.time, &e.sets)),
                Some(n + 1),
                t,
                "admissible_actions",
                &mut d,
            );
            let Some(sets) = sets else {
                admissible[n].push(vec![Vec::new(); nx]);
                continue;
            };
            let mut resolved = Vec::with_capacity(sets.len());
            for (x, names) in sets.iter().enumerate() {
                let mut idx = Vec::with_capacity(names.len());
                for name in names {
                    match actions[n][t].iter().position(|a| a == name) {
                        Some(i) => idx.push(i),
                        None => d.push(Diagnostic::new(
                            format!("admissible_actions[agent={},time={},state={}]", n + 1, t + 1, x + 1),
                            format!("unknown action name {name:?}"),
                        )),
                    }
                }
                idx.sort_unstable();
                resolved.push(idx);
            }
            admissible[n].push(resolved);
        }
    }

    let radix_a = |t: usize| Radix::new((0..nn).map(|n| actions[n][t].len()).collect());
    let radix_x = |t: usize| Radix::new((0..nn).map(|n| local_states[n][t].len()).collect());

    let mut local_kernel = vec![Vec::new(); nn];
    let mut obs_kernel = vec![Vec::new(); nn];
    for n in 0..nn {
        for t in 0..tt - 1 {
            let na = radix_a(t).len();
            let nx = local_states[n][t].len();
            let loc = format!("kernels.local[agent={},time={}]", n + 1, t + 1);
            let k = match pick(&f.kernels.local, Some(n + 1), t, "kernels.local", &mut d) {
                Some(tab) => kernel_from(tab, nx, na, local_states[n][t + 1].len(), &loc, &mut d),
                None => Kernel::undefined(nx, na, local_states[n][t + 1].len()),
            };
            local_kernel[n].push(k);
            let ny = observations[n][t].len();
            let loc = format!("kernels.observation[agent={},time={}]", n + 1, t + 1);
            let k = if f.kernels.observation.is_empty() && ny == 1 {
                Kernel::from_fn(nx, na, 1, |_, _, _| 1.0)
            } else {
                match pick(&f.kernels.observation, Some(n + 1), t, "kernels.observation", &mut d) {
                    Some(tab) => kernel_from(tab, nx, na, ny, &loc, &mut d),
                    None => Kernel::undefined(nx, na, ny),
                }
            };
            obs_kernel[n].push(k);
        }
    }
    let mut public_kernel = Vec::new();
    for t in 0..tt - 1 {
        let (nc, nc2, na) = (public_states[t].len(), public_states[t + 1].len(), radix_a(t).len());
        let loc = format!("kernels.public[time={}]", t + 1);
        let k = if f.kernels.public.is_empty() && nc2 == 1 {
            Kernel::from_fn(nc, na, 1, |_, _, _| 1.0)
        } else {
            match pick(&f.kernels.public, None, t, "kernels.public", &mut d) {
                Some(tab) => kernel_from(tab, nc, na, nc2, &loc, &mut d),
                None => Kernel::undefined(nc, na, nc2),
            }
        };
        public_kernel.push(k);
    }

    let mut utility = vec![Vec::new(); nn];
    for n in 0..nn {
        for t in 0..tt {
            let (nc, nx, na) = (public_states[t].len(), radix_x(t).len(), radix_a(t).len());
            let loc = format!("utilities[agent={},time={}]", n + 1, t + 1);
            let table = pick_by(f.utilities.iter().map(|e| (Some(e.agent), &e.time, &e.values)), Some(n + 1), t, "utilities", &mut d);
            let mut u = Utility::from_fn(nc, nx, na, |_, _, _| 0.0);
            if let Some(table) = table {
                let k = kernel_from(table, nc, nx, na, &loc, &mut d);
                if k.data.iter().any(|v| v.is_nan()) {
                    d.push(Diagnostic::new(loc, "utility rows cannot be omitted"));
                }
                u.data = k.data;
            }
            utility[n].push(u);
        }
    }

    let initial_public = match &f.initial.public {
        Some(p) => p.clone(),
        None if public_states[0].len() == 1 => vec![1.0],
        None => {
            d.push(Diagnostic::new("initial.public", "missing prior over time-1 public states"));
            Vec::new()
        }
    };
    let initial_local = match (&f.initial.local, &f.initial.joint) {
        (Some(m), None) => InitialPrior::Product(m.clone()),
        (None, Some(j)) => InitialPrior::Joint(j.clone()),
        _ => {
            d.push(Diagnostic::new("initial", "give exactly one of `local` (per agent) or `joint`"));
            InitialPrior::Product(Vec::new())
        }
    };

    if !d.is_empty() {
        return Err(d);
    }
    Ok(GameSpec {
        name: f.meta.name,
        horizon: tt,
        num_agents: nn,
        public_states,
        local_states,
        actions,
        admissible,
        observations,
        local_kernel,
        obs_kernel,
        public_kernel,
        utility,
        initial_public,
        initial_local,
    })
}

fn table_of(k: &Kernel) -> Table3 {
    (0..k.rows).map(|r| (0..k.cols).map(|c| if k.is_defined(r, c) { k.row(r, c).to_vec() } else { Vec::new() }).collect()).collect()
}

/// Collapse identical per-time payloads into a single `time = "all"` entry.
fn compress<T: Clone + PartialEq>(agent: Option<usize>, per_t: Vec<T>) -> Vec<Entry<T>> {
    if per_t.is_empty() {
        return Vec::new();
    }
    if per_t.iter().all(|v| *v == per_t[0]) {
        return vec![Entry { agent, time: When::all(), values: per_t[0].clone() }];
    }
    per_t.into_iter().enumerate().map(|(t, values)| Entry { agent, time: When::At(t + 1), values }).collect()
}

fn kernel_tables(ks: &[Kernel]) -> Vec<Table3> {
    ks.iter().map(table_of).collect()
}

/// Render a spec in the model-file format.
pub fn spec_to_toml(spec: &GameSpec) -> String {
    let nn = spec.num_agents;
    let per_agent = |f: &dyn Fn(usize) -> Vec<Entry<Vec<String>>>| (0..nn).flat_map(f).collect::<Vec<_>>();
    let alphabets = Alphabets {
        public: compress(None, spec.public_states.clone()),
        local: per_agent(&|n| compress(Some(n + 1), spec.local_states[n].clone())),
        action: per_agent(&|n| compress(Some(n + 1), spec.actions[n].clone())),
        observation: per_agent(&|n| compress(Some(n + 1), spec.observations[n].clone())),
    };
    let admissible_actions = (0..nn)
        .flat_map(|n| {
            let named: Vec<Vec<Vec<String>>> = (0..spec.horizon)
                .map(|t| spec.admissible[n][t].iter().map(|set| set.iter().map(|&a| spec.actions[n][t][a].clone()).collect()).collect())
                .collect();
            compress(Some(n + 1), named).into_iter().map(move |e| AdmissibleEntry { agent: n + 1, time: e.time, sets: e.values })
        })
        .collect();
    let kernels = Kernels {
        local: (0..nn).flat_map(|n| compress(Some(n + 1), kernel_tables(&spec.local_kernel[n]))).collect(),
        observation: (0..nn).flat_map(|n| compress(Some(n + 1), kernel_tables(&spec.obs_kernel[n]))).collect(),
        public: compress(None, kernel_tables(&spec.public_kernel)),
    };
    let utilities = (0..nn)
        .flat_map(|n| {
            let tabs: Vec<Table3> = spec.utility[n]
                .iter()
                .map(|u| {
                    (0..u.publics).map(|c| (0..u.states).map(|x| (0..u.actions).map(|a| u.get(c, x, a)).collect()).collect()).collect()
                })
                .collect();
            compress(Some(n + 1), tabs).into_iter().map(move |e| UtilityEntry { agent: n + 1, time: e.time, values: e.values })
        })
        .collect();
    let initial = match &spec.initial_local {
        InitialPrior::Product(m) => Initial { public: Some(spec.initial_public.clone()), local: Some(m.clone()), joint: None },
        InitialPrior::Joint(j) => Initial { public: Some(spec.initial_public.clone()), local: None, joint: Some(j.clone()) },
    };
    let file = ModelFile {
        meta: Meta { name: spec.name.clone(), agents: nn, horizon: spec.horizon },
        alphabets,
        admissible_actions,
        kernels,
        utilities,
        initial,
    };
    toml::to_string(&file).expect("model file serialization cannot fail")
}

pub fn save_spec(spec: &GameSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, spec_to_toml(spec)).map_err(|e| Error::io(path, e))
}
