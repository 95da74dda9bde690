//! Bundle directories: a JSON manifest plus per-time CSV tables.
//!
//! Times, agents, states, actions and observations are 1-based in files.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefVector, CibState};
use crate::error::{Error, Result};
use crate::model::GameSpec;
use crate::stage::{SolveMethod, SolverConfig};
use crate::strategy::{StrategySlice, UpdateSlice};

use super::bundle::{spec_fingerprint, CellCertificate, EquilibriumBundle, Layer};
use super::grid::{GridLayout, HatMode};
use super::layer::{Layout, ValueTable};
use super::tree::TreeLayout;

const FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    spec_name: String,
    fingerprint: String,
    config: SolverConfig,
    resolution: Option<usize>,
    complete: bool,
    worst_gap: f64,
    worst_residual: f64,
    failed_cells: usize,
    layers: Vec<LayerEntry>,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    time: usize,
    /// `None` for tree layers.
    hat_mode: Option<HatMode>,
    cells: usize,
}

impl FromStr for SolveMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.splitn(3, ':');
        let head = parts.next().unwrap_or_default();
        let bad = || Error::Parse { context: "solve method".into(), message: format!("unknown method '{s}'") };
        Ok(match head {
            "uniform" => SolveMethod::Uniform,
            "support" => SolveMethod::Support {
                family: parts.next().ok_or_else(bad)?.to_string(),
                pattern: parts.next().ok_or_else(bad)?.to_string(),
            },
            "pure-enumeration" => SolveMethod::PureEnumeration,
            "best-response" => SolveMethod::BestResponse { restart: parts.next().and_then(|r| r.parse().ok()).ok_or_else(bad)? },
            "cube-scan" => SolveMethod::CubeScan,
            "reduced" => SolveMethod::Reduced { path: parts.next().ok_or_else(bad)?.to_string() },
            "mirrored" => SolveMethod::Mirrored,
            "failed" => SolveMethod::Failed,
            _ => return Err(bad()),
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Bundle(e.to_string())
}

fn belief_header(spec: &GameSpec, t: usize, prefix: &str, out: &mut Vec<String>) {
    for n in 0..spec.num_agents {
        for k in 0..spec.num_local(n, t) {
            out.push(format!("{prefix}{}_{}", n + 1, k + 1));
        }
    }
}

fn state_header(spec: &GameSpec, t: usize) -> Vec<String> {
    let mut h = vec!["cell".to_string(), "c".to_string()];
    belief_header(spec, t, "pi", &mut h);
    belief_header(spec, t, "pihat", &mut h);
    h
}

/// Cell, public state and belief coordinates. The signaling-free belief is
/// left empty where it is not a coordinate of the layer.
fn state_fields(layout: &Layout, cell: usize) -> Vec<String> {
    let b = layout.state(cell);
    let mut f = vec![(cell + 1).to_string(), (b.public + 1).to_string()];
    f.extend(b.pi.data().iter().map(|v| v.to_string()));
    let ignored = matches!(layout, Layout::Grid(g) if g.mode == HatMode::Ignored);
    f.extend(b.pi_hat.data().iter().map(|v| if ignored { String::new() } else { v.to_string() }));
    f
}

/// Write `bundle` into `dir`, creating it if needed.
pub fn save_bundle(bundle: &EquilibriumBundle, spec: &GameSpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    bundle.check_against(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: FORMAT,
        spec_name: bundle.spec_name.clone(),
        fingerprint: bundle.fingerprint.clone(),
        config: bundle.config.clone(),
        resolution: bundle.resolution,
        complete: bundle.is_complete(),
        worst_gap: bundle.worst_gap(),
        worst_residual: bundle.worst_residual(),
        failed_cells: bundle.failed_cells().len(),
        layers: bundle
            .layers
            .iter()
            .zip(bundle.hat_modes())
            .map(|(l, hat_mode)| LayerEntry { time: l.time() + 1, hat_mode, cells: l.num_cells() })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Bundle(e.to_string()))?;
    let path = dir.join("manifest.json");
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
    for l in &bundle.layers {
        write_layer(spec, l, dir)?;
    }
    Ok(())
}

fn write_layer(spec: &GameSpec, l: &Layer, dir: &Path) -> Result<()> {
    let t = l.time();
    let tl = t + 1;
    let states: Vec<Vec<String>> = (0..l.num_cells()).map(|c| state_fields(&l.layout, c)).collect();
    let mut w = csv::Writer::from_path(dir.join(format!("certificates_t{tl}.csv"))).map_err(csv_err)?;
    w.write_record(["cell", "gap", "residual", "method", "converged"]).map_err(csv_err)?;
    for (cell, c) in l.certificates.iter().enumerate() {
        w.write_record([(cell + 1).to_string(), c.gap.to_string(), c.residual.to_string(), c.method.to_string(), c.converged.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    for n in 0..spec.num_agents {
        let nl = n + 1;
        let mut w = csv::Writer::from_path(dir.join(format!("values_t{tl}_agent{nl}.csv"))).map_err(csv_err)?;
        let mut h = state_header(spec, t);
        h.extend(["x".to_string(), "value".to_string()]);
        w.write_record(&h).map_err(csv_err)?;
        for (cell, s) in states.iter().enumerate() {
            for x in 0..spec.num_local(n, t) {
                let mut r = s.clone();
                r.extend([(x + 1).to_string(), l.values[n].get(cell, x).to_string()]);
                w.write_record(&r).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join(format!("strategy_t{tl}_agent{nl}.csv"))).map_err(csv_err)?;
        let mut h = state_header(spec, t);
        h.extend(["x".to_string(), "action".to_string(), "probability".to_string()]);
        w.write_record(&h).map_err(csv_err)?;
        for (cell, s) in states.iter().enumerate() {
            for x in 0..spec.num_local(n, t) {
                for &a in &spec.admissible[n][t][x] {
                    let mut r = s.clone();
                    r.extend([(x + 1).to_string(), (a + 1).to_string(), l.strategies[cell].prob(n, x, a).to_string()]);
                    w.write_record(&r).map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        if l.updates.is_empty() {
            continue;
        }
        let usable = spec.usable_profiles(t);
        let mut w = csv::Writer::from_path(dir.join(format!("update_t{tl}_agent{nl}.csv"))).map_err(csv_err)?;
        w.write_record(["cell", "y", "action_profile", "next_state", "probability"]).map_err(csv_err)?;
        for (cell, u) in l.updates.iter().enumerate() {
            for y in 0..u.num_obs(n) {
                for a in (0..u.num_profiles()).filter(|&a| usable[a]) {
                    for (k, p) in u.next(n, y, a).iter().enumerate() {
                        w.write_record([
                            (cell + 1).to_string(),
                            (y + 1).to_string(),
                            (a + 1).to_string(),
                            (k + 1).to_string(),
                            p.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))?;
    r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| Error::Bundle(format!("{}: {e}", path.display())))
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Bundle(format!("{}: bad field {} in row {:?}", path.display(), i + 1, rec)))
}

fn index(rec: &csv::StringRecord, i: usize, limit: usize, path: &Path) -> Result<usize> {
    let v: usize = field(rec, i, path)?;
    if v == 0 || v > limit {
        return Err(Error::Bundle(format!("{}: index {v} out of range 1..={limit}", path.display())));
    }
    Ok(v - 1)
}

/// Read a bundle written by [`save_bundle`] for `spec`.
pub fn load_bundle(spec: &GameSpec, dir: impl AsRef<Path>) -> Result<EquilibriumBundle> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Bundle(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Bundle(format!("unsupported bundle format {}", manifest.format)));
    }
    if manifest.fingerprint != spec_fingerprint(spec) {
        return Err(Error::Bundle("bundle was produced for a different model".into()));
    }
    if manifest.layers.len() != spec.horizon {
        return Err(Error::Bundle("manifest layer count does not match the horizon".into()));
    }
    let mut layers = Vec::with_capacity(spec.horizon);
    for (t, entry) in manifest.layers.iter().enumerate() {
        if entry.time != t + 1 {
            return Err(Error::Bundle("manifest layers are out of order".into()));
        }
        layers.push(read_layer(spec, t, entry, manifest.resolution, &manifest.config, dir)?);
    }
    let bundle = EquilibriumBundle {
        spec_name: manifest.spec_name,
        fingerprint: manifest.fingerprint,
        config: manifest.config,
        resolution: manifest.resolution,
        layers,
    };
    bundle.check_against(spec)?;
    Ok(bundle)
}

fn read_layer(
    spec: &GameSpec,
    t: usize,
    entry: &LayerEntry,
    resolution: Option<usize>,
    config: &SolverConfig,
    dir: &Path,
) -> Result<Layer> {
    let tl = t + 1;
    let nn = spec.num_agents;
    let cells = entry.cells;
    let sizes: Vec<usize> = (0..nn).map(|n| spec.num_local(n, t)).collect();
    let width: usize = sizes.iter().sum();
    let layout = match (entry.hat_mode, resolution) {
        (Some(mode), Some(m)) => Layout::Grid(GridLayout::new(spec, t, m, mode, config.interpolation)?),
        (None, _) => {
            // states come from the first agent's value table, one block per cell
            let path = dir.join(format!("values_t{tl}_agent1.csv"));
            let rows = read_rows(&path)?;
            let mut tree = TreeLayout::new(t);
            for rec in rows.iter().step_by(sizes[0]) {
                let cell = index(rec, 0, cells, &path)?;
                let c = index(rec, 1, spec.num_public(t), &path)?;
                let pi = (0..width).map(|i| field(rec, 2 + i, &path)).collect::<Result<Vec<f64>>>()?;
                let hat = (0..width).map(|i| field(rec, 2 + width + i, &path)).collect::<Result<Vec<f64>>>()?;
                let b = CibState::new(c, BeliefVector::from_flat(t, &sizes, pi), BeliefVector::from_flat(t, &sizes, hat));
                if tree.insert(b) != cell {
                    return Err(Error::Bundle(format!("{}: tree cells are not listed in order", path.display())));
                }
            }
            Layout::Tree(tree)
        }
        _ => return Err(Error::Bundle("grid layer without a resolution".into())),
    };
    if layout.num_cells() != cells {
        return Err(Error::Bundle(format!("layer {tl} should have {cells} cells, layout has {}", layout.num_cells())));
    }

    let path = dir.join(format!("certificates_t{tl}.csv"));
    let rows = read_rows(&path)?;
    if rows.len() != cells {
        return Err(Error::Bundle(format!("{}: expected {cells} rows", path.display())));
    }
    let certificates = rows
        .iter()
        .map(|r| {
            Ok(CellCertificate {
                gap: field(r, 1, &path)?,
                residual: field(r, 2, &path)?,
                method: r.get(3).unwrap_or_default().parse()?,
                converged: field(r, 4, &path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let coord = 2 + 2 * width;
    let mut strategies: Vec<StrategySlice> = vec![StrategySlice::from_fn(spec, t, |_, _, _| 0.0); cells];
    let mut values = Vec::with_capacity(nn);
    let last = t + 1 == spec.horizon;
    let mut updates: Vec<UpdateSlice> = if last { Vec::new() } else { vec![UpdateSlice::zeros(spec, t); cells] };
    for n in 0..nn {
        let nl = n + 1;
        let path = dir.join(format!("values_t{tl}_agent{nl}.csv"));
        let mut table = ValueTable::zeros(t, n, sizes[n], cells);
        let rows = read_rows(&path)?;
        if rows.len() != cells * sizes[n] {
            return Err(Error::Bundle(format!("{}: expected {} rows", path.display(), cells * sizes[n])));
        }
        for r in &rows {
            let cell = index(r, 0, cells, &path)?;
            let x = index(r, coord, sizes[n], &path)?;
            table.cell_mut(cell)[x] = field(r, coord + 1, &path)?;
        }
        values.push(table);

        let path = dir.join(format!("strategy_t{tl}_agent{nl}.csv"));
        for r in &read_rows(&path)? {
            let cell = index(r, 0, cells, &path)?;
            let x = index(r, coord, sizes[n], &path)?;
            let a = index(r, coord + 1, spec.num_actions(n, t), &path)?;
            if !spec.is_admissible(n, t, x, a) {
                return Err(Error::Bundle(format!("{}: inadmissible action {} at state {}", path.display(), a + 1, x + 1)));
            }
            strategies[cell].dist_mut(n, x)[a] = field(r, coord + 2, &path)?;
        }

        if last {
            continue;
        }
        let path = dir.join(format!("update_t{tl}_agent{nl}.csv"));
        let profiles = spec.action_radix(t).len();
        for r in &read_rows(&path)? {
            let cell = index(r, 0, cells, &path)?;
            let y = index(r, 1, spec.observations[n][t].len(), &path)?;
            let a = index(r, 2, profiles, &path)?;
            let k = index(r, 3, spec.num_local(n, t + 1), &path)?;
            updates[cell].next_mut(n, y, a)[k] = field(r, 4, &path)?;
        }
    }
    Ok(Layer { layout, strategies, updates, values, certificates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::backward_induct;
    use crate::games::mac::{mac_spec, MacParams};

    #[test]
    fn bundles_round_trip_exactly() {
        let spec = mac_spec(&MacParams::default());
        let cfg = SolverConfig { symmetric_mode: true, ..SolverConfig::default() };
        let bundle = backward_induct(&spec, 4, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, &spec, dir.path()).unwrap();
        let back = load_bundle(&spec, dir.path()).unwrap();
        assert_eq!(back.config, bundle.config);
        for (a, b) in bundle.layers.iter().zip(&back.layers) {
            assert_eq!(a.strategies, b.strategies);
            assert_eq!(a.updates, b.updates);
            assert_eq!(a.values, b.values);
            assert_eq!(a.certificates, b.certificates);
        }
        let other = mac_spec(&MacParams { c: 3.0, ..MacParams::default() });
        assert!(load_bundle(&other, dir.path()).is_err());
    }

    #[test]
    fn methods_parse_back() {
        for m in [
            SolveMethod::Uniform,
            SolveMethod::Support { family: "plain".into(), pattern: "mlh".into() },
            SolveMethod::BestResponse { restart: 3 },
            SolveMethod::Reduced { path: "support-enumeration".into() },
            SolveMethod::Failed,
        ] {
            assert_eq!(m.to_string().parse::<SolveMethod>().unwrap(), m);
        }
    }
}
