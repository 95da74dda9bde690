//! Strategy and value surfaces of the multiple access game, with the
//! last-stage closed forms alongside.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;

use cibpbe::dp::{backward_induct, refinement_curve, save_bundle, EquilibriumBundle, Layer, Layout};
use cibpbe::games::mac::{mac_beta2_closed_form, mac_spec, mac_value2_closed_form, MacParams};
use cibpbe::model::save_spec;
use cibpbe::stage::SolverConfig;

/// Cells this close to the threshold are left out of the closed-form error.
const BAND: f64 = 1e-3;

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Probability that each agent is full, and that a full agent transmits.
fn cell_row(layer: &Layer, cell: usize) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let b = layer.layout.state(cell);
    let pi = [b.pi.marginal(0)[1], b.pi.marginal(1)[1]];
    let hat = [b.pi_hat.marginal(0)[1], b.pi_hat.marginal(1)[1]];
    let beta = [layer.strategies[cell].prob(0, 1, 1), layer.strategies[cell].prob(1, 1, 1)];
    (pi, hat, beta)
}

fn write_surface(layer: &Layer, path: &Path) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "cell", "pi1", "pi2", "pi_hat1", "pi_hat2", "beta1", "beta2", "v1_empty", "v1_full", "v2_empty", "v2_full", "gap", "method",
    ])?;
    for cell in 0..layer.num_cells() {
        let (pi, hat, beta) = cell_row(layer, cell);
        let v = |n: usize, x: usize| layer.values[n].get(cell, x).to_string();
        let cert = &layer.certificates[cell];
        w.write_record([
            (cell + 1).to_string(),
            pi[0].to_string(),
            pi[1].to_string(),
            hat[0].to_string(),
            hat[1].to_string(),
            beta[0].to_string(),
            beta[1].to_string(),
            v(0, 0),
            v(0, 1),
            v(1, 0),
            v(1, 1),
            cert.gap.to_string(),
            cert.method.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest errors against the closed forms away from the threshold band.
struct ClosedFormErrors {
    beta: f64,
    value: f64,
    compared: usize,
}

fn write_closed_form(layer: &Layer, params: &MacParams, path: &Path) -> anyhow::Result<ClosedFormErrors> {
    let cs = params.threshold();
    let mut w = csv_writer(path)?;
    w.write_record([
        "pi1",
        "pi2",
        "near_threshold",
        "beta1",
        "beta1_closed",
        "beta2",
        "beta2_closed",
        "v1_empty",
        "v1_empty_closed",
        "v1_full",
        "v1_full_closed",
        "v2_empty",
        "v2_empty_closed",
        "v2_full",
        "v2_full_closed",
    ])?;
    let mut errs = ClosedFormErrors { beta: 0.0, value: 0.0, compared: 0 };
    for cell in 0..layer.num_cells() {
        let (pi, _, beta) = cell_row(layer, cell);
        let want = mac_beta2_closed_form(pi, params);
        let near = pi.iter().any(|p| (p - cs).abs() <= BAND);
        let mut row = vec![pi[0].to_string(), pi[1].to_string(), near.to_string()];
        for n in 0..2 {
            row.push(beta[n].to_string());
            row.push(want[n].to_string());
        }
        let mut value_err = 0.0f64;
        for n in 0..2 {
            for x in 0..2 {
                let got = layer.values[n].get(cell, x);
                let closed = mac_value2_closed_form(n, x, pi, params);
                value_err = value_err.max((got - closed).abs());
                row.push(got.to_string());
                row.push(closed.to_string());
            }
        }
        if !near {
            // a full queue that is never full does not pin down its strategy
            let beta_err = (0..2).filter(|&n| pi[n] > 0.0).map(|n| (beta[n] - want[n]).abs()).fold(0.0, f64::max);
            errs.beta = errs.beta.max(beta_err);
            errs.value = errs.value.max(value_err);
            errs.compared += 1;
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(errs)
}

/// Largest difference between an agent's strategy and value at a cell and
/// the other agent's at the mirrored cell.
pub fn symmetry_error(layer: &Layer) -> f64 {
    let Layout::Grid(g) = &layer.layout else { return 0.0 };
    let mut worst = 0.0f64;
    for cell in 0..layer.num_cells() {
        let m = g.mirror(cell);
        let (pi, _, beta) = cell_row(layer, cell);
        let (_, _, beta_m) = cell_row(layer, m);
        for n in 0..2 {
            if pi[n] > 0.0 {
                worst = worst.max((beta[n] - beta_m[1 - n]).abs());
            }
            for x in 0..2 {
                worst = worst.max((layer.values[n].get(cell, x) - layer.values[1 - n].get(m, x)).abs());
            }
        }
    }
    worst
}

/// Solve the game on a grid of resolution `m` and write the bundle, the
/// model, the per-time surfaces and the closed-form comparison into `out`.
pub fn run(params: &MacParams, m: usize, config: &SolverConfig, out: &Path) -> anyhow::Result<EquilibriumBundle> {
    let spec = mac_spec(params);
    let bundle = backward_induct(&spec, m, config)?;
    save_bundle(&bundle, &spec, out)?;
    save_spec(&spec, out.join("model.toml"))?;
    for layer in &bundle.layers {
        write_surface(layer, &out.join(format!("surface_t{}.csv", layer.time() + 1)))?;
    }
    let last = bundle.layers.last().expect("horizon is positive");
    let errs = write_closed_form(last, params, &out.join("closed_form.csv"))?;

    let mut summary = String::new();
    writeln!(summary, "p = {}, c = {}, T = {}, grid resolution {}", params.p, params.c, params.horizon, m)?;
    writeln!(summary, "threshold: {}", params.threshold())?;
    writeln!(
        summary,
        "last-stage closed forms over {} cells at least {BAND:e} from the threshold: strategy error {:.3e}, value error {:.3e}",
        errs.compared, errs.beta, errs.value
    )?;
    writeln!(summary, "first-stage symmetry error: {:.3e}", symmetry_error(bundle.layer(0)))?;
    fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(bundle)
}

/// Solve at each resolution and write how values move at shared grid points
/// to `refinement.csv`.
pub fn refine(params: &MacParams, resolutions: &[usize], config: &SolverConfig, out: &Path) -> anyhow::Result<()> {
    let steps = refinement_curve(&mac_spec(params), resolutions, config)?;
    fs::create_dir_all(out)?;
    let mut w = csv_writer(&out.join("refinement.csv"))?;
    w.write_record(["coarse", "fine", "time", "shared_points", "max_change", "mean_change"])?;
    for s in &steps {
        w.write_record([
            s.coarse.to_string(),
            s.fine.to_string(),
            (s.time + 1).to_string(),
            s.shared.to_string(),
            s.max_change.to_string(),
            s.mean_change.to_string(),
        ])?;
        println!("grid {} -> {}, time {}: max value change {:.3e} over {} shared points", s.coarse, s.fine, s.time + 1, s.max_change, s.shared);
    }
    w.flush()?;
    Ok(())
}
