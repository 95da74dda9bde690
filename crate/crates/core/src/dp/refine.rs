//! Change of solved values under grid refinement.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::GameSpec;
use crate::stage::SolverConfig;

use super::bundle::EquilibriumBundle;
use super::induct::backward_induct;

/// Value change at one time between two resolutions, over the coarse cells
/// that are also cells of the finer grid.
#[derive(Clone, Debug, Serialize)]
pub struct RefinementStep {
    pub coarse: usize,
    pub fine: usize,
    pub time: usize,
    pub shared: usize,
    pub max_change: f64,
    pub mean_change: f64,
}

/// Compare every agent's values at the belief points two bundles share.
pub fn compare_resolutions(coarse: &EquilibriumBundle, fine: &EquilibriumBundle) -> Result<Vec<RefinementStep>> {
    if coarse.fingerprint != fine.fingerprint || coarse.horizon() != fine.horizon() {
        return Err(Error::Shape("bundles solve different models".into()));
    }
    let mut out = Vec::with_capacity(coarse.horizon());
    for t in 0..coarse.horizon() {
        let (lc, lf) = (coarse.layer(t), fine.layer(t));
        let (mut shared, mut max, mut sum, mut count) = (0, 0.0f64, 0.0, 0usize);
        for cell in 0..lc.num_cells() {
            let b = lc.layout.state(cell);
            let f = lf.layout.nearest(&b)?;
            if lf.layout.state(f) != b {
                continue;
            }
            shared += 1;
            for (vc, vf) in lc.values.iter().zip(&lf.values) {
                for x in 0..vc.num_states {
                    let d = (vc.get(cell, x) - vf.get(f, x)).abs();
                    max = max.max(d);
                    sum += d;
                    count += 1;
                }
            }
        }
        out.push(RefinementStep {
            coarse: coarse.resolution.unwrap_or(0),
            fine: fine.resolution.unwrap_or(0),
            time: t,
            shared,
            max_change: max,
            mean_change: if count > 0 { sum / count as f64 } else { 0.0 },
        });
    }
    Ok(out)
}

/// Solve at each resolution in turn and compare consecutive ones.
pub fn refinement_curve(spec: &GameSpec, resolutions: &[usize], config: &SolverConfig) -> Result<Vec<RefinementStep>> {
    let mut steps = Vec::new();
    let mut prev: Option<EquilibriumBundle> = None;
    for &m in resolutions {
        let bundle = backward_induct(spec, m, config)?;
        if let Some(p) = &prev {
            steps.extend(compare_resolutions(p, &bundle)?);
        }
        prev = Some(bundle);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::mac::{mac_spec, MacParams};

    #[test]
    fn last_stage_values_do_not_move_under_refinement() {
        let spec = mac_spec(&MacParams::default());
        let cfg = SolverConfig { symmetric_mode: true, ..SolverConfig::default() };
        let steps = refinement_curve(&spec, &[5, 10, 20], &cfg).unwrap();
        assert_eq!(steps.len(), 4);
        for s in &steps {
            // every coarse point is a fine point when the resolution doubles
            assert_eq!(s.shared, (s.coarse + 1) * (s.coarse + 1), "{s:?}");
            if s.time == 1 {
                assert_eq!(s.max_change, 0.0, "{s:?}");
            }
        }
    }
}
