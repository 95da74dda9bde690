use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::CibState;
use crate::dp::Interpolation;
use crate::error::Result;
use crate::model::GameSpec;
use crate::strategy::{StrategySlice, UpdateSlice};

use super::context::{Continuation, StageContext};
use super::nash::lm_unit_box;
use super::ties;

/// Tolerances and search budgets of the stage and backward-induction solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Accept a stage strategy when no type gains more than this by deviating.
    pub bne_tol: f64,
    /// Required agreement of stored updates with Bayes' rule.
    pub consistency_tol: f64,
    /// Iterations per damped best-response run.
    pub max_iters: usize,
    /// Random restarts of damped best response.
    pub restarts: usize,
    /// Weight of the best response in each damped step.
    pub damping: f64,
    /// Solve only one cell of each pair related by exchanging the two
    /// agents of a symmetric game, and prefer symmetric equilibria at
    /// symmetric cells.
    pub symmetric_mode: bool,
    /// Scan the whole strategy cube when other searches fail (games with at
    /// most two admissible actions per type).
    pub grid_fallback: bool,
    pub seed: u64,
    pub interpolation: Interpolation,
    /// Largest number of cells per time.
    pub max_cells: u64,
    /// Step of one-dimensional scans and of the full cube scan.
    pub fallback_resolution: f64,
    /// Points of a multi-dimensional coarse scan.
    pub scan_budget: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            bne_tol: 1e-6,
            consistency_tol: 1e-9,
            max_iters: 10_000,
            restarts: 16,
            damping: 0.5,
            symmetric_mode: false,
            grid_fallback: true,
            seed: 0,
            interpolation: Interpolation::Multilinear,
            max_cells: 50_000_000,
            fallback_resolution: 1e-3,
            scan_budget: 4096,
        }
    }
}

/// Which search produced a stage solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Uniform,
    /// Structured support search: tying family and pattern of mixing,
    /// low and high actions.
    Support {
        family: String,
        pattern: String,
    },
    PureEnumeration,
    /// Damped best response; restart 0 starts from the uniform slice.
    BestResponse {
        restart: usize,
    },
    CubeScan,
    /// Equilibrium of the reduced complete-information game.
    Reduced {
        path: String,
    },
    /// Taken from the agent-swapped cell.
    Mirrored,
    /// Best candidate of a failed search.
    Failed,
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveMethod::Uniform => write!(f, "uniform"),
            SolveMethod::Support { family, pattern } => write!(f, "support:{family}:{pattern}"),
            SolveMethod::PureEnumeration => write!(f, "pure-enumeration"),
            SolveMethod::BestResponse { restart } => write!(f, "best-response:{restart}"),
            SolveMethod::CubeScan => write!(f, "cube-scan"),
            SolveMethod::Reduced { path } => write!(f, "reduced:{path}"),
            SolveMethod::Mirrored => write!(f, "mirrored"),
            SolveMethod::Failed => write!(f, "failed"),
        }
    }
}

/// A stage strategy, the update consistent with it, the resulting values
/// and the certificates.
#[derive(Clone, Debug)]
pub struct StageSolution {
    pub strategy: StrategySlice,
    /// `None` at the last time.
    pub update: Option<UpdateSlice>,
    /// `[n][x]` own-type conditional values.
    pub values: Vec<Vec<f64>>,
    pub gap: f64,
    pub residual: f64,
    pub method: SolveMethod,
    pub converged: bool,
    pub evaluations: usize,
}

/// Deterministic per-cell generator seed.
pub fn cell_seed(seed: u64, t: usize, cell: usize) -> u64 {
    seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (cell as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Solve the joint fixed point at `b`: a strategy slice that is an
/// equilibrium of the stage game built from the update consistent with it.
pub fn solve_bne_consistent(spec: &GameSpec, next: Option<Continuation<'_>>, b: &CibState, config: &SolverConfig) -> Result<StageSolution> {
    let symmetric = config.symmetric_mode && spec.swap_symmetric() && b.swapped() == *b;
    let mut ctx = StageContext::new(spec, b.clone(), next)?;
    solve_stage(&mut ctx, config, symmetric, cell_seed(config.seed, b.time(), 0))
}

/// Certificates and values of `slice` at `ctx`, with the consistent update.
pub fn certify(ctx: &mut StageContext<'_>, slice: StrategySlice, method: SolveMethod, tol: f64) -> Result<StageSolution> {
    ctx.build(&slice)?;
    certify_with_update(ctx, slice, None, method, tol)
}

/// Certificates and values of `slice` played with a given update. The
/// residual measures how far `psi` is from consistency with `slice`.
pub fn certify_with_update(
    ctx: &mut StageContext<'_>,
    slice: StrategySlice,
    psi: Option<&UpdateSlice>,
    method: SolveMethod,
    tol: f64,
) -> Result<StageSolution> {
    if let Some(psi) = psi {
        ctx.build_with_update(psi)?;
    }
    let gap = ctx.gap(&slice);
    let values = ctx.values(&slice);
    let update = ctx.psi.clone();
    let residual = update.as_ref().map_or(0.0, |u| ctx.consistency_residual(&slice, u));
    Ok(StageSolution {
        converged: gap <= tol && method != SolveMethod::Failed,
        strategy: slice,
        update,
        values,
        gap,
        residual,
        method,
        evaluations: ctx.evaluations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Level {
    Mix,
    Lo,
    Hi,
}

impl Level {
    fn symbol(self) -> char {
        match self {
            Level::Mix => 'm',
            Level::Lo => 'l',
            Level::Hi => 'h',
        }
    }
}

/// A type with exactly two admissible actions; its strategy is the
/// probability `beta` of the higher one.
#[derive(Clone, Copy, Debug)]
struct Param {
    n: usize,
    x: usize,
    lo: usize,
    hi: usize,
}

struct Search<'c, 'a> {
    ctx: &'c mut StageContext<'a>,
    cfg: &'c SolverConfig,
    symmetric: bool,
    best: Option<(f64, StrategySlice)>,
    work: StrategySlice,
}

impl<'c, 'a> Search<'c, 'a> {
    fn eval(&mut self, slice: &StrategySlice) -> Result<f64> {
        let g = self.ctx.evaluate(slice)?;
        if self.best.as_ref().is_none_or(|(b, _)| g < *b) {
            self.best = Some((g, slice.clone()));
        }
        Ok(g)
    }

    fn set_params(&mut self, params: &[Param], beta: &[f64]) {
        for (p, &b) in params.iter().zip(beta) {
            let d = self.work.dist_mut(p.n, p.x);
            d[p.lo] = 1.0 - b;
            d[p.hi] = b;
        }
    }

    /// Mean payoff advantage of the high action over the low one, per group.
    fn group_residual(&mut self, params: &[Param], groups: &[Vec<usize>], beta: &[f64], out: &mut [f64]) -> Result<()> {
        self.set_params(params, beta);
        self.ctx.evaluations += 1;
        self.ctx.build(&self.work)?;
        let ep = self.ctx.payoffs(&self.work);
        for (o, g) in out.iter_mut().zip(groups) {
            *o = g
                .iter()
                .map(|&i| ep.get(params[i].n, params[i].x, params[i].hi) - ep.get(params[i].n, params[i].x, params[i].lo))
                .sum::<f64>()
                / g.len() as f64;
        }
        Ok(())
    }

    fn accept_beta(&mut self, params: &[Param], beta: &[f64]) -> Result<Option<StrategySlice>> {
        self.set_params(params, beta);
        let slice = self.work.clone();
        let g = self.eval(&slice)?;
        Ok((g <= self.cfg.bne_tol).then_some(slice))
    }

    fn params(&self) -> Option<Vec<Param>> {
        let g = &self.ctx.game;
        let mut out = Vec::new();
        for n in 0..g.num_agents() {
            for x in 0..g.num_states(n) {
                match g.admissible(n, x) {
                    [_] => {}
                    [lo, hi] => out.push(Param { n, x, lo: *lo, hi: *hi }),
                    _ => return None,
                }
            }
        }
        Some(out)
    }

    fn families(&self, params: &[Param]) -> Vec<(String, Vec<Vec<usize>>)> {
        let group_by = |key: &dyn Fn(&Param) -> (usize, usize, usize, usize)| {
            let mut keys: Vec<(usize, usize, usize, usize)> = Vec::new();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for (i, p) in params.iter().enumerate() {
                let k = key(p);
                match keys.iter().position(|q| *q == k) {
                    Some(j) => groups[j].push(i),
                    None => {
                        keys.push(k);
                        groups.push(vec![i]);
                    }
                }
            }
            groups
        };
        let mut fams: Vec<(String, Vec<Vec<usize>>)> = Vec::new();
        if self.symmetric {
            fams.push(("symmetric-pooled".into(), group_by(&|p| (0, 0, p.lo, p.hi))));
            fams.push(("symmetric".into(), group_by(&|p| (0, p.x, p.lo, p.hi))));
        }
        fams.push(("pooled".into(), group_by(&|p| (p.n, 0, p.lo, p.hi))));
        fams.push(("plain".into(), group_by(&|p| (p.n, p.x, p.lo, p.hi))));
        let mut out: Vec<(String, Vec<Vec<usize>>)> = Vec::new();
        for f in fams {
            if !out.iter().any(|(_, g)| *g == f.1) {
                out.push(f);
            }
        }
        out
    }

    /// Support patterns over groups: more mixing groups first, then
    /// lexicographic with mixing before low before high.
    fn patterns(groups: usize) -> Vec<Vec<Level>> {
        let total = 3usize.pow(groups as u32);
        let mut all: Vec<Vec<Level>> = (0..total)
            .map(|mut i| {
                let mut p = vec![Level::Mix; groups];
                for slot in p.iter_mut().rev() {
                    *slot = [Level::Mix, Level::Lo, Level::Hi][i % 3];
                    i /= 3;
                }
                p
            })
            .collect();
        all.sort_by_key(|p| std::cmp::Reverse(p.iter().filter(|l| **l == Level::Mix).count()));
        all
    }

    fn structured(&mut self) -> Result<Option<(StrategySlice, SolveMethod)>> {
        let mut first = None;
        self.structured_each(|s, m| {
            first = Some((s, m));
            true
        })?;
        Ok(first)
    }

    /// Hand each support-search solution to `visit` until it returns true.
    fn structured_each(&mut self, mut visit: impl FnMut(StrategySlice, SolveMethod) -> bool) -> Result<()> {
        let Some(params) = self.params() else { return Ok(()) };
        if params.is_empty() {
            return Ok(());
        }
        for (family, groups) in self.families(&params) {
            if groups.len() > 6 {
                continue;
            }
            for pattern in Self::patterns(groups.len()) {
                if let Some(s) = self.solve_pattern(&params, &groups, &pattern)? {
                    let pattern = pattern.iter().map(|l| l.symbol()).collect();
                    if visit(s, SolveMethod::Support { family: family.clone(), pattern }) {
                        return Ok(());
                    }
                }
            }
        }
        Ok(())
    }

    fn expand(params: &[Param], groups: &[Vec<usize>], pattern: &[Level], mix: &[usize], z: &[f64]) -> Vec<f64> {
        let mut beta = vec![0.0; params.len()];
        for (g, members) in groups.iter().enumerate() {
            let v = match pattern[g] {
                Level::Lo => 0.0,
                Level::Hi => 1.0,
                Level::Mix => z[mix.iter().position(|&m| m == g).unwrap()],
            };
            for &i in members {
                beta[i] = v;
            }
        }
        beta
    }

    fn solve_pattern(&mut self, params: &[Param], groups: &[Vec<usize>], pattern: &[Level]) -> Result<Option<StrategySlice>> {
        let mix: Vec<usize> = (0..groups.len()).filter(|&g| pattern[g] == Level::Mix).collect();
        let mix_groups: Vec<Vec<usize>> = mix.iter().map(|&g| groups[g].clone()).collect();
        let k = mix.len();
        if k == 0 {
            let beta = Self::expand(params, groups, pattern, &mix, &[]);
            return self.accept_beta(params, &beta);
        }
        let mut r = vec![0.0; k];
        if k == 1 {
            let steps = (1.0 / self.cfg.fallback_resolution).round().max(1.0) as usize;
            let mut prev: Option<(f64, f64)> = None;
            for j in 0..=steps {
                let z = j as f64 / steps as f64;
                let beta = Self::expand(params, groups, pattern, &mix, &[z]);
                self.group_residual(params, &mix_groups, &beta, &mut r)?;
                let cur = (z, r[0]);
                let root = if cur.1 == 0.0 {
                    Some(z)
                } else if let Some(p) = prev.filter(|p| p.1 != 0.0 && p.1.signum() != cur.1.signum()) {
                    Some(self.bisect(params, groups, pattern, &mix, &mix_groups, p, cur)?)
                } else {
                    None
                };
                if let Some(z) = root {
                    let beta = Self::expand(params, groups, pattern, &mix, &[z]);
                    if let Some(s) = self.accept_beta(params, &beta)? {
                        return Ok(Some(s));
                    }
                }
                prev = Some(cur);
            }
            return Ok(None);
        }
        // coarse scan, then Newton-type refinement from local minima
        let per = ((self.cfg.scan_budget as f64).powf(1.0 / k as f64).floor() as usize).max(2);
        let total = per.pow(k as u32);
        let mut norms = vec![0.0; total];
        let mut z = vec![0.0; k];
        let point = |idx: usize, z: &mut [f64]| {
            let mut i = idx;
            for d in (0..k).rev() {
                z[d] = (i % per) as f64 / (per - 1) as f64;
                i /= per;
            }
        };
        for (idx, nrm) in norms.iter_mut().enumerate() {
            point(idx, &mut z);
            let beta = Self::expand(params, groups, pattern, &mix, &z);
            self.group_residual(params, &mix_groups, &beta, &mut r)?;
            *nrm = r.iter().map(|v| v * v).sum::<f64>();
        }
        let mut minima: Vec<usize> = (0..total)
            .filter(|&idx| {
                let mut digits = vec![0usize; k];
                let mut i = idx;
                for d in (0..k).rev() {
                    digits[d] = i % per;
                    i /= per;
                }
                // compare with every neighbor in the scan lattice
                let mut offs = vec![0i64; k];
                loop {
                    let mut d = 0;
                    while d < k {
                        offs[d] += 1;
                        if offs[d] <= 1 {
                            break;
                        }
                        offs[d] = -1;
                        d += 1;
                    }
                    if d == k {
                        return true;
                    }
                    if offs.iter().all(|o| *o == 0) {
                        continue;
                    }
                    let mut j = 0usize;
                    let mut inside = true;
                    for e in 0..k {
                        let v = digits[e] as i64 + offs[e];
                        if v < 0 || v >= per as i64 {
                            inside = false;
                            break;
                        }
                        j = j * per + v as usize;
                    }
                    if inside && norms[j] < norms[idx] {
                        return false;
                    }
                }
            })
            .collect();
        minima.sort_by(|a, b| norms[*a].partial_cmp(&norms[*b]).unwrap().then(a.cmp(b)));
        for &idx in minima.iter().take(8) {
            point(idx, &mut z);
            let root = lm_unit_box(
                |zz, out| {
                    let beta = Self::expand(params, groups, pattern, &mix, zz);
                    self.group_residual(params, &mix_groups, &beta, out)
                },
                &z,
                100,
            )?;
            let beta = Self::expand(params, groups, pattern, &mix, &root.x);
            if let Some(s) = self.accept_beta(params, &beta)? {
                return Ok(Some(s));
            }
        }
        Ok(None)
    }

    #[allow(clippy::too_many_arguments)]
    fn bisect(
        &mut self,
        params: &[Param],
        groups: &[Vec<usize>],
        pattern: &[Level],
        mix: &[usize],
        mix_groups: &[Vec<usize>],
        lo: (f64, f64),
        hi: (f64, f64),
    ) -> Result<f64> {
        let (mut a, mut fa) = lo;
        let (mut b, _) = hi;
        let mut r = [0.0];
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let beta = Self::expand(params, groups, pattern, mix, &[m]);
            self.group_residual(params, mix_groups, &beta, &mut r)?;
            if r[0] == 0.0 {
                return Ok(m);
            }
            if r[0].signum() == fa.signum() {
                a = m;
                fa = r[0];
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    }

    fn pure_enumeration(&mut self) -> Result<Option<StrategySlice>> {
        let mut first = None;
        self.pure_each(|s| {
            first = Some(s);
            true
        })?;
        Ok(first)
    }

    /// Hand each pure equilibrium to `visit` until it returns true. Nothing
    /// is tried when the number of pure slices exceeds the scan budget.
    fn pure_each(&mut self, mut visit: impl FnMut(StrategySlice) -> bool) -> Result<()> {
        let g = &self.ctx.game;
        let mut types: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        let mut count: u128 = 1;
        for n in 0..g.num_agents() {
            for x in 0..g.num_states(n) {
                let adm = g.admissible(n, x).to_vec();
                count = count.saturating_mul(adm.len() as u128);
                types.push((n, x, adm));
            }
        }
        if count > self.cfg.scan_budget as u128 {
            return Ok(());
        }
        let mut digits = vec![0usize; types.len()];
        loop {
            for (i, (n, x, adm)) in types.iter().enumerate() {
                let d = self.work.dist_mut(*n, *x);
                d.iter_mut().for_each(|v| *v = 0.0);
                d[adm[digits[i]]] = 1.0;
            }
            let slice = self.work.clone();
            if self.eval(&slice)? <= self.cfg.bne_tol && visit(slice) {
                return Ok(());
            }
            let mut i = types.len();
            loop {
                if i == 0 {
                    return Ok(());
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < types[i].2.len() {
                    break;
                }
                digits[i] = 0;
            }
        }
    }

    fn symmetrize(&self, s: &mut StrategySlice) {
        if !self.symmetric {
            return;
        }
        for x in 0..s.num_states(0) {
            let avg: Vec<f64> = s.dist(0, x).iter().zip(s.dist(1, x)).map(|(a, b)| 0.5 * (a + b)).collect();
            s.dist_mut(0, x).copy_from_slice(&avg);
            s.dist_mut(1, x).copy_from_slice(&avg);
        }
    }

    fn damped_best_response(&mut self, start: StrategySlice) -> Result<Option<StrategySlice>> {
        let alpha = self.cfg.damping;
        let mut cur = start;
        for _ in 0..self.cfg.max_iters {
            let gap = self.eval(&cur)?;
            if gap <= self.cfg.bne_tol {
                return Ok(Some(cur));
            }
            let ep = self.ctx.payoffs(&cur).clone();
            let mut next = cur.clone();
            let g = &self.ctx.game;
            for n in 0..g.num_agents() {
                for x in 0..g.num_states(n) {
                    let adm = g.admissible(n, x);
                    let best = adm.iter().map(|&a| ep.get(n, x, a)).fold(f64::NEG_INFINITY, f64::max);
                    let pick = adm.iter().copied().find(|&a| ties(best, ep.get(n, x, a))).unwrap();
                    for (a, v) in next.dist_mut(n, x).iter_mut().enumerate() {
                        let target = if a == pick { 1.0 } else { 0.0 };
                        *v = (1.0 - alpha) * *v + alpha * target;
                    }
                }
            }
            self.symmetrize(&mut next);
            let change = next.distance(&cur);
            cur = next;
            if change < 1e-9 {
                let gap = self.eval(&cur)?;
                return Ok((gap <= self.cfg.bne_tol).then_some(cur));
            }
        }
        Ok(None)
    }

    /// Replace a nearly pure slice by the pure one when that is no worse.
    fn purify(&mut self, s: StrategySlice) -> Result<StrategySlice> {
        let g0 = self.eval(&s)?;
        let mut p = s.clone();
        let mut changed = false;
        for n in 0..s.num_agents() {
            for x in 0..s.num_states(n) {
                let d = p.dist_mut(n, x);
                let (arg, max) = d.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (a, &v)| if v > b.1 { (a, v) } else { b });
                if (1.0 - 1e-3..1.0).contains(&max) {
                    d.iter_mut().enumerate().for_each(|(a, v)| *v = if a == arg { 1.0 } else { 0.0 });
                    changed = true;
                }
            }
        }
        if changed && self.eval(&p)? <= g0 {
            return Ok(p);
        }
        Ok(s)
    }

    fn random_slice(&self, rng: &mut ChaCha8Rng) -> StrategySlice {
        let spec = self.ctx.spec();
        let t = self.ctx.time();
        let mut s = StrategySlice::from_fn(spec, t, |_, _, _| 0.0);
        for n in 0..s.num_agents() {
            for x in 0..s.num_states(n) {
                let adm = &spec.admissible[n][t][x];
                let w: Vec<f64> = adm.iter().map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let tot: f64 = w.iter().sum();
                let d = s.dist_mut(n, x);
                for (&a, wi) in adm.iter().zip(&w) {
                    d[a] = wi / tot;
                }
            }
        }
        if self.symmetric {
            for x in 0..s.num_states(0) {
                let d0 = s.dist(0, x).to_vec();
                s.dist_mut(1, x).copy_from_slice(&d0);
            }
        }
        s
    }

    fn cube_scan(&mut self) -> Result<Option<StrategySlice>> {
        let Some(params) = self.params() else { return Ok(None) };
        let k = params.len();
        if k == 0 {
            return Ok(None);
        }
        let fine = (1.0 / self.cfg.fallback_resolution).round() as usize + 1;
        let cap = ((1u64 << 20) as f64).powf(1.0 / k as f64).floor() as usize;
        let per = fine.min(cap).max(2);
        let total = per.checked_pow(k as u32).unwrap_or(usize::MAX);
        let mut best = (f64::INFINITY, vec![0.0; k]);
        let mut beta = vec![0.0; k];
        for idx in 0..total {
            let mut i = idx;
            for d in (0..k).rev() {
                beta[d] = (i % per) as f64 / (per - 1) as f64;
                i /= per;
            }
            self.set_params(&params, &beta);
            let s = self.work.clone();
            let g = self.eval(&s)?;
            if g < best.0 {
                best = (g, beta.clone());
            }
        }
        if best.0 <= self.cfg.bne_tol {
            return self.accept_beta(&params, &best.1);
        }
        // refine the interior coordinates of the best point
        let h = 1.0 / (per - 1) as f64;
        let groups: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
        let pattern: Vec<Level> = best
            .1
            .iter()
            .map(|&b| {
                if b < 0.5 * h {
                    Level::Lo
                } else if b > 1.0 - 0.5 * h {
                    Level::Hi
                } else {
                    Level::Mix
                }
            })
            .collect();
        let mix: Vec<usize> = (0..k).filter(|&g| pattern[g] == Level::Mix).collect();
        if mix.is_empty() {
            return Ok(None);
        }
        let mix_groups: Vec<Vec<usize>> = mix.iter().map(|&g| groups[g].clone()).collect();
        let z0: Vec<f64> = mix.iter().map(|&g| best.1[g]).collect();
        let root = lm_unit_box(
            |zz, out| {
                let beta = Self::expand(&params, &groups, &pattern, &mix, zz);
                self.group_residual(&params, &mix_groups, &beta, out)
            },
            &z0,
            200,
        )?;
        let beta = Self::expand(&params, &groups, &pattern, &mix, &root.x);
        self.accept_beta(&params, &beta)
    }
}

/// Stage search in a fixed order: the uniform slice; structured support
/// search when every type has at most two admissible actions; pure
/// profiles of small games; damped best response from the uniform slice
/// and from seeded random restarts; a full scan of the strategy cube. The
/// first slice whose gap is within `bne_tol` is returned. On failure the
/// best candidate seen is returned with `converged = false`.
pub fn solve_stage(ctx: &mut StageContext<'_>, cfg: &SolverConfig, symmetric: bool, seed: u64) -> Result<StageSolution> {
    let spec = ctx.spec();
    let t = ctx.time();
    let uniform = StrategySlice::uniform(spec, t);
    let mut search = Search { work: uniform.clone(), ctx, cfg, symmetric, best: None };
    if search.eval(&uniform)? <= cfg.bne_tol {
        return certify(search.ctx, uniform, SolveMethod::Uniform, cfg.bne_tol);
    }
    if let Some((s, m)) = search.structured()? {
        return certify(search.ctx, s, m, cfg.bne_tol);
    }
    let two_actions = search.params().is_some();
    if !two_actions {
        if let Some(s) = search.pure_enumeration()? {
            return certify(search.ctx, s, SolveMethod::PureEnumeration, cfg.bne_tol);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for restart in 0..=cfg.restarts {
        let start = if restart == 0 { uniform.clone() } else { search.random_slice(&mut rng) };
        if let Some(s) = search.damped_best_response(start)? {
            let s = search.purify(s)?;
            return certify(search.ctx, s, SolveMethod::BestResponse { restart }, cfg.bne_tol);
        }
    }
    if cfg.grid_fallback && two_actions {
        if let Some(s) = search.cube_scan()? {
            return certify(search.ctx, s, SolveMethod::CubeScan, cfg.bne_tol);
        }
    }
    let best = search.best.take().map(|(_, s)| s).unwrap_or(uniform);
    certify(search.ctx, best, SolveMethod::Failed, cfg.bne_tol)
}

/// Every distinct equilibrium the searches of [`solve_stage`] find, in the
/// same order, so that when `solve_stage` succeeds its slice comes first.
/// Searches run to the end instead of stopping at the first success, and
/// pure profiles are tried last for games that skip them in
/// `solve_stage`. Slices within `1e-9` of an earlier one are dropped.
pub fn enumerate_stage(ctx: &mut StageContext<'_>, cfg: &SolverConfig, symmetric: bool, seed: u64) -> Result<Vec<StageSolution>> {
    let spec = ctx.spec();
    let t = ctx.time();
    let uniform = StrategySlice::uniform(spec, t);
    let mut search = Search { work: uniform.clone(), ctx, cfg, symmetric, best: None };
    let mut found: Vec<(StrategySlice, SolveMethod)> = Vec::new();
    let push = |found: &mut Vec<(StrategySlice, SolveMethod)>, s: StrategySlice, m: SolveMethod| {
        if found.iter().all(|(f, _)| f.distance(&s) > 1e-9) {
            found.push((s, m));
        }
    };
    if search.eval(&uniform)? <= cfg.bne_tol {
        push(&mut found, uniform.clone(), SolveMethod::Uniform);
    }
    search.structured_each(|s, m| {
        push(&mut found, s, m);
        false
    })?;
    let two_actions = search.params().is_some();
    if !two_actions {
        search.pure_each(|s| {
            push(&mut found, s, SolveMethod::PureEnumeration);
            false
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for restart in 0..=cfg.restarts {
        let start = if restart == 0 { uniform.clone() } else { search.random_slice(&mut rng) };
        if let Some(s) = search.damped_best_response(start)? {
            let s = search.purify(s)?;
            push(&mut found, s, SolveMethod::BestResponse { restart });
        }
    }
    if found.is_empty() && cfg.grid_fallback && two_actions {
        if let Some(s) = search.cube_scan()? {
            push(&mut found, s, SolveMethod::CubeScan);
        }
    }
    if two_actions {
        search.pure_each(|s| {
            push(&mut found, s, SolveMethod::PureEnumeration);
            false
        })?;
    }
    found.into_iter().map(|(s, m)| certify(search.ctx, s, m, cfg.bne_tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::BeliefVector;
    use crate::games::mac::{mac_beta2_closed_form, mac_spec, MacParams};

    fn last_stage_state(pi: [f64; 2]) -> CibState {
        let b = BeliefVector::from_marginals(1, &[vec![1.0 - pi[0], pi[0]], vec![1.0 - pi[1], pi[1]]]);
        CibState::new(0, b.clone(), b)
    }

    #[test]
    fn mac_last_stage_branches() {
        let q = MacParams::default();
        let spec = mac_spec(&q);
        let cfg = SolverConfig { symmetric_mode: true, ..SolverConfig::default() };
        for pi in [[0.5, 0.5], [0.8, 0.8], [0.5, 0.8], [0.9, 0.3], [0.75, 0.95]] {
            let sol = solve_bne_consistent(&spec, None, &last_stage_state(pi), &cfg).unwrap();
            assert!(sol.converged, "{pi:?}: {sol:?}");
            let want = mac_beta2_closed_form(pi, &q);
            for n in 0..2 {
                assert!((sol.strategy.prob(n, 1, 1) - want[n]).abs() < 1e-6, "{pi:?} agent {n}: {:?}", sol.method);
            }
        }
    }

    #[test]
    fn cell_seeds_differ() {
        assert_ne!(cell_seed(0, 0, 1), cell_seed(0, 1, 0));
        assert_eq!(cell_seed(7, 2, 3), cell_seed(7, 2, 3));
    }
}
