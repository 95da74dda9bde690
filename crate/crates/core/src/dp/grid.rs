//! Uniform grids on probability simplices and on common-information states.

use serde::{Deserialize, Serialize};

use crate::belief::{BeliefVector, CibState};
use crate::error::{Error, Result};
use crate::model::{GameSpec, Radix};

/// How values between grid points are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Barycentric interpolation on the Freudenthal triangulation of each
    /// agent's simplex, combined across agents by tensor product. Exact on
    /// functions that are affine in each agent's belief.
    #[default]
    Multilinear,
    /// The vertex carrying the largest interpolation weight.
    Nearest,
}

/// Number of points `C(m + d - 1, d - 1)` of the resolution-`m` grid on the
/// simplex over `d` outcomes.
pub fn simplex_count(dim: usize, m: usize) -> u128 {
    let mut num: u128 = 1;
    for i in 1..dim as u128 {
        num = num * (m as u128 + i) / i;
    }
    num
}

/// All distributions over `dim` outcomes with coordinates in `{0, 1/m, ..., 1}`.
///
/// Points are stored through their cumulative coordinates
/// `z_i = m * Σ_{j >= i} p_j` for `i = 1..dim`, which are non-increasing
/// integers in `0..=m`. Points are ordered lexicographically by `z`; for a
/// binary simplex point `k` is the distribution with `p_1 = k/m`.
#[derive(Clone, Debug)]
pub struct SimplexGrid {
    dim: usize,
    m: usize,
    cumulative: Vec<u32>,
    lookup: Vec<u32>,
}

/// Largest dense cumulative-coordinate lookup table.
const LOOKUP_BUDGET: u128 = 1 << 26;

impl SimplexGrid {
    pub fn new(dim: usize, m: usize) -> Result<Self> {
        if dim == 0 || m == 0 {
            return Err(Error::Shape("simplex grid needs a nonempty alphabet and resolution at least 1".into()));
        }
        let k = dim - 1;
        let table = (m as u128 + 1).pow(k as u32);
        if table > LOOKUP_BUDGET {
            return Err(Error::Budget { what: "simplex grid lookup".into(), needed: table, budget: LOOKUP_BUDGET });
        }
        let mut lookup = vec![u32::MAX; table as usize];
        let mut cumulative = Vec::new();
        let mut z = vec![0u32; k];
        let mut count = 0u32;
        loop {
            cumulative.extend_from_slice(&z);
            lookup[Self::key(m, &z)] = count;
            count += 1;
            // next non-increasing sequence in lexicographic order
            let mut i = k;
            loop {
                if i == 0 {
                    return Ok(Self { dim, m, cumulative, lookup });
                }
                i -= 1;
                let cap = if i == 0 { m as u32 } else { z[i - 1] };
                if z[i] < cap {
                    z[i] += 1;
                    for v in z.iter_mut().skip(i + 1) {
                        *v = 0;
                    }
                    break;
                }
            }
        }
    }

    fn key(m: usize, z: &[u32]) -> usize {
        z.iter().fold(0usize, |acc, &v| acc * (m + 1) + v as usize)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.cumulative.len() / (self.dim - 1)
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Write the probabilities of point `idx` into `out`.
    pub fn write_point(&self, idx: usize, out: &mut [f64]) {
        let k = self.dim - 1;
        let z = &self.cumulative[idx * k..idx * k + k];
        let m = self.m as f64;
        let mut prev = self.m as u32;
        for i in 0..k {
            out[i] = (prev - z[i]) as f64 / m;
            prev = z[i];
        }
        out[k] = prev as f64 / m;
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.write_point(idx, &mut out);
        out
    }

    /// Interpolation stencil of `dist`: appends `(point, weight)` pairs with
    /// positive weights summing to one.
    pub fn stencil(&self, dist: &[f64], mode: Interpolation, out: &mut Vec<(usize, f64)>) {
        let k = self.dim - 1;
        if k == 0 {
            out.push((0, 1.0));
            return;
        }
        let m = self.m as f64;
        // cumulative coordinates, floors and fractional parts
        let mut base = [0u32; 16];
        let mut frac = [0f64; 16];
        let mut order = [0usize; 16];
        assert!(k <= 16, "simplex interpolation supports at most 17 outcomes");
        let mut tail = 0.0;
        for i in (1..self.dim).rev() {
            tail += dist[i];
            let mut z = (tail * m).clamp(0.0, m);
            let r = z.round();
            if (z - r).abs() <= 1e-9 {
                z = r;
            }
            let f = z.floor();
            base[i - 1] = f as u32;
            frac[i - 1] = z - f;
            order[i - 1] = i - 1;
        }
        // cumulative coordinates must stay non-increasing after rounding
        for i in 1..k {
            if base[i] > base[i - 1] || (base[i] == base[i - 1] && frac[i] > frac[i - 1]) {
                base[i] = base[i - 1];
                frac[i] = frac[i - 1];
            }
        }
        let ord = &mut order[..k];
        ord.sort_by(|&a, &b| frac[b].partial_cmp(&frac[a]).unwrap().then(a.cmp(&b)));
        let mut z = base;
        let mut prev_f = 1.0;
        let mut best = (usize::MAX, -1.0);
        let start = out.len();
        for step in 0..=k {
            let f = if step < k { frac[ord[step]] } else { 0.0 };
            let w = prev_f - f;
            if w > 0.0 {
                let idx = self.lookup[Self::key(self.m, &z[..k])] as usize;
                debug_assert!(idx != u32::MAX as usize);
                if w > best.1 {
                    best = (idx, w);
                }
                if mode == Interpolation::Multilinear {
                    out.push((idx, w));
                }
            }
            if step < k {
                z[ord[step]] += 1;
                prev_f = f;
            }
        }
        if mode == Interpolation::Nearest {
            out.truncate(start);
            out.push((best.0, 1.0));
        }
    }
}

/// How the signaling-free coordinate enters a layer of grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HatMode {
    /// Independent grids for the strategic and signaling-free beliefs.
    Crossed,
    /// Cells with both beliefs equal. Used at the first time, where both
    /// start from the prior.
    Diagonal,
    /// The signaling-free belief is not a coordinate. Used at the last time,
    /// where no continuation depends on it.
    Ignored,
}

impl HatMode {
    /// Mode used for layer `t` of a game with the given horizon.
    pub fn for_time(t: usize, horizon: usize) -> Self {
        if t + 1 == horizon {
            HatMode::Ignored
        } else if t == 0 {
            HatMode::Diagonal
        } else {
            HatMode::Crossed
        }
    }
}

/// Grid cells of one time: public state crossed with per-agent simplex
/// grids for the strategic belief and, depending on the mode, for the
/// signaling-free belief.
///
/// Cell index is `(c * P + pi) * H + pi_hat` where `P` is the number of
/// belief points, `H = P` in crossed mode and `1` otherwise, and belief
/// points are row-major over agents.
#[derive(Clone, Debug)]
pub struct GridLayout {
    pub time: usize,
    pub mode: HatMode,
    pub interpolation: Interpolation,
    publics: usize,
    simplices: Vec<SimplexGrid>,
    points: Radix,
}

impl GridLayout {
    pub fn new(spec: &GameSpec, t: usize, m: usize, mode: HatMode, interpolation: Interpolation) -> Result<Self> {
        let simplices = (0..spec.num_agents).map(|n| SimplexGrid::new(spec.num_local(n, t), m)).collect::<Result<Vec<_>>>()?;
        let points = Radix::new(simplices.iter().map(|s| s.len()).collect());
        Ok(Self { time: t, mode, interpolation, publics: spec.num_public(t), simplices, points })
    }

    /// Cell count without building the layout.
    pub fn count(spec: &GameSpec, t: usize, m: usize, mode: HatMode) -> u128 {
        let per: u128 = (0..spec.num_agents).map(|n| simplex_count(spec.num_local(n, t), m)).product();
        let hat = if mode == HatMode::Crossed { per } else { 1 };
        spec.num_public(t) as u128 * per * hat
    }

    pub fn resolution(&self) -> usize {
        self.simplices[0].resolution()
    }

    pub fn num_belief_points(&self) -> usize {
        self.points.len()
    }

    fn hat_points(&self) -> usize {
        if self.mode == HatMode::Crossed {
            self.points.len()
        } else {
            1
        }
    }

    pub fn num_cells(&self) -> usize {
        self.publics * self.points.len() * self.hat_points()
    }

    pub fn simplex(&self, n: usize) -> &SimplexGrid {
        &self.simplices[n]
    }

    /// `(c, pi point, pi_hat point)`; the last is `None` unless crossed.
    pub fn decode(&self, cell: usize) -> (usize, usize, Option<usize>) {
        let h = self.hat_points();
        let hat = cell % h;
        let rest = cell / h;
        let p = self.points.len();
        (rest / p, rest % p, (self.mode == HatMode::Crossed).then_some(hat))
    }

    pub fn encode(&self, c: usize, pi: usize, pi_hat: Option<usize>) -> usize {
        (c * self.points.len() + pi) * self.hat_points() + pi_hat.unwrap_or(0)
    }

    fn belief_at(&self, point: usize) -> BeliefVector {
        let marginals: Vec<Vec<f64>> = self.simplices.iter().enumerate().map(|(n, s)| s.point(self.points.digit(point, n))).collect();
        BeliefVector::from_marginals(self.time, &marginals)
    }

    /// Representative state of a cell. Outside crossed mode the
    /// signaling-free belief is reported equal to the strategic one.
    pub fn state(&self, cell: usize) -> CibState {
        let (c, pi, hat) = self.decode(cell);
        let b = self.belief_at(pi);
        let bh = match hat {
            Some(h) => self.belief_at(h),
            None => b.clone(),
        };
        CibState::new(c, b, bh)
    }

    /// The cell obtained by exchanging agents 0 and 1.
    pub fn mirror(&self, cell: usize) -> usize {
        let (c, pi, hat) = self.decode(cell);
        self.encode(c, self.points.swap(pi, 0, 1), hat.map(|h| self.points.swap(h, 0, 1)))
    }

    /// Product stencil over agents for beliefs laid out agent by agent in
    /// `flat`, written into `out` as `(belief point, weight)`.
    fn belief_stencil(&self, flat: &[f64], scratch: &mut Vec<(usize, f64)>, out: &mut Vec<(usize, f64)>) {
        out.clear();
        out.push((0, 1.0));
        let mut off = 0;
        for (n, s) in self.simplices.iter().enumerate() {
            scratch.clear();
            s.stencil(&flat[off..off + s.dim()], self.interpolation, scratch);
            off += s.dim();
            let stride = self.points.stride(n);
            let len = out.len();
            for i in 0..len {
                let (idx, w) = out[i];
                for (j, &(v, wv)) in scratch.iter().enumerate() {
                    let e = (idx + v * stride, w * wv);
                    if j == 0 {
                        out[i] = e;
                    } else {
                        out.push(e);
                    }
                }
            }
        }
    }

    /// Interpolation stencil of the state `(c, pi, pi_hat)`, with beliefs
    /// given agent by agent in flat slices.
    pub fn locate(&self, c: usize, pi: &[f64], pi_hat: &[f64], ws: &mut StencilScratch, out: &mut Vec<(usize, f64)>) {
        out.clear();
        self.belief_stencil(pi, &mut ws.agent, &mut ws.pi);
        if self.mode == HatMode::Crossed {
            self.belief_stencil(pi_hat, &mut ws.agent, &mut ws.hat);
        } else {
            ws.hat.clear();
            ws.hat.push((0, 1.0));
        }
        let h = self.hat_points();
        let p = self.points.len();
        for &(i, wi) in &ws.pi {
            for &(j, wj) in &ws.hat {
                out.push(((c * p + i) * h + j, wi * wj));
            }
        }
    }
}

/// Reusable buffers for stencil computations.
#[derive(Clone, Debug, Default)]
pub struct StencilScratch {
    agent: Vec<(usize, f64)>,
    pi: Vec<(usize, f64)>,
    hat: Vec<(usize, f64)>,
    pub(crate) key: Vec<u64>,
}
