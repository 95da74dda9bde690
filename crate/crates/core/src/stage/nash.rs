//! Small numerical tools for equilibrium search: support enumeration for
//! bimatrix games and a box-constrained Levenberg-Marquardt root finder.

use nalgebra::{DMatrix, DVector};

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Mixed strategy of the column player that makes the row player
/// indifferent over `rows` when restricted to `cols`: solves
/// `A[rows, cols] y = v 1`, `Σ y = 1`. Returns `(y on cols, v)`.
fn indifference(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> Option<(Vec<f64>, f64)> {
    let k = rows.len();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            m[(i, j)] = a[(r, c)];
        }
        m[(i, k)] = -1.0;
    }
    for j in 0..k {
        m[(k, j)] = 1.0;
    }
    rhs[k] = 1.0;
    let sol = m.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.iter().take(k).copied().collect(), sol[k]))
}

/// First Nash equilibrium of the bimatrix game `(a, b)` found by
/// enumerating equal-size supports, smallest first and lexicographic within
/// a size. `a[(i, j)]` and `b[(i, j)]` are the row and column players'
/// payoffs. Returns full mixed strategies.
pub fn support_enumeration(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let (m, n) = a.shape();
    let bt = b.transpose();
    for k in 1..=m.min(n) {
        for rows in subsets(m, k) {
            for cols in subsets(n, k) {
                let Some((y, v)) = indifference(a, &rows, &cols) else { continue };
                let Some((x, u)) = indifference(&bt, &cols, &rows) else { continue };
                if y.iter().chain(&x).any(|p| *p < -tol) {
                    continue;
                }
                let mut xf = vec![0.0; m];
                let mut yf = vec![0.0; n];
                for (i, &r) in rows.iter().enumerate() {
                    xf[r] = x[i].max(0.0);
                }
                for (j, &c) in cols.iter().enumerate() {
                    yf[c] = y[j].max(0.0);
                }
                let row_ok = (0..m).all(|i| (0..n).map(|j| a[(i, j)] * yf[j]).sum::<f64>() <= v + tol * (1.0 + v.abs()));
                let col_ok = (0..n).all(|j| (0..m).map(|i| b[(i, j)] * xf[i]).sum::<f64>() <= u + tol * (1.0 + u.abs()));
                if row_ok && col_ok {
                    let sx: f64 = xf.iter().sum();
                    let sy: f64 = yf.iter().sum();
                    xf.iter_mut().for_each(|p| *p /= sx);
                    yf.iter_mut().for_each(|p| *p /= sy);
                    return Some((xf, yf));
                }
            }
        }
    }
    None
}

/// Result of a root search.
#[derive(Clone, Debug)]
pub struct Root {
    pub x: Vec<f64>,
    pub norm: f64,
}

/// Levenberg-Marquardt on `f(x) = 0` over the unit box, with a forward
/// finite-difference Jacobian. `f` writes the residual into its second
/// argument and may fail.
pub fn lm_unit_box<E>(mut f: impl FnMut(&[f64], &mut [f64]) -> Result<(), E>, x0: &[f64], iters: usize) -> Result<Root, E> {
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; k];
    f(&x, &mut r)?;
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut cur = norm(&r);
    let mut mu = 1e-3;
    let mut jac = DMatrix::zeros(k, k);
    let mut xt = x.clone();
    let mut rt = vec![0.0; k];
    for _ in 0..iters {
        if cur < 1e-14 {
            break;
        }
        for j in 0..k {
            let h = 1e-7;
            let step = if x[j] + h <= 1.0 { h } else { -h };
            xt.copy_from_slice(&x);
            xt[j] += step;
            f(&xt, &mut rt)?;
            for i in 0..k {
                jac[(i, j)] = (rt[i] - r[i]) / step;
            }
        }
        let jt = jac.transpose();
        let g = &jt * DVector::from_column_slice(&r);
        let jtj = &jt * &jac;
        let mut improved = false;
        while mu < 1e12 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += mu * (1.0 + jtj[(i, i)]);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            for j in 0..k {
                xt[j] = (x[j] + delta[j]).clamp(0.0, 1.0);
            }
            f(&xt, &mut rt)?;
            let n = norm(&rt);
            if n < cur {
                let moved = x.iter().zip(&xt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                x.copy_from_slice(&xt);
                r.copy_from_slice(&rt);
                cur = n;
                mu = (mu * 0.3).max(1e-12);
                improved = moved > 1e-16;
                break;
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(Root { x, norm: cur })
}
