//! Scalar-loop reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use xcan::{CrossProducts, DataMatrix, FactorModel, PenaltyWeights};

pub fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|j| a[(i, j)]).collect())
        .collect()
}

/// Cosine of every pair of columns, zero-norm columns giving 1 on the
/// diagonal and 0 elsewhere.
pub fn cosine_columns(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = if n == 0 { 0 } else { a[0].len() };
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut dot = 0.0;
            let mut ni = 0.0;
            let mut nj = 0.0;
            for row in a {
                dot += row[i] * row[j];
                ni += row[i] * row[i];
                nj += row[j] * row[j];
            }
            out[i][j] = if ni == 0.0 || nj == 0.0 {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            } else {
                dot / (ni.sqrt() * nj.sqrt())
            };
        }
    }
    out
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

pub fn residual(x: &DataMatrix, m: &FactorModel) -> Vec<Vec<f64>> {
    let (n, p, h) = (x.n_obs(), x.n_vars(), m.n_components());
    let mut e = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut v = x.values()[(i, j)];
            if let Some(p0) = &m.p0 {
                v -= p0[j];
            }
            for k in 0..h {
                v -= m.u[(i, k)] * m.s[k] * m.p[(j, k)];
            }
            e[i][j] = v;
        }
    }
    e
}

pub fn scores(m: &FactorModel) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; m.n_components()]; m.n_obs()];
    for (i, row) in t.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = m.u[(i, k)] * m.s[k];
        }
    }
    t
}

/// `(fit, f0, fr, fc, total)` term by term.
pub fn loss(
    x: &DataMatrix,
    m: &FactorModel,
    xp: &CrossProducts,
    w: &PenaltyWeights,
) -> (f64, f64, f64, f64, f64) {
    let mut fit = 0.0;
    for row in residual(x, m) {
        for v in row {
            fit += v * v;
        }
    }
    let (n, p) = (m.n_obs(), m.n_vars());
    let mut f0 = 0.0;
    let mut fr = 0.0;
    let mut fc = 0.0;
    for k in 0..m.n_components() {
        let mut uu = 0.0;
        for i in 0..n {
            uu += m.u[(i, k)] * m.u[(i, k)];
        }
        let mut pp = 0.0;
        for j in 0..p {
            pp += m.p[(j, k)] * m.p[(j, k)];
        }
        f0 += (pp - 1.0) * (pp - 1.0) + (uu - 1.0) * (uu - 1.0);
        for i in 0..n {
            for l in 0..n {
                let q = m.u[(i, k)] * m.u[(l, k)] / xp.xxt.get(i, l);
                fr += q * q;
            }
        }
        for i in 0..p {
            for l in 0..p {
                let q = m.p[(i, k)] * m.p[(l, k)] / xp.xtx.get(i, l);
                fc += q * q;
            }
        }
    }
    let total = fit + w.lambda0 * f0 + w.lambda_r * fr + w.lambda_c * fc;
    (fit, f0, fr, fc, total)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut a = a.to_vec();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i][j] * a[i][j];
                }
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Share of the total sum of squares captured by the best rank-`h` approximation.
pub fn svd_explained_variance(x: &DataMatrix, h: usize) -> f64 {
    let a = rows(x.values());
    let m = x.n_vars();
    let mut gram = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            gram[i][j] = a.iter().map(|r| r[i] * r[j]).sum();
        }
    }
    let ev = jacobi_eigenvalues(&gram);
    let total: f64 = ev.iter().sum();
    ev.iter().take(h).sum::<f64>() / total
}

/// Group holding the largest squared mass of `v`, and that mass as a share of the total.
pub fn dominant_group(v: &[f64], groups: &[usize]) -> (usize, f64) {
    let k = groups.iter().max().map_or(0, |g| g + 1);
    let mut mass = vec![0.0; k];
    for (x, &g) in v.iter().zip(groups) {
        mass[g] += x * x;
    }
    let total: f64 = mass.iter().sum();
    let mut best = 0;
    for g in 1..k {
        if mass[g] > mass[best] {
            best = g;
        }
    }
    (best, if total > 0.0 { mass[best] / total } else { 0.0 })
}

/// Indices whose magnitude exceeds 10% of the vector's largest magnitude.
pub fn support(v: &[f64]) -> Vec<usize> {
    let top = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    (0..v.len()).filter(|&i| v[i].abs() > 0.1 * top).collect()
}

pub fn column(a: &DMatrix<f64>, k: usize) -> Vec<f64> {
    a.column(k).iter().copied().collect()
}

/// Largest entrywise difference divided by the largest oracle magnitude.
pub fn rel_diff(got: &DMatrix<f64>, want: &[Vec<f64>]) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            diff = diff.max((got[(i, j)] - w).abs());
            scale = scale.max(w.abs());
        }
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_scalar(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        (got - want).abs() / want.abs()
    }
}

/// Gaussian data, a Gaussian model and cross-products thresholded at magnitude
/// 0.3, for any shape including single rows or columns.
pub fn instance(
    n: usize,
    m: usize,
    h: usize,
    baseline: bool,
    seed: u64,
) -> (DataMatrix, FactorModel, CrossProducts) {
    let mut rng = xcan::pipeline::GaussianStream::new(seed);
    let x = DataMatrix::unlabeled(DMatrix::from_fn(n, m, |_, _| rng.standard_normal())).unwrap();
    let u = DMatrix::from_fn(n, h, |_, _| rng.normal(0.0, 0.5));
    let s = nalgebra::DVector::from_fn(h, |_, _| rng.uniform_in(0.5, 2.0));
    let p = DMatrix::from_fn(m, h, |_, _| rng.normal(0.0, 0.5));
    let p0 = baseline.then(|| nalgebra::DVector::from_fn(m, |_, _| rng.standard_normal()));
    let model = FactorModel::new(u, s, p, p0).unwrap();
    let rule = xcan::ThresholdRule::magnitude(0.3).unwrap();
    let xp = CrossProducts::thresholded(&x, &rule).unwrap();
    (x, model, xp)
}
