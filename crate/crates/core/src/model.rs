//! Factor model state and the penalized loss.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::crossprod::{CrossProducts, SymMatrix};
use crate::error::{Result, XcanError};

/// Dense N×M data with observation and variable labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl DataMatrix {
    pub fn new(
        values: DMatrix<f64>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        if row_labels.len() != values.nrows() {
            return Err(XcanError::dims(
                "row labels",
                values.nrows(),
                row_labels.len(),
            ));
        }
        if col_labels.len() != values.ncols() {
            return Err(XcanError::dims(
                "column labels",
                values.ncols(),
                col_labels.len(),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % values.nrows(), pos / values.nrows());
            return Err(XcanError::invalid(format!(
                "non-finite value at row {}, column {}",
                row_labels[i], col_labels[j]
            )));
        }
        Ok(DataMatrix {
            values,
            row_labels,
            col_labels,
        })
    }

    /// Data with generated labels `obs1..obsN` and `var1..varM`.
    pub fn unlabeled(values: DMatrix<f64>) -> Result<Self> {
        let rows = (1..=values.nrows()).map(|i| format!("obs{i}")).collect();
        let cols = (1..=values.ncols()).map(|j| format!("var{j}")).collect();
        Self::new(values, rows, cols)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_obs(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Same labels, new values of identical shape.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, self.row_labels.clone(), self.col_labels.clone())
    }

    pub fn transpose(&self) -> Self {
        DataMatrix {
            values: self.values.transpose(),
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
        }
    }
}

/// `X ≈ 1·p0ᵀ + U·diag(s)·Pᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub p: DMatrix<f64>,
    pub p0: Option<DVector<f64>>,
}

impl FactorModel {
    pub fn new(
        u: DMatrix<f64>,
        s: DVector<f64>,
        p: DMatrix<f64>,
        p0: Option<DVector<f64>>,
    ) -> Result<Self> {
        let h = s.len();
        if h == 0 {
            return Err(XcanError::invalid("model needs at least one component"));
        }
        if u.ncols() != h {
            return Err(XcanError::dims("columns of U", h, u.ncols()));
        }
        if p.ncols() != h {
            return Err(XcanError::dims("columns of P", h, p.ncols()));
        }
        if let Some(b) = &p0 {
            if b.len() != p.nrows() {
                return Err(XcanError::dims("length of p0", p.nrows(), b.len()));
            }
        }
        Ok(FactorModel { u, s, p, p0 })
    }

    /// All-zero model of the given shape.
    pub fn zeros(n_obs: usize, n_vars: usize, h: usize, baseline: bool) -> Self {
        FactorModel {
            u: DMatrix::zeros(n_obs, h),
            s: DVector::zeros(h),
            p: DMatrix::zeros(n_vars, h),
            p0: baseline.then(|| DVector::zeros(n_vars)),
        }
    }

    pub fn n_components(&self) -> usize {
        self.s.len()
    }

    pub fn n_obs(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.p.nrows()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_obs: self.n_obs(),
            n_vars: self.n_vars(),
            h: self.n_components(),
            baseline: self.p0.is_some(),
        }
    }

    /// Flattens as `[vec(U), diag(S), vec(P), p0]`, column-major.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().len());
        out.extend_from_slice(self.u.as_slice());
        out.extend_from_slice(self.s.as_slice());
        out.extend_from_slice(self.p.as_slice());
        if let Some(b) = &self.p0 {
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn from_params(layout: ParamLayout, params: &[f64]) -> Result<Self> {
        if params.len() != layout.len() {
            return Err(XcanError::dims(
                "parameter vector",
                layout.len(),
                params.len(),
            ));
        }
        let (n, m, h) = (layout.n_obs, layout.n_vars, layout.h);
        let (u, rest) = params.split_at(n * h);
        let (s, rest) = rest.split_at(h);
        let (p, rest) = rest.split_at(m * h);
        Ok(FactorModel {
            u: DMatrix::from_column_slice(n, h, u),
            s: DVector::from_column_slice(s),
            p: DMatrix::from_column_slice(m, h, p),
            p0: layout.baseline.then(|| DVector::from_column_slice(rest)),
        })
    }

    fn check_against(&self, x: &DataMatrix) -> Result<()> {
        if self.n_obs() != x.n_obs() {
            return Err(XcanError::dims("rows of U", x.n_obs(), self.n_obs()));
        }
        if self.n_vars() != x.n_vars() {
            return Err(XcanError::dims("rows of P", x.n_vars(), self.n_vars()));
        }
        Ok(())
    }

    /// `1·p0ᵀ + U·diag(s)·Pᵀ`.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        let mut rec = scores(self) * self.p.transpose();
        if let Some(b) = &self.p0 {
            for mut row in rec.row_iter_mut() {
                row += b.transpose();
            }
        }
        rec
    }
}

/// Shape of the flattened parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_obs: usize,
    pub n_vars: usize,
    pub h: usize,
    pub baseline: bool,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.n_obs * self.h
            + self.h
            + self.n_vars * self.h
            + if self.baseline { self.n_vars } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Human-readable name of a flat coordinate, e.g. `U[3,1]`.
    pub fn coordinate_name(&self, k: usize) -> String {
        let (n, m, h) = (self.n_obs, self.n_vars, self.h);
        if k < n * h {
            format!("U[{},{}]", k % n, k / n)
        } else if k < n * h + h {
            format!("S[{}]", k - n * h)
        } else if k < n * h + h + m * h {
            let k = k - n * h - h;
            format!("P[{},{}]", k % m, k / m)
        } else {
            format!("p0[{}]", k - n * h - h - m * h)
        }
    }
}

/// Penalty multipliers for the normalization, row and column terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub lambda0: f64,
    pub lambda_r: f64,
    pub lambda_c: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights {
            lambda0: 1.0,
            lambda_r: 0.0,
            lambda_c: 0.0,
        }
    }
}

impl PenaltyWeights {
    pub fn new(lambda0: f64, lambda_r: f64, lambda_c: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda0", lambda0),
            ("lambda_r", lambda_r),
            ("lambda_c", lambda_c),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(XcanError::invalid(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(PenaltyWeights {
            lambda0,
            lambda_r,
            lambda_c,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Squared Frobenius norm of the residual.
    pub fit: f64,
    /// Unit-norm deviation of every factor vector.
    pub f0: f64,
    /// Observation-mode structural penalty.
    pub fr: f64,
    /// Variable-mode structural penalty.
    pub fc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(fit: f64, f0: f64, fr: f64, fc: f64, w: &PenaltyWeights) -> Self {
        LossBreakdown {
            fit,
            f0,
            fr,
            fc,
            total: fit + w.lambda0 * f0 + w.lambda_r * fr + w.lambda_c * fc,
        }
    }
}

/// `X − 1·p0ᵀ − U·diag(s)·Pᵀ`.
pub fn residual(x: &DataMatrix, m: &FactorModel) -> Result<DMatrix<f64>> {
    m.check_against(x)?;
    Ok(x.values() - m.reconstruction())
}

/// For a factor vector `v` and divisor matrix `c`, returns `w` with
/// `w_i = Σ_j v_j² / c_ij²`. The penalty `‖(v vᵀ) ⊘ c‖²_F` is `Σ_i v_i² w_i`
/// and its gradient is `4 v_i w_i` when `c` is symmetric.
pub(crate) fn divided_weights(v: DVectorView<'_, f64>, c: &SymMatrix) -> DVector<f64> {
    let k = v.len();
    let c = c.entries();
    DVector::from_fn(k, |i, _| {
        let mut acc = 0.0;
        for j in 0..k {
            let q = v[j] / c[(i, j)];
            acc += q * q;
        }
        acc
    })
}

fn structural_penalty(factors: &DMatrix<f64>, c: &SymMatrix) -> f64 {
    factors
        .column_iter()
        .map(|v| {
            let w = divided_weights(v, c);
            v.iter().zip(w.iter()).map(|(a, b)| a * a * b).sum::<f64>()
        })
        .sum()
}

fn normalization_penalty(m: &FactorModel) -> f64 {
    m.p.column_iter()
        .zip(m.u.column_iter())
        .map(|(p, u)| (p.norm_squared() - 1.0).powi(2) + (u.norm_squared() - 1.0).powi(2))
        .sum()
}

/// Evaluates every term of the penalized loss.
pub fn loss(
    x: &DataMatrix,
    m: &FactorModel,
    xp: &CrossProducts,
    w: &PenaltyWeights,
) -> Result<LossBreakdown> {
    xp.check_against(x.n_obs(), x.n_vars())?;
    let e = residual(x, m)?;
    Ok(LossBreakdown::compose(
        e.norm_squared(),
        normalization_penalty(m),
        structural_penalty(&m.u, &xp.xxt),
        structural_penalty(&m.p, &xp.xtx),
        w,
    ))
}

/// Score matrix `T = U·diag(s)`.
pub fn scores(m: &FactorModel) -> DMatrix<f64> {
    let mut t = m.u.clone();
    for (mut col, s) in t.column_iter_mut().zip(m.s.iter()) {
        col *= *s;
    }
    t
}

/// `1 − ‖E‖²_F / ‖X‖²_F`.
pub fn explained_variance(x: &DataMatrix, m: &FactorModel) -> Result<f64> {
    let total = x.values().norm_squared();
    if total == 0.0 {
        return Err(XcanError::invalid(
            "explained variance is undefined for an all-zero matrix",
        ));
    }
    Ok(1.0 - residual(x, m)?.norm_squared() / total)
}

/// Moves the sign of every negative scale into its score factor.
pub fn fold_scale_signs(m: &FactorModel) -> FactorModel {
    let mut out = m.clone();
    for h in 0..out.n_components() {
        if out.s[h] < 0.0 {
            out.s[h] = -out.s[h];
            out.u.column_mut(h).neg_mut();
        }
    }
    out
}

/// Flips `(u_h, p_h)` for every component whose scores sum to a negative value.
pub fn sign_align(m: &FactorModel) -> FactorModel {
    let mut out = m.clone();
    for h in 0..out.n_components() {
        let sum: f64 = out.u.column(h).iter().map(|v| v * out.s[h]).sum();
        if sum < 0.0 {
            out.u.column_mut(h).neg_mut();
            out.p.column_mut(h).neg_mut();
        }
    }
    out
}
