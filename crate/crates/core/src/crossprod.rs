//! Cross-product matrices over the variable mode (`XtX`, M×M) and the
//! observation mode (`XXt`, N×N).
//!
//! The penalties divide outer products of factor vectors element-wise by
//! these matrices, so small entries repel unrelated variables (or
//! observations) from sharing a component. Every matrix carries the list of
//! steps that produced it, which is persisted next to the matrix itself.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XcanError};
use crate::model::DataMatrix;

/// Default magnitude floor applied before a matrix is used as a divisor.
pub const DEFAULT_FLOOR_EPS: f64 = 0.01;

/// Smallest magnitude accepted in a divisor by the loss and gradient.
pub const DIVISOR_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// M×M matrix indexed by columns of the data.
    Variables,
    /// N×N matrix indexed by rows of the data.
    Observations,
}

impl Mode {
    pub fn short_name(self) -> &'static str {
        match self {
            Mode::Variables => "xtx",
            Mode::Observations => "xxt",
        }
    }
}

/// One step in the construction history of a [`SymMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    /// Cosine-normalized Gram matrix of the data.
    Cosine,
    /// Same-class indicator built from observation labels.
    ClassMap,
    /// All-ones placeholder for an inactive penalty.
    Uniform,
    /// Loaded from a user-supplied matrix.
    External,
    /// Entries strictly inside `(lo, hi)` zeroed. `None` is unbounded.
    Threshold { lo: Option<f64>, hi: Option<f64> },
    /// Per-column minimum subtracted, then re-symmetrized.
    SubtractMin,
    /// Magnitudes below `eps` raised to `±eps`.
    Floor { eps: f64 },
}

/// Dense, exactly symmetric cross-product matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    entries: DMatrix<f64>,
    mode: Mode,
    history: Vec<Step>,
}

impl SymMatrix {
    /// Wraps an arbitrary square matrix, averaging it with its transpose.
    pub fn from_matrix(entries: DMatrix<f64>, mode: Mode) -> Result<Self> {
        Self::with_history(entries, mode, vec![Step::External])
    }

    /// Like [`SymMatrix::from_matrix`] but with an explicit history, used when
    /// reloading a persisted matrix.
    pub fn with_history(mut entries: DMatrix<f64>, mode: Mode, history: Vec<Step>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(XcanError::invalid(format!(
                "cross-product matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.is_empty() {
            return Err(XcanError::invalid("cross-product matrix is empty"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(XcanError::invalid(
                "cross-product matrix has non-finite entries",
            ));
        }
        symmetrize(&mut entries);
        Ok(SymMatrix {
            entries,
            mode,
            history,
        })
    }

    /// All-ones matrix of the given side.
    pub fn uniform(side: usize, mode: Mode) -> Self {
        SymMatrix {
            entries: DMatrix::from_element(side, side, 1.0),
            mode,
            history: vec![Step::Uniform],
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn side(&self) -> usize {
        self.entries.nrows()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn history(&self) -> &[Step] {
        &self.history
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Smallest absolute entry.
    pub fn min_abs(&self) -> f64 {
        self.entries
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
    }

    /// True when the matrix is safe to use as a Hadamard divisor.
    pub fn is_floored(&self) -> bool {
        self.min_abs() >= DIVISOR_GUARD
    }

    fn derive(&self, entries: DMatrix<f64>, step: Step) -> Self {
        let mut history = self.history.clone();
        history.push(step);
        SymMatrix {
            entries,
            mode: self.mode,
            history,
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Interval of values zeroed by [`hard_threshold`], plus the floor applied
/// afterwards in the standard pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleRecord", into = "RuleRecord")]
pub struct ThresholdRule {
    lo: f64,
    hi: f64,
    floor_eps: f64,
}

#[derive(Serialize, Deserialize)]
struct RuleRecord {
    lo: Option<f64>,
    hi: Option<f64>,
    floor_eps: f64,
}

impl From<ThresholdRule> for RuleRecord {
    fn from(r: ThresholdRule) -> Self {
        RuleRecord {
            lo: r.lo.is_finite().then_some(r.lo),
            hi: r.hi.is_finite().then_some(r.hi),
            floor_eps: r.floor_eps,
        }
    }
}

impl TryFrom<RuleRecord> for ThresholdRule {
    type Error = XcanError;

    fn try_from(r: RuleRecord) -> Result<Self> {
        ThresholdRule::new(
            r.lo.unwrap_or(f64::NEG_INFINITY),
            r.hi.unwrap_or(f64::INFINITY),
            r.floor_eps,
        )
    }
}

impl ThresholdRule {
    /// Zero everything strictly inside `(lo, hi)`. Either bound may be infinite.
    pub fn new(lo: f64, hi: f64, floor_eps: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(XcanError::invalid(format!(
                "threshold interval must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        if !(floor_eps > 0.0 && floor_eps.is_finite()) {
            return Err(XcanError::invalid(format!(
                "floor epsilon must be positive, got {floor_eps}"
            )));
        }
        Ok(ThresholdRule { lo, hi, floor_eps })
    }

    /// Zero entries with magnitude below `level`, i.e. the interval `(-level, level)`.
    pub fn magnitude(level: f64) -> Result<Self> {
        Self::new(-level, level, DEFAULT_FLOOR_EPS)
    }

    /// Keep only entries at or above `level`, i.e. zero `(-inf, level)`.
    pub fn positive_only(level: f64) -> Result<Self> {
        Self::new(f64::NEG_INFINITY, level, DEFAULT_FLOOR_EPS)
    }

    pub fn with_floor(self, floor_eps: f64) -> Result<Self> {
        Self::new(self.lo, self.hi, floor_eps)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn floor_eps(&self) -> f64 {
        self.floor_eps
    }

    fn zeroes(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }
}

/// The pair of structural matrices used by one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossProducts {
    pub xtx: SymMatrix,
    pub xxt: SymMatrix,
}

impl CrossProducts {
    pub fn new(xtx: SymMatrix, xxt: SymMatrix) -> Result<Self> {
        if xtx.mode != Mode::Variables {
            return Err(XcanError::invalid("XtX must be a variables-mode matrix"));
        }
        if xxt.mode != Mode::Observations {
            return Err(XcanError::invalid(
                "XXt must be an observations-mode matrix",
            ));
        }
        Ok(CrossProducts { xtx, xxt })
    }

    /// All-ones placeholders for an N×M problem with both penalties off.
    pub fn uniform(n_obs: usize, n_vars: usize) -> Self {
        CrossProducts {
            xtx: SymMatrix::uniform(n_vars, Mode::Variables),
            xxt: SymMatrix::uniform(n_obs, Mode::Observations),
        }
    }

    /// Cosine cross-products of `x`, thresholded by `rule` and floored at its epsilon.
    pub fn thresholded(x: &DataMatrix, rule: &ThresholdRule) -> Result<Self> {
        let xtx = epsilon_floor(&hard_threshold(&build_xtx(x)?, rule), rule.floor_eps)?;
        let xxt = epsilon_floor(&hard_threshold(&build_xxt(x)?, rule), rule.floor_eps)?;
        Self::new(xtx, xxt)
    }

    pub(crate) fn check_against(&self, n_obs: usize, n_vars: usize) -> Result<()> {
        if self.xxt.side() != n_obs {
            return Err(XcanError::dims("XXt side", n_obs, self.xxt.side()));
        }
        if self.xtx.side() != n_vars {
            return Err(XcanError::dims("XtX side", n_vars, self.xtx.side()));
        }
        for m in [&self.xtx, &self.xxt] {
            if !m.is_floored() {
                return Err(XcanError::invalid(format!(
                    "{} contains an entry with magnitude below {DIVISOR_GUARD}; floor it first",
                    m.mode.short_name()
                )));
            }
        }
        Ok(())
    }
}

/// Cosine similarity between the columns of `a`. Zero-norm columns get a unit
/// diagonal and zero off-diagonal.
fn cosine_of_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.ncols();
    let sq_norms: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let mut out = DMatrix::<f64>::identity(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let denom = (sq_norms[i] * sq_norms[j]).sqrt();
            let v = if denom > 0.0 {
                (a.column(i).dot(&a.column(j)) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Variables-mode cross-product: cosine-normalized `XᵀX`.
pub fn build_xtx(x: &DataMatrix) -> Result<SymMatrix> {
    if x.values().is_empty() {
        return Err(XcanError::invalid("cannot build XtX from an empty matrix"));
    }
    Ok(SymMatrix {
        entries: cosine_of_columns(x.values()),
        mode: Mode::Variables,
        history: vec![Step::Cosine],
    })
}

/// Observations-mode cross-product: cosine-normalized `XXᵀ`.
pub fn build_xxt(x: &DataMatrix) -> Result<SymMatrix> {
    if x.values().is_empty() {
        return Err(XcanError::invalid("cannot build XXt from an empty matrix"));
    }
    Ok(SymMatrix {
        entries: cosine_of_columns(&x.values().transpose()),
        mode: Mode::Observations,
        history: vec![Step::Cosine],
    })
}

/// Zeroes every entry strictly inside the rule's interval.
pub fn hard_threshold(m: &SymMatrix, rule: &ThresholdRule) -> SymMatrix {
    let entries = m.entries.map(|v| if rule.zeroes(v) { 0.0 } else { v });
    m.derive(
        entries,
        Step::Threshold {
            lo: rule.lo.is_finite().then_some(rule.lo),
            hi: rule.hi.is_finite().then_some(rule.hi),
        },
    )
}

/// Raises every magnitude below `eps` to `eps`, keeping the sign (zero maps to `+eps`).
pub fn epsilon_floor(m: &SymMatrix, eps: f64) -> Result<SymMatrix> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(XcanError::invalid(format!(
            "floor epsilon must be positive, got {eps}"
        )));
    }
    let entries = m.entries.map(|v| {
        if v.abs() >= eps {
            v
        } else if v < 0.0 {
            -eps
        } else {
            eps
        }
    });
    Ok(m.derive(entries, Step::Floor { eps }))
}

/// Same-class indicator matrix over observations.
pub fn class_map<T: PartialEq>(labels: &[T]) -> Result<SymMatrix> {
    if labels.is_empty() {
        return Err(XcanError::invalid("class map needs at least one label"));
    }
    let n = labels.len();
    let entries = DMatrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 });
    Ok(SymMatrix {
        entries,
        mode: Mode::Observations,
        history: vec![Step::ClassMap],
    })
}

/// Subtracts each column's minimum, then averages with the transpose.
///
/// Useful for data far from the origin, where cosine cross-products are
/// nearly all ones.
pub fn subtract_min_baseline(m: &SymMatrix) -> SymMatrix {
    let mut entries = m.entries.clone();
    for mut col in entries.column_iter_mut() {
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        col.add_scalar_mut(-min);
    }
    symmetrize(&mut entries);
    m.derive(entries, Step::SubtractMin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        let n = rows.len();
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        SymMatrix::from_matrix(m, Mode::Variables).unwrap()
    }

    fn data(n: usize, m: usize, v: &[f64]) -> DataMatrix {
        DataMatrix::unlabeled(DMatrix::from_row_slice(n, m, v)).unwrap()
    }

    #[test]
    fn identity_columns_give_identity() {
        let x = data(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(build_xtx(&x).unwrap().entries(), &DMatrix::identity(2, 2));
        assert_eq!(build_xxt(&x).unwrap().entries(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn parallel_columns_are_all_ones() {
        let x = data(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let xtx = build_xtx(&x).unwrap();
        assert!(xtx.entries().iter().all(|&v| v == 1.0), "{xtx:?}");
    }

    #[test]
    fn identical_rows_give_unit_entry() {
        let x = data(3, 2, &[1.0, 3.0, 1.0, 3.0, -2.0, 0.5]);
        let xxt = build_xxt(&x).unwrap();
        assert_eq!(xxt.get(0, 1), 1.0);
    }

    #[test]
    fn zero_columns_have_unit_diagonal() {
        let x = data(2, 2, &[0.0, 1.0, 0.0, 2.0]);
        let xtx = build_xtx(&x).unwrap();
        assert_eq!(xtx.get(0, 0), 1.0);
        assert_eq!(xtx.get(0, 1), 0.0);
    }

    #[test]
    fn threshold_examples() {
        let m = sym(&[&[1.0, 0.4, -0.6], &[0.4, 1.0, 0.3], &[-0.6, 0.3, 1.0]]);
        let mag = hard_threshold(&m, &ThresholdRule::magnitude(0.5).unwrap());
        assert_eq!(mag.get(0, 1), 0.0);
        assert_eq!(mag.get(0, 2), -0.6);
        let pos = hard_threshold(&m, &ThresholdRule::positive_only(0.5).unwrap());
        assert_eq!(pos.get(1, 2), 0.0);
        assert_eq!(pos.get(0, 2), 0.0);
        assert_eq!(pos.get(0, 0), 1.0);
    }

    #[test]
    fn threshold_boundary_is_kept() {
        let m = sym(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let t = hard_threshold(&m, &ThresholdRule::magnitude(0.5).unwrap());
        assert_eq!(t.get(0, 1), 0.5);
    }

    #[test]
    fn floor_examples() {
        let m = sym(&[&[0.0, 0.8], &[0.8, -0.005]]);
        let f = epsilon_floor(&m, 0.01).unwrap();
        assert_eq!(f.get(0, 0), 0.01);
        assert_eq!(f.get(0, 1), 0.8);
        assert_eq!(f.get(1, 1), -0.01);
        assert!(epsilon_floor(&m, 0.0).is_err());
    }

    #[test]
    fn invalid_rules_rejected() {
        assert!(ThresholdRule::new(0.5, 0.5, 0.01).is_err());
        assert!(ThresholdRule::new(0.6, 0.5, 0.01).is_err());
        assert!(ThresholdRule::new(-0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn class_map_examples() {
        let m = class_map(&["a", "a", "b"]).unwrap();
        let want = DMatrix::from_row_slice(3, 3, &[1., 1., 0., 1., 1., 0., 0., 0., 1.]);
        assert_eq!(m.entries(), &want);
        assert_eq!(m.mode(), Mode::Observations);
        let same = class_map(&[7, 7, 7, 7]).unwrap();
        assert!(same.entries().iter().all(|&v| v == 1.0));
        let distinct = class_map(&[1, 2, 3]).unwrap();
        assert_eq!(distinct.entries(), &DMatrix::identity(3, 3));
        assert!(class_map::<u8>(&[]).is_err());
    }

    #[test]
    fn subtract_min_examples() {
        let c = sym(&[&[0.3, 0.3], &[0.3, 0.3]]);
        assert!(subtract_min_baseline(&c)
            .entries()
            .iter()
            .all(|&v| v == 0.0));

        let m = sym(&[&[1.0, 0.9], &[0.9, 1.0]]);
        let out = subtract_min_baseline(&m);
        assert!((out.get(0, 0) - 0.1).abs() < 1e-15);
        assert!((out.get(1, 1) - 0.1).abs() < 1e-15);
        assert_eq!(out.get(0, 1), 0.0);
    }

    #[test]
    fn history_records_pipeline() {
        let x = data(2, 3, &[1.0, 0.2, 0.0, 0.3, 1.0, 0.1]);
        let rule = ThresholdRule::magnitude(0.5).unwrap();
        let m = epsilon_floor(&hard_threshold(&build_xtx(&x).unwrap(), &rule), 0.01).unwrap();
        assert_eq!(
            m.history(),
            &[
                Step::Cosine,
                Step::Threshold {
                    lo: Some(-0.5),
                    hi: Some(0.5)
                },
                Step::Floor { eps: 0.01 }
            ]
        );
        assert!(m.is_floored());
    }

    #[test]
    fn rule_serializes_unbounded_side_as_null() {
        let rule = ThresholdRule::positive_only(0.7).unwrap();
        let json = serde_json::to_string(&rule).unwrap();
        assert_eq!(json, r#"{"lo":null,"hi":0.7,"floor_eps":0.01}"#);
        let back: ThresholdRule = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rule);
    }

    #[test]
    fn from_matrix_averages_asymmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.4, 1.0]);
        let s = SymMatrix::from_matrix(m, Mode::Observations).unwrap();
        assert_eq!(s.get(0, 1), s.get(1, 0));
        assert!((s.get(0, 1) - 0.3).abs() < 1e-15);
        assert!(SymMatrix::from_matrix(DMatrix::zeros(2, 3), Mode::Variables).is_err());
    }
}
