//! Analytic gradient of the penalized loss and a central-difference check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crossprod::{CrossProducts, ThresholdRule};
use crate::error::{Result, XcanError};
use crate::model::{self, DataMatrix, FactorModel, LossBreakdown, PenaltyWeights};
use crate::pipeline::GaussianStream;

/// Partial derivatives with the same shapes as the [`FactorModel`] fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub du: DMatrix<f64>,
    /// Only the diagonal of S is a parameter.
    pub ds: DVector<f64>,
    pub dp: DMatrix<f64>,
    pub dp0: Option<DVector<f64>>,
}

impl Gradient {
    /// Flattened in the same order as [`FactorModel::to_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.du.as_slice());
        out.extend_from_slice(self.ds.as_slice());
        out.extend_from_slice(self.dp.as_slice());
        if let Some(b) = &self.dp0 {
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

/// Adds the normalization and structural terms for one factor matrix
/// (`U` with `XXt`, or `P` with `XtX`) into `grad`.
fn add_penalty_terms(
    grad: &mut DMatrix<f64>,
    factors: &DMatrix<f64>,
    divisor: &crate::crossprod::SymMatrix,
    lambda0: f64,
    lambda_struct: f64,
) {
    for (h, v) in factors.column_iter().enumerate() {
        let norm_dev = v.norm_squared() - 1.0;
        let weights = if lambda_struct != 0.0 {
            Some(model::divided_weights(v, divisor))
        } else {
            None
        };
        let mut g = grad.column_mut(h);
        for i in 0..v.len() {
            let mut acc = lambda0 * 4.0 * v[i] * norm_dev;
            if let Some(w) = &weights {
                acc += lambda_struct * 4.0 * v[i] * w[i];
            }
            g[i] += acc;
        }
    }
}

/// Gradient of the total loss with respect to `U`, `diag(S)`, `P` and `p0`.
pub fn gradient(
    x: &DataMatrix,
    m: &FactorModel,
    xp: &CrossProducts,
    w: &PenaltyWeights,
) -> Result<Gradient> {
    xp.check_against(x.n_obs(), x.n_vars())?;
    let e = model::residual(x, m)?;
    let t = model::scores(m);

    let ep = &e * &m.p;
    let mut du = &ep * -2.0;
    for (mut col, s) in du.column_iter_mut().zip(m.s.iter()) {
        col *= *s;
    }
    let ds = DVector::from_fn(m.n_components(), |h, _| {
        -2.0 * m.u.column(h).dot(&ep.column(h))
    });
    let mut dp = e.transpose() * t * -2.0;
    let dp0 =
        m.p0.as_ref()
            .map(|_| DVector::from_iterator(e.ncols(), e.column_iter().map(|c| -2.0 * c.sum())));

    add_penalty_terms(&mut du, &m.u, &xp.xxt, w.lambda0, w.lambda_r);
    add_penalty_terms(&mut dp, &m.p, &xp.xtx, w.lambda0, w.lambda_c);

    Ok(Gradient { du, ds, dp, dp0 })
}

/// Result of [`fd_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Index into the flattened parameter vector.
    pub worst_index: usize,
    /// Readable name of that coordinate, e.g. `P[2,0]`.
    pub worst_coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares [`gradient`] against central differences of the loss on every
/// flattened coordinate.
///
/// Each loss term is differenced separately and then weighted, which keeps
/// large penalty values from swamping the rounding budget of the fit term.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn fd_check(
    x: &DataMatrix,
    m: &FactorModel,
    xp: &CrossProducts,
    w: &PenaltyWeights,
    step: f64,
) -> Result<FdReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(XcanError::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let analytic = gradient(x, m, xp, w)?.to_flat();
    let layout = m.layout();
    let mut params = m.to_params();

    let eval = |params: &[f64]| -> Result<LossBreakdown> {
        model::loss(x, &FactorModel::from_params(layout, params)?, xp, w)
    };

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
        worst_coordinate: layout.coordinate_name(0),
        analytic: analytic[0],
        numeric: f64::NAN,
    };
    for k in 0..params.len() {
        let orig = params[k];
        params[k] = orig + step;
        let plus = eval(&params)?;
        params[k] = orig - step;
        let minus = eval(&params)?;
        params[k] = orig;

        let d = |a: f64, b: f64| (a - b) / (2.0 * step);
        let numeric = d(plus.fit, minus.fit)
            + w.lambda0 * d(plus.f0, minus.f0)
            + w.lambda_r * d(plus.fr, minus.fr)
            + w.lambda_c * d(plus.fc, minus.fc);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_err || k == 0 {
            report = FdReport {
                max_rel_err: rel,
                worst_index: k,
                worst_coordinate: layout.coordinate_name(k),
                analytic: a,
                numeric,
            };
        }
    }
    Ok(report)
}

/// Shape of a random gradient-check problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n_obs: usize,
    pub n_vars: usize,
    pub components: usize,
    pub baseline: bool,
    /// Draw a nonnegative parameter point.
    pub nonneg: bool,
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            n_obs: 8,
            n_vars: 6,
            components: 3,
            baseline: false,
            nonneg: false,
            seed: 0,
        }
    }
}

/// Magnitude threshold applied to the cross-products of random instances.
pub const INSTANCE_THRESHOLD: f64 = 0.3;

/// Seeded data, parameter point and floored cross-products.
///
/// `X` is standard normal. The cross-products are its cosine matrices with
/// magnitudes below [`INSTANCE_THRESHOLD`] zeroed and then floored at 0.01,
/// so the instance exercises the large divisors. `U` and `P` entries are
/// normal with sd 0.5, `s` is uniform in `[0.5, 2)` and `p0` is standard
/// normal; all are replaced by magnitudes when `nonneg` is set.
pub fn random_instance(spec: &InstanceSpec) -> Result<(DataMatrix, FactorModel, CrossProducts)> {
    let InstanceSpec {
        n_obs: n,
        n_vars: m,
        components: h,
        ..
    } = *spec;
    if n < 2 || m < 2 || h == 0 {
        return Err(XcanError::invalid(format!(
            "random instance needs at least 2x2 data and one component, got {n}x{m} with {h}"
        )));
    }
    let mut rng = GaussianStream::new(spec.seed);
    let x = DataMatrix::unlabeled(DMatrix::from_fn(n, m, |_, _| rng.standard_normal()))?;
    let sign = |v: f64| if spec.nonneg { v.abs() } else { v };
    let u = DMatrix::from_fn(n, h, |_, _| sign(rng.normal(0.0, 0.5)));
    let s = DVector::from_fn(h, |_, _| rng.uniform_in(0.5, 2.0));
    let p = DMatrix::from_fn(m, h, |_, _| sign(rng.normal(0.0, 0.5)));
    let p0 = spec
        .baseline
        .then(|| DVector::from_fn(m, |_, _| sign(rng.standard_normal())));
    let model = FactorModel::new(u, s, p, p0)?;
    let xp = CrossProducts::thresholded(&x, &ThresholdRule::magnitude(INSTANCE_THRESHOLD)?)?;
    Ok((x, model, xp))
}
