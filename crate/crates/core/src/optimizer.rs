//! All-at-once minimization of the penalized loss.
//!
//! The solver is a limited-memory BFGS with Armijo backtracking. In bound
//! mode every trial point is projected onto the nonnegative orthant and the
//! quasi-Newton direction is restricted to coordinates that are not held at
//! the bound by the gradient.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crossprod::CrossProducts;
use crate::error::{Result, XcanError};
use crate::gradients;
use crate::model::{self, DataMatrix, FactorModel, LossBreakdown, ParamLayout, PenaltyWeights};
use crate::pipeline::GaussianStream;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Value given to negative entries of the SVD start in nonnegative mode.
pub const NONNEG_INIT_FILL: f64 = 1e-3;
/// Scale of the Gaussian perturbation applied to extra starts.
const RESTART_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub components: usize,
    pub weights: PenaltyWeights,
    pub nonneg: bool,
    pub with_baseline: bool,
    pub max_iters: usize,
    /// Infinity norm of the (projected) gradient.
    pub grad_tol: f64,
    /// Relative decrease of the loss between accepted iterates.
    pub rel_loss_tol: f64,
    /// Quasi-Newton history length.
    pub memory: usize,
    pub seed: u64,
    /// Number of starts; the first is the SVD solution, the rest are seeded
    /// perturbations of it.
    pub starts: usize,
}

impl FitConfig {
    pub fn new(components: usize) -> Self {
        FitConfig {
            components,
            weights: PenaltyWeights::default(),
            nonneg: false,
            with_baseline: false,
            max_iters: 5000,
            grad_tol: 1e-6,
            rel_loss_tol: 1e-9,
            memory: 10,
            seed: 0,
            starts: 1,
        }
    }

    pub fn with_weights(mut self, weights: PenaltyWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn nonneg(mut self, on: bool) -> Self {
        self.nonneg = on;
        self
    }

    pub fn baseline(mut self, on: bool) -> Self {
        self.with_baseline = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(XcanError::invalid(
                "number of components must be at least 1",
            ));
        }
        if self.max_iters == 0 || self.memory == 0 || self.starts == 0 {
            return Err(XcanError::invalid(
                "max_iters, memory and starts must be at least 1",
            ));
        }
        if !(self.grad_tol > 0.0 && self.rel_loss_tol > 0.0) {
            return Err(XcanError::invalid("tolerances must be positive"));
        }
        PenaltyWeights::new(
            self.weights.lambda0,
            self.weights.lambda_r,
            self.weights.lambda_c,
        )?;
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            rel_loss_tol: self.rel_loss_tol,
            memory: self.memory,
            nonneg: self.nonneg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    LossTol,
    MaxIters,
    /// Backtracking could not find a decrease; the best iterate is returned.
    LineSearchFailed,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradTol | Termination::LossTol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub rel_loss_tol: f64,
    pub memory: usize,
    /// Lower bound of zero on every coordinate.
    pub nonneg: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        FitConfig::new(1).solver()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective at the start point followed by every accepted iterate.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `H·q` for the implicit inverse Hessian.
fn apply_inverse_hessian(history: &VecDeque<Pair>, q: &[f64]) -> Vec<f64> {
    let mut r = q.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let a = pair.rho * dot(&pair.s, &r);
        for (ri, yi) in r.iter_mut().zip(&pair.y) {
            *ri -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        r.iter_mut().for_each(|v| *v *= gamma);
    }
    for (pair, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = pair.rho * dot(&pair.y, &r);
        for (ri, si) in r.iter_mut().zip(&pair.s) {
            *ri += (a - b) * si;
        }
    }
    r
}

/// Gradient with components pushing against an active zero bound removed.
fn projected_gradient(x: &[f64], g: &[f64], nonneg: bool) -> Vec<f64> {
    if !nonneg {
        return g.to_vec();
    }
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| if xi <= 0.0 && gi > 0.0 { 0.0 } else { gi })
        .collect()
}

/// Minimizes `oracle`, which returns the objective and its gradient.
///
/// `on_accept(iteration, x, value)` is called for the start point
/// (iteration 0) and after every accepted step.
pub fn minimize<F, C>(
    mut oracle: F,
    x0: Vec<f64>,
    opts: &SolverOptions,
    mut on_accept: C,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(usize, &[f64], f64) -> Result<()>,
{
    let mut x = x0;
    if opts.nonneg {
        x.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let (mut f, mut g) = oracle(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(XcanError::Numerical(
            "objective or gradient is not finite at the start point".into(),
        ));
    }
    on_accept(0, &x, f)?;

    let mut trace = vec![f];
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let termination = loop {
        let pg = projected_gradient(&x, &g, opts.nonneg);
        if inf_norm(&pg) < opts.grad_tol {
            break Termination::GradTol;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIters;
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if history.is_empty() {
                    break;
                }
                history.clear();
            }
            let mut d: Vec<f64> = apply_inverse_hessian(&history, &pg)
                .iter()
                .map(|v| -v)
                .collect();
            for (di, &p) in d.iter_mut().zip(&pg) {
                if p == 0.0 && opts.nonneg {
                    *di = 0.0;
                }
            }
            if dot(&d, &pg) >= 0.0 {
                history.clear();
                d = pg.iter().map(|v| -v).collect();
            }
            let mut step = if history.is_empty() {
                (1.0 / inf_norm(&d)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                let trial: Vec<f64> = x
                    .iter()
                    .zip(&d)
                    .map(|(xi, di)| {
                        let v = xi + step * di;
                        if opts.nonneg {
                            v.max(0.0)
                        } else {
                            v
                        }
                    })
                    .collect();
                let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                if s.iter().all(|&v| v == 0.0) {
                    break;
                }
                let (ft, gt) = oracle(&trial)?;
                if ft.is_finite()
                    && gt.iter().all(|v| v.is_finite())
                    && ft <= f + ARMIJO_C1 * dot(&g, &s)
                {
                    accepted = Some((trial, s, ft, gt));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((trial, s, ft, gt)) = accepted else {
            break Termination::LineSearchFailed;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }
        let rel_decrease = (f - ft) / f.abs().max(f64::MIN_POSITIVE);
        x = trial;
        f = ft;
        g = gt;
        iterations += 1;
        trace.push(f);
        on_accept(iterations, &x, f)?;
        if rel_decrease < opts.rel_loss_tol {
            break Termination::LossTol;
        }
    };

    Ok(Minimum {
        x,
        value: f,
        iterations,
        termination,
        trace,
    })
}

/// Rank-`h` truncated SVD start.
///
/// With `with_baseline` the column means go into `p0` and the SVD is taken
/// of the centered data. Each component is oriented so that its largest
/// loading entry is positive; in nonnegative mode remaining negative
/// entries are replaced by [`NONNEG_INIT_FILL`].
pub fn svd_init(
    x: &DataMatrix,
    h: usize,
    nonneg: bool,
    with_baseline: bool,
) -> Result<FactorModel> {
    let (n, m) = (x.n_obs(), x.n_vars());
    if h == 0 || h > n.min(m) {
        return Err(XcanError::invalid(format!(
            "number of components {h} must be between 1 and min(N, M) = {}",
            n.min(m)
        )));
    }
    let mut data = x.values().clone();
    let p0 = with_baseline.then(|| {
        let means = data.row_mean().transpose();
        for mut row in data.row_iter_mut() {
            row -= means.transpose();
        }
        means
    });

    let svd = data.svd(true, true);
    let (Some(u_full), Some(vt_full)) = (svd.u, svd.v_t) else {
        return Err(XcanError::Numerical(
            "SVD did not produce singular vectors".into(),
        ));
    };
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut u = DMatrix::zeros(n, h);
    let mut p = DMatrix::zeros(m, h);
    let mut s = DVector::zeros(h);
    for (k, &idx) in order.iter().take(h).enumerate() {
        let mut uk = u_full.column(idx).into_owned();
        let mut pk = vt_full.row(idx).transpose();
        let dominant = pk
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if dominant < 0.0 {
            uk.neg_mut();
            pk.neg_mut();
        }
        u.set_column(k, &uk);
        p.set_column(k, &pk);
        s[k] = sv[idx];
    }

    let mut model = FactorModel::new(u, s, p, p0)?;
    if nonneg {
        let fill = |v: &mut f64| {
            if *v < 0.0 {
                *v = NONNEG_INIT_FILL;
            }
        };
        model.u.iter_mut().for_each(fill);
        model.s.iter_mut().for_each(fill);
        model.p.iter_mut().for_each(fill);
        if let Some(b) = model.p0.as_mut() {
            b.iter_mut().for_each(fill);
        }
    }
    Ok(model)
}

/// Loss value and flat gradient at a flattened parameter vector.
pub fn objective(
    x: &DataMatrix,
    xp: &CrossProducts,
    w: &PenaltyWeights,
    layout: ParamLayout,
    params: &[f64],
) -> Result<(LossBreakdown, Vec<f64>)> {
    let m = FactorModel::from_params(layout, params)?;
    let l = model::loss(x, &m, xp, w)?;
    let g = gradients::gradient(x, &m, xp, w)?;
    Ok((l, g.to_flat()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FactorModel,
    /// Loss terms at the start point and every accepted iterate of the winning start.
    pub trace: Vec<LossBreakdown>,
    pub iterations: usize,
    pub termination: Termination,
    pub explained_variance: f64,
    /// Which start produced the result (0 is the unperturbed SVD start).
    pub start: usize,
}

impl FitResult {
    pub fn final_loss(&self) -> LossBreakdown {
        *self
            .trace
            .last()
            .expect("trace always holds the start point")
    }
}

/// Fits the model from the SVD start (plus optional perturbed restarts) and
/// returns the sign-aligned result with the lowest loss.
pub fn fit(x: &DataMatrix, xp: &CrossProducts, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    xp.check_against(x.n_obs(), x.n_vars())?;
    let init = svd_init(x, cfg.components, cfg.nonneg, cfg.with_baseline)?;
    let layout = init.layout();
    let opts = cfg.solver();
    let w = cfg.weights;

    let mut best: Option<(Minimum, Vec<LossBreakdown>, usize)> = None;
    for start in 0..cfg.starts {
        let mut x0 = init.to_params();
        if start > 0 {
            let mut rng = GaussianStream::new(cfg.seed.wrapping_add(start as u64));
            for v in x0.iter_mut() {
                *v += RESTART_JITTER * rng.standard_normal();
            }
        }
        let mut trace = Vec::new();
        let result = minimize(
            |p| objective(x, xp, &w, layout, p).map(|(l, g)| (l.total, g)),
            x0,
            &opts,
            |_, p, _| {
                trace.push(model::loss(
                    x,
                    &FactorModel::from_params(layout, p)?,
                    xp,
                    &w,
                )?);
                Ok(())
            },
        )?;
        let better = best.as_ref().is_none_or(|(b, _, _)| result.value < b.value);
        if better {
            best = Some((result, trace, start));
        }
    }
    let (min, trace, start) = best.expect("at least one start");

    let raw = FactorModel::from_params(layout, &min.x)?;
    let model = model::sign_align(&model::fold_scale_signs(&raw));
    let explained_variance = model::explained_variance(x, &model)?;
    Ok(FitResult {
        model,
        trace,
        iterations: min.iterations,
        termination: min.termination,
        explained_variance,
        start,
    })
}
