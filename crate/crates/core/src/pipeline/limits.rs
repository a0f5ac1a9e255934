//! Per-component control limits on score vectors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, XcanError};

pub const DEFAULT_COVERAGE: f64 = 0.99;
pub const MIN_OBSERVATIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentLimits {
    pub component: usize,
    pub lo: f64,
    pub hi: f64,
    /// Observations strictly outside `[lo, hi]`.
    pub flagged: Vec<usize>,
}

/// Two-sided normal quantile for the given coverage, e.g. 2.5758 for 0.99.
pub fn normal_quantile(coverage: f64) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(XcanError::invalid(format!(
            "coverage must lie in (0, 1), got {coverage}"
        )));
    }
    let std = Normal::new(0.0, 1.0).map_err(|e| XcanError::Numerical(e.to_string()))?;
    Ok(std.inverse_cdf(1.0 - 0.5 * (1.0 - coverage)))
}

/// `mean ± z·sd` per score column, with the sample (n−1) standard deviation.
pub fn control_limits(scores: &DMatrix<f64>, coverage: f64) -> Result<Vec<ComponentLimits>> {
    let z = normal_quantile(coverage)?;
    let n = scores.nrows();
    if n < MIN_OBSERVATIONS {
        return Err(XcanError::invalid(format!(
            "control limits need at least {MIN_OBSERVATIONS} observations, got {n}"
        )));
    }
    Ok(scores
        .column_iter()
        .enumerate()
        .map(|(component, col)| {
            let first = col[0];
            if col.iter().all(|&v| v == first) {
                return ComponentLimits {
                    component,
                    lo: first,
                    hi: first,
                    flagged: Vec::new(),
                };
            }
            let mean = col.sum() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let (lo, hi) = (mean - z * sd, mean + z * sd);
            let flagged = col
                .iter()
                .enumerate()
                .filter(|(_, &v)| v < lo || v > hi)
                .map(|(i, _)| i)
                .collect();
            ComponentLimits {
                component,
                lo,
                hi,
                flagged,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::GaussianStream;

    #[test]
    fn quantile_values() {
        assert!((normal_quantile(0.99).unwrap() - 2.575829303549).abs() < 1e-9);
        assert!((normal_quantile(0.95).unwrap() - 1.959963984540).abs() < 1e-9);
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn constant_column_has_no_flags() {
        let t = DMatrix::from_element(10, 1, 0.1);
        let l = &control_limits(&t, 0.99).unwrap()[0];
        assert_eq!((l.lo, l.hi), (0.1, 0.1));
        assert!(l.flagged.is_empty());
    }

    #[test]
    fn monte_carlo_flag_rate() {
        let mut g = GaussianStream::new(2024);
        let t = DMatrix::from_fn(10_000, 1, |_, _| g.standard_normal());
        let frac = control_limits(&t, 0.99).unwrap()[0].flagged.len() as f64 / 10_000.0;
        assert!((0.005..=0.02).contains(&frac), "{frac}");
    }

    #[test]
    fn injected_outlier_is_flagged() {
        let mut g = GaussianStream::new(5);
        let mut t = DMatrix::from_fn(200, 2, |_, _| g.standard_normal());
        t[(37, 1)] = 10.0;
        let limits = control_limits(&t, 0.99).unwrap();
        assert!(limits[1].flagged.contains(&37));
    }

    #[test]
    fn too_few_observations() {
        assert!(control_limits(&DMatrix::zeros(7, 1), 0.99).is_err());
    }
}
