//! Preprocessing, synthetic data and the score control-limit workflow.

mod limits;
mod rng;
mod sim;

pub use limits::{
    control_limits, normal_quantile, ComponentLimits, DEFAULT_COVERAGE, MIN_OBSERVATIONS,
};
pub use rng::GaussianStream;
pub use sim::{
    build_block_data, derive_seed, simulate_correlated, simulate_spectra, BlockTruth, OffBlockFill,
    SimSpec, Spectra, SpectraSpec, MAX_SHARED_PATTERN_COSINE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, XcanError};
use crate::model::DataMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessKind {
    None,
    /// Column mean-centering and scaling to unit sample (n−1) standard deviation.
    Autoscale,
}

/// Record of the preprocessing applied to a data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub kind: PreprocessKind,
    pub means: Option<Vec<f64>>,
    pub stds: Option<Vec<f64>>,
}

impl Preprocessing {
    pub fn none() -> Self {
        Preprocessing {
            kind: PreprocessKind::None,
            means: None,
            stds: None,
        }
    }

    /// Re-applies the recorded transform to new data with the same columns.
    pub fn apply(&self, x: &DataMatrix) -> Result<DataMatrix> {
        match (self.kind, &self.means, &self.stds) {
            (PreprocessKind::None, _, _) => Ok(x.clone()),
            (PreprocessKind::Autoscale, Some(means), Some(stds)) => {
                if means.len() != x.n_vars() {
                    return Err(XcanError::dims(
                        "preprocessing columns",
                        means.len(),
                        x.n_vars(),
                    ));
                }
                let mut v = x.values().clone();
                for (j, mut col) in v.column_iter_mut().enumerate() {
                    col.iter_mut().for_each(|c| *c = (*c - means[j]) / stds[j]);
                }
                x.with_values(v)
            }
            _ => Err(XcanError::invalid(
                "autoscale record is missing means or standard deviations",
            )),
        }
    }
}

/// Centers every column and scales it to unit sample standard deviation.
pub fn autoscale(x: &DataMatrix) -> Result<(DataMatrix, Preprocessing)> {
    let n = x.n_obs();
    if n < 2 {
        return Err(XcanError::invalid(
            "autoscaling needs at least two observations",
        ));
    }
    let mut means = Vec::with_capacity(x.n_vars());
    let mut stds = Vec::with_capacity(x.n_vars());
    for (j, col) in x.values().column_iter().enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(XcanError::invalid(format!(
                "column {} is constant and cannot be scaled",
                x.col_labels()[j]
            )));
        }
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        means.push(mean);
        stds.push(var.sqrt());
    }
    let record = Preprocessing {
        kind: PreprocessKind::Autoscale,
        means: Some(means),
        stds: Some(stds),
    };
    Ok((record.apply(x)?, record))
}
