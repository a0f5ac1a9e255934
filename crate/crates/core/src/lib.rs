//! Cross-product penalized component analysis.
//!
//! Factorizes a data matrix as `X ≈ 1·p0ᵀ + U·diag(s)·Pᵀ` by minimizing
//!
//! ```text
//! ‖X − 1·p0ᵀ − U S Pᵀ‖²_F + λ0·F0 + λr·Fr + λc·Fc
//! F0 = Σ_h (‖p_h‖² − 1)² + (‖u_h‖² − 1)²
//! Fr = Σ_h ‖(u_h u_hᵀ) ⊘ XXt‖²_F
//! Fc = Σ_h ‖(p_h p_hᵀ) ⊘ XtX‖²_F
//! ```
//!
//! where `XtX` and `XXt` are cross-product matrices over variables and
//! observations. Small entries in those matrices (floored away from zero)
//! make it expensive for unrelated variables or observations to share a
//! component, which yields sparse, structure-respecting loadings and scores.

pub mod cli;
pub mod crossprod;
pub mod error;
pub mod gradients;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod plot;

pub use crossprod::{CrossProducts, Mode, SymMatrix, ThresholdRule};
pub use error::{Result, XcanError};
pub use model::{DataMatrix, FactorModel, LossBreakdown, PenaltyWeights};
pub use optimizer::{fit, FitConfig, FitResult, Termination};
