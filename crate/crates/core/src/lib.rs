//! Sparse additive models.
//!
//! Fits `Y = α + Σ_j f_j(X_j) + ε` with a penalty `λ Σ_j ‖f_j‖` that removes
//! whole components, using sparse backfitting over pluggable univariate
//! smoothers. Also provided: an additive logistic variant, coordinate
//! descent solvers for the lasso and grouped lasso, regularisation paths
//! with Cp/GCV selection, and dataset utilities.

pub mod backfit;
pub mod data;
pub mod error;
pub mod lasso;
pub mod logistic;
pub mod model;
pub mod selection;
pub mod smoothers;

pub use backfit::{fit, soft_threshold_component, Backfitter, FitConfig};
pub use data::{
    augment_irrelevant, generate_synthetic, load_csv, Augmented, ColumnScale, Dataset, GroundTruth, SyntheticSpec,
};
pub use error::{Result, SpamError};
pub use lasso::{grouped_lasso, lasso_cd, GroupedDesign, GroupedSolution, LassoFit};
pub use logistic::{fit_logistic, local_scoring_update, LogisticFitState};
pub use model::{predict, ComponentFunction, ComponentRep, Link, SpamModel};
pub use selection::{compute_path, cp_score, effective_df, gcv_score, Criterion, LambdaPath, RiskEstimates};
pub use smoothers::{build_basis, fit_smoother, Basis, FittedSmoother, SmootherSpec};
