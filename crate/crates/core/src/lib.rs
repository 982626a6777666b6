//! Simulation and learning toolkit for strategic classification with
//! causal label effects.
//!
//! Users best-respond to a published linear classifier by moving their
//! features at quadratic cost; movement of causal features also changes
//! true labels through a ground-truth labeling function over causal and
//! hidden features. The crate provides the response geometry, density
//! estimation and feature reconstruction, the strategic training
//! objectives, the baseline learners, the multi-round retraining
//! dynamics, and Monte-Carlo validation of the induced distribution
//! shifts.

pub mod cost;
pub mod data;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod labeling;
pub mod learners;
pub mod mat;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod seeds;

pub use cost::{
    best_respond, inverse_set, soft_move, BestResponse, CostModel, InverseSegment,
    ResponseDirection, DEFAULT_BOUNDARY_TOL,
};
pub use data::{gather, project, split, Dataset, FeaturePartition, Selector, Split, SplitSpec};
pub use density::{default_bandwidth_grid, fit_kde, log_spaced_grid, reconstruct_xr, DensityModel};
pub use dynamics::{
    induce, run_dynamics, DensityConfig, DynamicsInputs, DynamicsTrace, RoundRecord,
    StrategicParams,
};
pub use error::{CoreError, Result};
pub use labeling::{
    fit_semi_synthetic_oracle, Ellipse, LabelOracle, OracleFitParams, SemiSyntheticKind,
};
pub use learners::{
    apply_partition_error, h_input_matrix, prepare_dirty, train_f, train_h, FObjective,
    HypothesisSpec, LearnerView, Method, PartitionError, TrainParams,
};
pub use mat::Matrix;
pub use metrics::{
    estimate_nu, evaluate, evaluate_clean, validate_covariate_shift, validate_marginal,
    MetricsReport, NuGrid, ShiftEstimate,
};
pub use models::{HypothesisModel, LinearModel};
pub use objective::{
    cserm_objective, erm_objective, hinge, oracle_objective, serm_objective, soft_label,
    strategic_hinge, ObjectiveConfig,
};
