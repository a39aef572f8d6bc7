//! Win statistics (net benefit, win ratio, win odds) for cluster-randomized
//! trials.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`] and [`compare`]: clustered prioritized outcomes and the
//!   hierarchical pairwise win rule.
//! - [`tally`] and [`estimate`]: pairwise counts, cluster scores, point
//!   estimates, variance estimation and Wald tests on observed data.
//! - [`design`]: closed-form asymptotic variances, power and required
//!   cluster counts.
//! - [`generative`]: design inputs derived from frailty/copula survival and
//!   proportional-odds ordinal models, plus synthetic trial generation.
//! - [`sim`]: the Monte Carlo harness comparing empirical and predicted
//!   operating characteristics.
//! - [`io`]: long-format ingestion and report rendering.
//! - [`api`]: JSON bodies of the planning service.

pub mod api;
pub mod compare;
pub mod data;
pub mod design;
pub mod dist;
pub mod error;
pub mod estimate;
pub mod generative;
pub mod io;
pub mod numeric;
pub mod sim;
pub mod tally;

pub use compare::{classify_pair, ComparisonRule, Outcome, TierDirection};
pub use data::{Arm, Component, SubjectRecord, TrialDataset};
pub use design::{DesignInputs, DesignResult, Estimand, Sided, TestKind};
pub use error::{Error, Result};
pub use generative::{DesignInputEstimate, EstimationOptions, GenerativeSpec};
pub use estimate::{cluster_icc, estimate, permutation_variance, pooled_null_variance, rank_icc, Alternative, WinEstimates};
pub use sim::{ScenarioGrid, ScenarioResult};
pub use tally::{tally, ComparisonTally, PooledProbabilities};
