//! Estimation of the log partition ratio `log Q = log Z(beta_max) - log Z(beta_min)`
//! of a Gibbs distribution from black-box samples of its gross distribution.
//!
//! The crate is organized bottom-up:
//!
//! - [`beta`], [`schedule`] and [`gibbs`]: extended-real parameters, cooling
//!   schedules, explicit models and their exact analytics (`z`, `z'`, `z''`,
//!   curvature, widths).
//! - [`oracle`]: the sampling interface, exact and perturbed samplers, and an
//!   instrumented session that counts samples and adaptivity rounds.
//! - [`schedules`]: the static schedule, TPA and PseudoTPA generators.
//! - [`estimators`]: the paired product estimator, the one-round and
//!   three-round pipelines and median boosting.
//! - [`verify`]: exact and Monte-Carlo checks of the guarantees above.
//!
//! ```
//! use gibbs_ratio::{estimate_nonadaptive, fixtures, ExactSampler};
//!
//! let fx = fixtures::get("single").unwrap();
//! let oracle = ExactSampler::new(fx.model.clone());
//! let report = estimate_nonadaptive(&fx.spec, &oracle, 0.2, 7).unwrap();
//! assert!((report.log_q_hat - 4.0).abs() < 1e-9);
//! assert_eq!(report.stats.rounds, 1);
//! ```

pub mod beta;
pub mod error;
pub mod estimators;
pub mod fixtures;
pub mod gibbs;
pub mod oracle;
pub mod schedule;
pub mod schedules;
pub mod verify;

pub use beta::{Beta, ProblemSpec};
pub use error::{Error, Result};
pub use estimators::{
    estimate_nonadaptive, estimate_three_round, median_boost, ppe, ppe_exact_moments,
    ppe_sample_size, EstimateReport, KappaPolicy, Pipeline, PipelineKind, SampleSize,
};
pub use gibbs::{Atom, GrossModel, ScheduleStats, Widths};
pub use oracle::{ExactSampler, OracleSession, OracleStats, SampleOracle, TvPerturbed};
pub use schedule::Schedule;
pub use schedules::{pseudo_tpa, static_schedule, tpa_run, tpa_union, PseudoTpaConfig};
