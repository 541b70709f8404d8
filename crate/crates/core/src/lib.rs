//! Covariate-adjusted win odds for hierarchical composite endpoints.
//!
//! The unadjusted win odds come from the pairwise tally of treated versus
//! control subjects. The adjusted estimate fits a probabilistic index model
//! on pair differences with a logit link and combines it with the tally
//! through standardization or, equivalently, augmentation.
//!
//! ```
//! use winodds::{analyze, AnalysisOptions, Dataset, Outcome, SubjectRecord, Arm};
//!
//! let rows = [
//!     (Arm::Control, 1.0, 10.0, true),
//!     (Arm::Control, 2.0, 30.0, false),
//!     (Arm::Control, 0.5, 12.0, true),
//!     (Arm::Treated, 1.5, 25.0, true),
//!     (Arm::Treated, 0.2, 40.0, false),
//!     (Arm::Treated, 1.1, 35.0, false),
//! ];
//! let records = rows
//!     .iter()
//!     .enumerate()
//!     .map(|(k, &(arm, x, u, d))| SubjectRecord {
//!         id: k.to_string(),
//!         arm,
//!         covariates: vec![x],
//!         outcome: Outcome { u1: u, d1: d, u2: u, d2: false },
//!     })
//!     .collect();
//! let ds = Dataset::new(records, vec!["x".into()]).unwrap();
//! let report = analyze(&ds, &[], &AnalysisOptions::default()).unwrap();
//! assert_eq!(report.unadjusted.estimate.nu_hat, report.adjusted.estimate.nu_hat);
//! ```

pub mod analysis;
pub mod data;
pub mod error;
pub mod estimators;
pub mod io;
mod kernel;
pub mod pim;
pub mod rng;
pub mod rule;
pub mod sim;

pub use analysis::{analyze, analyze_with, AnalysisOptions, AnalysisReport, BootstrapRequest};
pub use data::{validate_dataset, Arm, Dataset, Outcome, RawRecord, SubjectRecord};
pub use error::{DataError, Error, FitError, InferenceError, Result, StudyError};
pub use estimators::{
    adjusted_estimates, adjusted_variance, augmented_mpi, bootstrap_variance, direct_mpi,
    standardized_mpi, unadjusted_variance, win_odds_inference, Method, MpiResult, Sided,
    WinOddsResult,
};
pub use io::{load_csv, read_csv, CategoricalSpec, CsvSchema};
pub use kernel::expit;
pub use pim::{cpi_predict, fit_pim, fit_pim_with, PimFit, PimOptions};
pub use rule::{compare, pairwise_tally, Comparison, TallyCounts, TwoLevelRule, WinRule, WinTally};
pub use sim::{
    emit_incidence_curve, run_study, simulate_trial, Scenario, StudyConfig, StudyResult,
    TrialSettings,
};
