//! End-to-end analysis: tally, PIM fit, estimators and inference.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset};
use crate::error::{Error, FitError};
use crate::estimators::{
    adjusted_estimates_with, bootstrap_variance_with, win_odds_inference, AdjustedEstimates,
    BootstrapVariance, MpiResult, Sided, StratifiedResampler, WinOddsResult,
};
use crate::pim::{fit_pim_with, PimFit, PimOptions};
use crate::rule::{pairwise_tally_with, TallyCounts, TwoLevelRule, WinRule, WinTally};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapRequest {
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub alpha: f64,
    pub sided: Sided,
    pub bootstrap: Option<BootstrapRequest>,
    pub pim: PimOptions,
    /// Record wall-clock stage timings in the report. Off by default so
    /// reports are reproducible byte for byte.
    pub timings: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            alpha: 0.05,
            sided: Sided::Two,
            bootstrap: None,
            pim: PimOptions::default(),
            timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub subjects: usize,
    /// Subjects with a fatal or nonfatal event.
    pub composite_events: usize,
    pub fatal_events: usize,
    pub nonfatal_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub n_control: usize,
    pub n_treated: usize,
    pub control: ArmSummary,
    pub treated: ArmSummary,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> DatasetSummary {
        let arm_summary = |arm: Arm| {
            let rs = ds.records().iter().filter(|r| r.arm == arm);
            let mut s = ArmSummary {
                arm,
                subjects: 0,
                composite_events: 0,
                fatal_events: 0,
                nonfatal_events: 0,
            };
            for r in rs {
                s.subjects += 1;
                s.composite_events += r.outcome.has_event() as usize;
                s.fatal_events += r.outcome.d1 as usize;
                s.nonfatal_events += r.outcome.d2 as usize;
            }
            s
        };
        DatasetSummary {
            n: ds.len(),
            n_control: ds.n_control(),
            n_treated: ds.n_treated(),
            control: arm_summary(Arm::Control),
            treated: arm_summary(Arm::Treated),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub estimate: MpiResult,
    pub inference: WinOddsResult,
}

/// Seconds spent per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub tally: f64,
    pub fit: f64,
    pub estimation: f64,
    pub bootstrap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub summary: DatasetSummary,
    pub adjusted_for: Vec<String>,
    pub tally: TallyCounts,
    pub pim: PimFit,
    pub unadjusted: MethodReport,
    pub adjusted: MethodReport,
    pub nu_standardized: f64,
    /// `|ν̂_stand − ν̂_aug|`.
    pub identity_residual: f64,
    pub bootstrap: Option<BootstrapVariance>,
    pub timings: Option<StageTimings>,
}

/// Fit plus adjusted estimates for a dataset whose covariates are exactly
/// the adjustment set.
pub fn adjusted_analysis<R: WinRule>(
    ds: &Dataset,
    tally: &WinTally,
    rule: &R,
    pim: &PimOptions,
) -> Result<(PimFit, AdjustedEstimates), FitError> {
    let fit = fit_pim_with(ds, rule, pim)?;
    let est = adjusted_estimates_with(&fit, tally, ds, rule);
    Ok((fit, est))
}

pub fn analyze(ds: &Dataset, adjust: &[usize], opts: &AnalysisOptions) -> Result<AnalysisReport, Error> {
    analyze_with(ds, adjust, opts, &TwoLevelRule)
}

/// Unadjusted and adjusted win odds for `ds`, adjusting for the covariates
/// at `adjust`.
pub fn analyze_with<R: WinRule>(
    ds: &Dataset,
    adjust: &[usize],
    opts: &AnalysisOptions,
    rule: &R,
) -> Result<AnalysisReport, Error> {
    let subset = ds.select_covariates(adjust)?;

    let clock = Instant::now();
    let tally = pairwise_tally_with(&subset, rule);
    let t_tally = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let fit = fit_pim_with(&subset, rule, &opts.pim)?;
    let t_fit = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let est = adjusted_estimates_with(&fit, &tally, &subset, rule);
    let unadjusted = MpiResult::unadjusted(&tally);
    let adjusted = MpiResult::adjusted(&est, &tally);
    let unadjusted_inf = win_odds_inference(&unadjusted, opts.alpha, opts.sided)?;
    let adjusted_inf = win_odds_inference(&adjusted, opts.alpha, opts.sided)?;
    let t_est = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let bootstrap = match opts.bootstrap {
        Some(req) => Some(bootstrap_variance_with(
            &subset,
            req.replicates,
            &StratifiedResampler { seed: req.seed },
            rule,
            &opts.pim,
        )?),
        None => None,
    };
    let t_boot = clock.elapsed().as_secs_f64();

    Ok(AnalysisReport {
        summary: DatasetSummary::of(ds),
        adjusted_for: subset.covariate_names().to_vec(),
        tally: tally.counts,
        pim: fit,
        unadjusted: MethodReport {
            estimate: unadjusted,
            inference: unadjusted_inf,
        },
        adjusted: MethodReport {
            estimate: adjusted,
            inference: adjusted_inf,
        },
        nu_standardized: est.nu_stand,
        identity_residual: (est.nu_stand - est.nu_aug).abs(),
        bootstrap,
        timings: opts.timings.then_some(StageTimings {
            tally: t_tally,
            fit: t_fit,
            estimation: t_est,
            bootstrap: t_boot,
        }),
    })
}
