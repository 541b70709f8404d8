//! Synthetic trials from a latent exponential failure-time model, and
//! Monte-Carlo studies of rejection rates.
//!
//! Per subject: `X_1..X_p ~ N(0,1)`, `A ~ Bernoulli(½)`, and two latent
//! times `T_k = scale · exp(effect·A + γᵀX) · E_k` with `E_k ~ Exp(1)`.
//! Follow-up is cut at `T_cens`, the empirical `event_fraction`-quantile of
//! `min(T_1, T_2)` in the realized sample, and the observed record is
//! `(min(T_1, T_cens), I(T_1 < T_cens), min(T_2, T_1, T_cens), I(T_2 < min(T_1, T_cens)))`.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::adjusted_analysis;
use crate::data::{Arm, Dataset, Outcome, SubjectRecord};
use crate::error::StudyError;
use crate::estimators::{win_odds_inference, Method, MpiResult, Sided};
use crate::pim::PimOptions;
use crate::rng::{self, Purpose};
use crate::rule::{pairwise_tally, TwoLevelRule};

/// Number of covariates in the simulation model.
pub const N_COVARIATES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Equal influence of all covariates.
    A,
    /// Linearly decreasing influence.
    B,
    /// Influence concentrated in the first covariates, none after the fifth.
    C,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            "C" | "c" => Ok(Scenario::C),
            other => Err(format!("unknown scenario '{other}' (expected A, B or C)")),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::C => "C",
        };
        f.write_str(s)
    }
}

/// Covariate coefficients `γ` with unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioWeights {
    pub gamma: Vec<f64>,
}

pub fn scenario_weights(s: Scenario) -> ScenarioWeights {
    let raw: Vec<f64> = (1..=N_COVARIATES)
        .map(|j| {
            let j = j as f64;
            match s {
                Scenario::A => 1.0,
                Scenario::B => 1.0 - (j - 1.0) / 10.0,
                Scenario::C if j <= 5.0 => 1.0 / (j * j),
                Scenario::C => 0.0,
            }
        })
        .collect();
    let norm = raw.iter().map(|d| d * d).sum::<f64>().sqrt();
    ScenarioWeights {
        gamma: raw.iter().map(|d| d / norm).collect(),
    }
}

/// How treatment labels are detached from outcomes under the null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipMode {
    /// Fresh Bernoulli(½) labels.
    #[default]
    Redraw,
    /// Random permutation of the realized labels.
    Permute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSettings {
    pub n: usize,
    pub weights: Vec<f64>,
    pub effect: f64,
    pub null_flip: bool,
    pub flip_mode: FlipMode,
    pub event_fraction: f64,
    pub scale: f64,
}

impl TrialSettings {
    pub fn new(n: usize, scenario: Scenario) -> TrialSettings {
        TrialSettings {
            n,
            weights: scenario_weights(scenario).gamma,
            effect: 0.3,
            null_flip: false,
            flip_mode: FlipMode::Redraw,
            event_fraction: 0.35,
            scale: 7500.0,
        }
    }
}

pub fn simulate_trial(settings: &TrialSettings, seed: u64) -> Dataset {
    simulate_replicate(settings, seed, 0)
}

/// One synthetic trial drawn from the `(seed, replicate)` streams.
///
/// Draws are conditioned on both arms having at least two subjects; with
/// realistic `n` the redraw never triggers.
pub fn simulate_replicate(settings: &TrialSettings, seed: u64, replicate: u64) -> Dataset {
    assert!(settings.n >= 4, "a trial needs at least 4 subjects");
    let n = settings.n;
    let p = settings.weights.len();
    let mut rng = rng::stream(seed, replicate, Purpose::Trial);

    let (covariates, mut arms, t1, t2) = loop {
        let mut covariates = Vec::with_capacity(n);
        let mut arms = Vec::with_capacity(n);
        let mut t1 = Vec::with_capacity(n);
        let mut t2 = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let treated: bool = rng.random_bool(0.5);
            let e1: f64 = rng.sample(Exp1);
            let e2: f64 = rng.sample(Exp1);
            let lin = settings.effect * treated as u8 as f64
                + settings.weights.iter().zip(&x).map(|(g, x)| g * x).sum::<f64>();
            let rate = settings.scale * lin.exp();
            t1.push(rate * e1);
            t2.push(rate * e2);
            covariates.push(x);
            arms.push(treated);
        }
        if arms_ok(&arms) {
            break (covariates, arms, t1, t2);
        }
    };

    if settings.null_flip {
        let mut flip = rng::stream(seed, replicate, Purpose::Flip);
        match settings.flip_mode {
            FlipMode::Redraw => loop {
                arms.iter_mut().for_each(|a| *a = flip.random_bool(0.5));
                if arms_ok(&arms) {
                    break;
                }
            },
            FlipMode::Permute => arms.shuffle(&mut flip),
        }
    }

    let first: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a.min(*b)).collect();
    let t_cens = empirical_quantile(&first, settings.event_fraction)
        .expect("n ≥ 4 and event fraction validated");

    let records = (0..n)
        .map(|i| SubjectRecord {
            id: format!("s{}", i + 1),
            arm: if arms[i] { Arm::Treated } else { Arm::Control },
            covariates: covariates[i].clone(),
            outcome: observe(t1[i], t2[i], t_cens),
        })
        .collect();
    Dataset::new(records, Dataset::default_names(p)).expect("simulated data are valid")
}

fn arms_ok(arms: &[bool]) -> bool {
    let treated = arms.iter().filter(|&&a| a).count();
    treated >= 2 && arms.len() - treated >= 2
}

fn observe(t1: f64, t2: f64, t_cens: f64) -> Outcome {
    Outcome {
        u1: t1.min(t_cens),
        d1: t1 < t_cens,
        u2: t2.min(t1).min(t_cens),
        d2: t2 < t1.min(t_cens),
    }
}

/// Left-continuous inverse of the empirical CDF: the `⌈q·n⌉`-th order
/// statistic.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64, StudyError> {
    if values.is_empty() {
        return Err(StudyError::EmptySample);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(StudyError::InvalidQuantile(q));
    }
    let n = values.len();
    let pos = q * n as f64;
    // q·n can land a rounding error above an integer (0.35·20 → 7.000…01).
    let rank = ((pos - pos * 1e-12).ceil() as usize).clamp(1, n);
    let mut v = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*kth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub reps: usize,
    pub scenario: Scenario,
    pub treatment_effect: f64,
    pub null_flip: bool,
    pub flip_mode: FlipMode,
    /// One-sided level for `H0: θ ≤ 1`.
    pub alpha: f64,
    /// Covariate prefix sizes to adjust for; 0 is the unadjusted analysis,
    /// which is always included.
    pub adjustment_sets: Vec<usize>,
    pub seed: u64,
    pub event_fraction: f64,
    pub scale: f64,
    pub pim: PimOptions,
}

impl StudyConfig {
    pub fn new(n: usize, reps: usize, scenario: Scenario) -> StudyConfig {
        StudyConfig {
            n,
            reps,
            scenario,
            treatment_effect: 0.3,
            null_flip: false,
            flip_mode: FlipMode::Redraw,
            alpha: 0.025,
            adjustment_sets: (0..=N_COVARIATES).collect(),
            seed: 1,
            event_fraction: 0.35,
            scale: 7500.0,
            pim: PimOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |msg: String| Err(StudyError::InvalidConfig(msg));
        if self.reps < 1 {
            return bad("reps must be at least 1".into());
        }
        if self.n < 4 {
            return bad(format!("n must be at least 4, got {}", self.n));
        }
        if !(self.event_fraction > 0.0 && self.event_fraction < 1.0) {
            return bad(format!("event fraction must lie in (0, 1), got {}", self.event_fraction));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if let Some(k) = self.adjustment_sets.iter().find(|&&k| k > N_COVARIATES) {
            return bad(format!("adjustment size {k} exceeds {N_COVARIATES} covariates"));
        }
        Ok(())
    }

    pub fn trial_settings(&self) -> TrialSettings {
        TrialSettings {
            n: self.n,
            weights: scenario_weights(self.scenario).gamma,
            effect: self.treatment_effect,
            null_flip: self.null_flip,
            flip_mode: self.flip_mode,
            event_fraction: self.event_fraction,
            scale: self.scale,
        }
    }

    /// Sorted, deduplicated sizes including 0.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = self.adjustment_sets.clone();
        sizes.push(0);
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub adjustment_size: usize,
    pub method: Method,
    pub rejections: usize,
    /// Replicates that produced a test decision.
    pub evaluated: usize,
    /// Replicates whose fit or inference failed.
    pub failures: usize,
    pub rate: f64,
    /// `1.96·√(rate(1−rate)/evaluated)`.
    pub mc_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    pub fn row(&self, adjustment_size: usize) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.adjustment_size == adjustment_size)
    }
}

const MAX_FAILURE_RATE: f64 = 0.01;

pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult, StudyError> {
    run_study_with_progress(cfg, &|_, _| {})
}

/// Runs every replicate and aggregates one-sided rejection rates.
///
/// Replicate `r` draws from the `(seed, r)` streams only, and results are
/// aggregated in replicate order, so the output does not depend on the
/// thread count. `progress(done, total)` is called after each replicate.
pub fn run_study_with_progress(
    cfg: &StudyConfig,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<StudyResult, StudyError> {
    cfg.validate()?;
    let sizes = cfg.sizes();
    let settings = cfg.trial_settings();
    let done = AtomicUsize::new(0);

    let decisions: Vec<Vec<Option<bool>>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let out = replicate_decisions(cfg, &settings, &sizes, r as u64);
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, cfg.reps);
            out
        })
        .collect();

    let mut rows = Vec::with_capacity(sizes.len());
    for (col, &k) in sizes.iter().enumerate() {
        let failures = decisions.iter().filter(|d| d[col].is_none()).count();
        if failures as f64 > MAX_FAILURE_RATE * cfg.reps as f64 {
            return Err(StudyError::TooManyFailures {
                adjustment_size: k,
                failures,
                reps: cfg.reps,
            });
        }
        let rejections = decisions.iter().filter(|d| d[col] == Some(true)).count();
        let evaluated = cfg.reps - failures;
        let rate = if evaluated > 0 {
            rejections as f64 / evaluated as f64
        } else {
            0.0
        };
        rows.push(StudyRow {
            adjustment_size: k,
            method: if k == 0 { Method::Direct } else { Method::Adjusted },
            rejections,
            evaluated,
            failures,
            rate,
            mc_halfwidth: mc_halfwidth(rate, evaluated),
        });
    }
    Ok(StudyResult {
        config: cfg.clone(),
        rows,
    })
}

pub fn mc_halfwidth(rate: f64, reps: usize) -> f64 {
    if reps == 0 {
        return 0.0;
    }
    1.96 * (rate * (1.0 - rate) / reps as f64).sqrt()
}

fn replicate_decisions(
    cfg: &StudyConfig,
    settings: &TrialSettings,
    sizes: &[usize],
    replicate: u64,
) -> Vec<Option<bool>> {
    let ds = simulate_replicate(settings, cfg.seed, replicate);
    let tally = pairwise_tally(&ds);
    sizes
        .iter()
        .map(|&k| {
            let estimate = if k == 0 {
                MpiResult::unadjusted(&tally)
            } else {
                let subset = ds.covariate_prefix(k).ok()?;
                let (_, est) = adjusted_analysis(&subset, &tally, &TwoLevelRule, &cfg.pim).ok()?;
                MpiResult::adjusted(&est, &tally)
            };
            let inf = win_odds_inference(&estimate, cfg.alpha, Sided::One).ok()?;
            Some(inf.p_one_sided < cfg.alpha)
        })
        .collect()
}

/// Fractions of subjects with an observed event by a given time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncidencePoint {
    pub time: f64,
    pub composite: f64,
    pub fatal: f64,
    pub nonfatal: f64,
}

/// Raw cumulative incidence of the composite, fatal and nonfatal events on
/// `grid`. No censoring correction is applied.
pub fn emit_incidence_curve(ds: &Dataset, grid: &[f64]) -> Vec<IncidencePoint> {
    let n = ds.len() as f64;
    let mut composite = Vec::new();
    let mut fatal = Vec::new();
    let mut nonfatal = Vec::new();
    for r in ds.records() {
        let o = &r.outcome;
        if o.d1 {
            fatal.push(o.u1);
        }
        if o.d2 {
            nonfatal.push(o.u2);
        }
        if o.d2 {
            composite.push(o.u2);
        } else if o.d1 {
            composite.push(o.u1);
        }
    }
    for v in [&mut composite, &mut fatal, &mut nonfatal] {
        v.sort_by(f64::total_cmp);
    }
    let frac = |v: &[f64], t: f64| v.partition_point(|&x| x <= t) as f64 / n;
    grid.iter()
        .map(|&t| IncidencePoint {
            time: t,
            composite: frac(&composite, t),
            fatal: frac(&fatal, t),
            nonfatal: frac(&nonfatal, t),
        })
        .collect()
}

/// `points` evenly spaced times from 0 to the largest `u1`.
pub fn incidence_grid(ds: &Dataset, points: usize) -> Vec<f64> {
    let max = ds.records().iter().map(|r| r.outcome.u1).fold(0.0, f64::max);
    match points {
        0 => vec![],
        1 => vec![max],
        k => (0..k).map(|i| max * i as f64 / (k - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_weights_have_unit_norm() {
        for s in [Scenario::A, Scenario::B, Scenario::C] {
            let g = scenario_weights(s).gamma;
            assert_eq!(g.len(), 10);
            assert!((g.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scenario_weight_values() {
        let a = scenario_weights(Scenario::A).gamma;
        assert!((a[0] - 0.316_228).abs() < 1e-6);
        let b = scenario_weights(Scenario::B).gamma;
        assert!((b[0] - 1.0 / 3.85f64.sqrt()).abs() < 1e-12);
        assert!((b[0] - 0.509_647).abs() < 1e-6);
        let c = scenario_weights(Scenario::C).gamma;
        assert!(c[5..].iter().all(|&g| g == 0.0));
        assert!((c[0] - 0.962_094).abs() < 1e-6);
    }

    #[test]
    fn quantile_order_statistics() {
        assert_eq!(empirical_quantile(&[4.0, 2.0, 3.0, 1.0], 0.35).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[4.0, 2.0, 3.0, 1.0], 0.999_999).unwrap(), 4.0);
        assert_eq!(empirical_quantile(&[4.0, 2.0, 3.0, 1.0], 0.25).unwrap(), 1.0);
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(empirical_quantile(&twenty, 0.35).unwrap(), 7.0);
        assert!(matches!(empirical_quantile(&[], 0.5), Err(StudyError::EmptySample)));
        assert!(matches!(
            empirical_quantile(&[1.0], 1.0),
            Err(StudyError::InvalidQuantile(_))
        ));
    }

    #[test]
    fn observation_rule() {
        let o = observe(50.0, 20.0, 100.0);
        assert_eq!((o.u1, o.d1, o.u2, o.d2), (50.0, true, 20.0, true));
        let o = observe(50.0, 80.0, 100.0);
        assert_eq!((o.u1, o.d1, o.u2, o.d2), (50.0, true, 50.0, false));
        let o = observe(150.0, 120.0, 100.0);
        assert_eq!((o.u1, o.d1, o.u2, o.d2), (100.0, false, 100.0, false));
    }

    #[test]
    fn tiny_trials_keep_both_arms() {
        let s = TrialSettings::new(4, Scenario::A);
        for seed in 0..20 {
            let ds = simulate_trial(&s, seed);
            assert_eq!(ds.n_control(), 2);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = StudyConfig::new(100, 1, Scenario::A);
        assert!(cfg.validate().is_ok());
        cfg.event_fraction = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = StudyConfig::new(100, 0, Scenario::A);
        assert!(cfg.validate().is_err());
        cfg.reps = 1;
        cfg.adjustment_sets = vec![11];
        assert!(cfg.validate().is_err());
        cfg.adjustment_sets = vec![3, 1, 3];
        assert_eq!(cfg.sizes(), vec![0, 1, 3]);
    }
}
