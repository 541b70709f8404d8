//! Estimators of the marginal probabilistic index `ν` and win-odds inference.
//!
//! * direct: wins plus half the ties over `N0·N1`;
//! * standardized: the fitted CPI averaged over all ordered covariate pairs;
//! * augmented: the direct estimate plus a mean-zero correction
//!   `Σ_{i≠j} (1/(n(n−1)) − (1−A_i)A_j/(N0N1)) · H(X_i, X_j)`.
//!
//! With `H` the fitted logit CPI and coefficients solving the PIM score
//! equations, the standardized and augmented estimates coincide.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, FitError, InferenceError};
use crate::kernel::{covariate_scores, par_rows, PairLogit, Packed};
use crate::pim::{fit_pim_with, PimFit, PimOptions};
use crate::rng::{self, Purpose};
use crate::rule::{pairwise_tally_with, TallyCounts, TwoLevelRule, WinRule, WinTally};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Adjusted,
}

/// An MPI estimate with its variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpiResult {
    pub nu_hat: f64,
    pub variance: f64,
    pub method: Method,
    pub n: usize,
    pub n_control: usize,
    pub n_treated: usize,
    /// Tally counts behind a direct estimate.
    pub counts: Option<TallyCounts>,
}

impl MpiResult {
    /// Direct estimate with the two-sample projection variance.
    pub fn unadjusted(t: &WinTally) -> MpiResult {
        MpiResult {
            nu_hat: direct_mpi(t),
            variance: unadjusted_variance(t).value,
            method: Method::Direct,
            n: t.n_control + t.n_treated,
            n_control: t.n_control,
            n_treated: t.n_treated,
            counts: Some(t.counts),
        }
    }

    pub fn adjusted(est: &AdjustedEstimates, t: &WinTally) -> MpiResult {
        MpiResult {
            nu_hat: est.nu_aug,
            variance: est.variance,
            method: Method::Adjusted,
            n: t.n_control + t.n_treated,
            n_control: t.n_control,
            n_treated: t.n_treated,
            counts: None,
        }
    }
}

/// `(wins + ½·ties) / (N0·N1)`.
pub fn direct_mpi(t: &WinTally) -> f64 {
    let c = &t.counts;
    (2 * c.wins + c.ties) as f64 / (2 * t.comparisons()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    /// Every win fraction is constant; the estimate is 0.
    pub degenerate: bool,
}

/// Two-sample projection (Hájek) variance of the direct estimator:
/// `S₁²/N1 + S₀²/N0` with `S₁²`, `S₀²` the sample variances of the treated
/// and control win fractions.
pub fn unadjusted_variance(t: &WinTally) -> VarianceEstimate {
    let s1 = sample_variance(&t.treated_winfrac);
    let s0 = sample_variance(&t.control_winfrac);
    let value = s1 / t.n_treated as f64 + s0 / t.n_control as f64;
    VarianceEstimate {
        value,
        degenerate: value == 0.0,
    }
}

pub(crate) fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// `(1/(n(n−1))) Σ_{i≠j} expit(τ_A + τ_Xᵀ(X_j − X_i))`.
pub fn standardized_mpi(fit: &PimFit, ds: &Dataset) -> f64 {
    let n = ds.len();
    let logit = PairLogit::new(&covariate_scores(ds, &fit.tau_x), fit.tau_a);
    let rows = par_rows(n, |i| {
        (0..i).map(|j| logit.prob(i, j)).sum::<f64>()
            + (i + 1..n).map(|j| logit.prob(i, j)).sum::<f64>()
    });
    rows.iter().sum::<f64>() / (n * (n - 1)) as f64
}

pub fn augmented_mpi(fit: &PimFit, t: &WinTally, ds: &Dataset) -> f64 {
    adjusted_estimates(fit, t, ds).nu_aug
}

/// Augmented estimator with an arbitrary fixed function `h(x_i, x_j)` in
/// place of the fitted CPI.
pub fn augmented_with<H>(ds: &Dataset, t: &WinTally, h: H) -> f64
where
    H: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    let n = ds.len();
    let records = ds.records();
    let rows = par_rows(n, |i| {
        let xi = &records[i].covariates;
        let mut all = 0.0;
        let mut cross = 0.0;
        for (j, rj) in records.iter().enumerate() {
            if j == i {
                continue;
            }
            let v = h(xi, &rj.covariates);
            all += v;
            if !records[i].arm.is_treated() && rj.arm.is_treated() {
                cross += v;
            }
        }
        (all, cross)
    });
    let all: f64 = rows.iter().map(|r| r.0).sum();
    let cross: f64 = rows.iter().map(|r| r.1).sum();
    direct_mpi(t) + all / (n * (n - 1)) as f64 - cross / t.comparisons() as f64
}

pub fn adjusted_variance(fit: &PimFit, t: &WinTally, ds: &Dataset) -> f64 {
    adjusted_estimates(fit, t, ds).variance
}

/// Everything the covariate-adjusted analysis needs from one pass over the
/// pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustedEstimates {
    pub nu_stand: f64,
    pub nu_aug: f64,
    pub variance: f64,
}

pub fn adjusted_estimates(fit: &PimFit, t: &WinTally, ds: &Dataset) -> AdjustedEstimates {
    adjusted_estimates_with(fit, t, ds, &TwoLevelRule)
}

/// Point estimates plus the influence-function variance of `ν̂_aug`, treating
/// `Ĥ(X_i, X_j) = expit(τ̂_A + τ̂_Xᵀ(X_j − X_i))` as fixed.
///
/// With `K_ij = s_ij − Ĥ(X_i, X_j)` over control `i` / treated `j` pairs and
/// `h(l)` the average of `½(Ĥ(X_l, X_m) + Ĥ(X_m, X_l))` over `m ≠ l`, each
/// subject contributes
///
/// ```text
/// φ_l = A_l (n/N1)(ḡ1(l) − K̄) + (1 − A_l)(n/N0)(ḡ0(l) − K̄) + 2(h(l) − h̄)
/// ```
///
/// and `Var(ν̂) ≈ Σ φ_l² / n²`.
pub fn adjusted_estimates_with<R: WinRule>(
    fit: &PimFit,
    t: &WinTally,
    ds: &Dataset,
    rule: &R,
) -> AdjustedEstimates {
    let n = ds.len();
    debug_assert_eq!(t.n_control + t.n_treated, n);
    let packed = Packed::new(ds);
    let logit = PairLogit::new(&covariate_scores(ds, &fit.tau_x), fit.tau_a);
    let n0 = packed.control_idx.len();
    let n1 = packed.treated_idx.len();

    struct Row {
        out: f64,
        inn: f64,
        k: f64,
        cross_h: f64,
    }

    let rows: Vec<Row> = par_rows(n, |l| {
        let ol = &packed.outcomes[l];
        let treated = packed.treated[l];
        let (same, other) = if treated {
            (&packed.treated_idx, &packed.control_idx)
        } else {
            (&packed.control_idx, &packed.treated_idx)
        };
        let mut out = 0.0;
        let mut inn = 0.0;
        let mut k = 0.0;
        let mut cross_h = 0.0;
        for &m in other {
            let h_lm = logit.prob(l, m);
            let h_ml = logit.prob(m, l);
            out += h_lm;
            inn += h_ml;
            if treated {
                k += 0.5 * rule.half_points(&packed.outcomes[m], ol) as f64 - h_ml;
            } else {
                k += 0.5 * rule.half_points(ol, &packed.outcomes[m]) as f64 - h_lm;
                cross_h += h_lm;
            }
        }
        for &m in same {
            if m != l {
                out += logit.prob(l, m);
                inn += logit.prob(m, l);
            }
        }
        Row {
            out,
            inn,
            k,
            cross_h,
        }
    });

    let pairs = (n * (n - 1)) as f64;
    let comparisons = (n0 * n1) as f64;
    let all: f64 = rows.iter().map(|r| r.out).sum();
    let cross: f64 = rows.iter().map(|r| r.cross_h).sum();
    let nu_stand = all / pairs;
    let nu_aug = direct_mpi(t) + all / pairs - cross / comparisons;

    let k_bar = packed.treated_idx.iter().map(|&l| rows[l].k).sum::<f64>() / comparisons;
    let h: Vec<f64> = rows
        .iter()
        .map(|r| (r.out + r.inn) / (2.0 * (n - 1) as f64))
        .collect();
    let h_bar = h.iter().sum::<f64>() / n as f64;
    let nf = n as f64;
    let sum_sq: f64 = (0..n)
        .map(|l| {
            let proj = if packed.treated[l] {
                nf / n1 as f64 * (rows[l].k / n0 as f64 - k_bar)
            } else {
                nf / n0 as f64 * (rows[l].k / n1 as f64 - k_bar)
            };
            let phi = proj + 2.0 * (h[l] - h_bar);
            phi * phi
        })
        .sum();

    AdjustedEstimates {
        nu_stand,
        nu_aug,
        variance: sum_sq / (nf * nf),
    }
}

/// Draws bootstrap index sets.
pub trait Resampler: Sync {
    /// Indices for `replicate`; must draw `control.len()` indices from
    /// `control` and `treated.len()` from `treated`.
    fn draw(&self, replicate: usize, control: &[usize], treated: &[usize]) -> Vec<usize>;
}

/// Resamples subjects with replacement within each arm from seeded streams.
#[derive(Debug, Clone, Copy)]
pub struct StratifiedResampler {
    pub seed: u64,
}

impl Resampler for StratifiedResampler {
    fn draw(&self, replicate: usize, control: &[usize], treated: &[usize]) -> Vec<usize> {
        let mut rng = rng::stream(self.seed, replicate as u64, Purpose::Bootstrap);
        let mut out = Vec::with_capacity(control.len() + treated.len());
        for arm in [control, treated] {
            out.extend((0..arm.len()).map(|_| arm[rng.random_range(0..arm.len())]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapVariance {
    pub replicates: usize,
    /// Replicates whose PIM fit failed; excluded from `augmented`.
    pub failed: usize,
    /// Bootstrap variance of the direct estimate.
    pub direct: f64,
    /// Bootstrap variance of the augmented estimate, refitting the PIM per
    /// replicate.
    pub augmented: f64,
}

pub fn bootstrap_variance(ds: &Dataset, replicates: usize, seed: u64) -> Result<BootstrapVariance, Error> {
    if replicates < 100 {
        return Err(Error::InvalidArgument(format!(
            "at least 100 bootstrap replicates required, got {replicates}"
        )));
    }
    bootstrap_variance_with(
        ds,
        replicates,
        &StratifiedResampler { seed },
        &TwoLevelRule,
        &PimOptions::default(),
    )
}

pub fn bootstrap_variance_with<S: Resampler, R: WinRule>(
    ds: &Dataset,
    replicates: usize,
    resampler: &S,
    rule: &R,
    pim: &PimOptions,
) -> Result<BootstrapVariance, Error> {
    if replicates < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 bootstrap replicates required".into(),
        ));
    }
    let (control, treated) = ds.arm_indices();
    let draws: Vec<Result<(f64, Result<f64, FitError>), Error>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let resampled = ds.resample(&resampler.draw(b, &control, &treated))?;
            let tally = pairwise_tally_with(&resampled, rule);
            let aug = fit_pim_with(&resampled, rule, pim)
                .map(|fit| adjusted_estimates_with(&fit, &tally, &resampled, rule).nu_aug);
            Ok((direct_mpi(&tally), aug))
        })
        .collect();

    let mut direct = Vec::with_capacity(replicates);
    let mut augmented = Vec::with_capacity(replicates);
    let mut first_failure = None;
    for d in draws {
        let (dir, aug) = d?;
        direct.push(dir);
        match aug {
            Ok(v) => augmented.push(v),
            Err(e) => {
                first_failure.get_or_insert(e);
            }
        }
    }
    if augmented.len() < 2 {
        return Err(first_failure
            .unwrap_or(FitError::NotConverged {
                iterations: 0,
                score_norm: f64::NAN,
            })
            .into());
    }
    Ok(BootstrapVariance {
        replicates,
        failed: replicates - augmented.len(),
        direct: sample_variance(&direct),
        augmented: sample_variance(&augmented),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sided {
    /// `H0: θ ≤ 1` against `θ > 1`.
    One,
    #[default]
    Two,
}

/// Wald inference on the `ν` scale, carried over to the win odds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinOddsResult {
    pub theta_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub nu_ci_low: f64,
    pub nu_ci_high: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub p_one_sided: f64,
    pub sided: Sided,
    /// The p-value selected by `sided`.
    pub p_value: f64,
    pub log_theta_variance: f64,
    pub alpha: f64,
    /// Proportion in favour `(wins − losses)/(N0·N1)`, direct estimates only.
    pub delta_hat: Option<f64>,
    /// A `ν`-scale CI endpoint fell outside (0, 1) and was pulled inside.
    pub ci_clamped: bool,
}

const CI_CLAMP: f64 = 1e-12;

pub fn win_odds_inference(
    m: &MpiResult,
    alpha: f64,
    sided: Sided,
) -> Result<WinOddsResult, InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidAlpha(alpha));
    }
    let nu = m.nu_hat;
    if !(nu > 0.0 && nu < 1.0) {
        return Err(InferenceError::BoundaryEstimate(nu));
    }
    if !(m.variance > 0.0 && m.variance.is_finite()) {
        return Err(InferenceError::DegenerateVariance(m.variance));
    }
    let normal = Normal::standard();
    let se = m.variance.sqrt();
    let z = (nu - 0.5) / se;
    let p_one_sided = normal.sf(z);
    let p_two_sided = (2.0 * normal.sf(z.abs())).min(1.0);

    let q = normal.inverse_cdf(1.0 - alpha / 2.0);
    let mut lo = nu - q * se;
    let mut hi = nu + q * se;
    let mut ci_clamped = false;
    if lo <= 0.0 {
        lo = CI_CLAMP;
        ci_clamped = true;
    }
    if hi >= 1.0 {
        hi = 1.0 - CI_CLAMP;
        ci_clamped = true;
    }

    let (theta_hat, delta_hat) = match &m.counts {
        Some(c) => {
            let total = c.total() as f64;
            (
                (2 * c.wins + c.ties) as f64 / (2 * c.losses + c.ties) as f64,
                Some((c.wins as f64 - c.losses as f64) / total),
            )
        }
        None => (odds(nu), None),
    };

    Ok(WinOddsResult {
        theta_hat,
        ci_low: odds(lo),
        ci_high: odds(hi),
        nu_ci_low: lo,
        nu_ci_high: hi,
        z,
        p_two_sided,
        p_one_sided,
        sided,
        p_value: match sided {
            Sided::One => p_one_sided,
            Sided::Two => p_two_sided,
        },
        log_theta_variance: m.variance / (nu * (1.0 - nu)).powi(2),
        alpha,
        delta_hat,
        ci_clamped,
    })
}

/// `ν / (1 − ν)`.
pub fn odds(nu: f64) -> f64 {
    nu / (1.0 - nu)
}
