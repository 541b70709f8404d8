//! Probabilistic index model with logit link, fitted on pair differences.
//!
//! The conditional probabilistic index is modelled as
//! `P(Y_i ⪯ Y_j | A, X) = expit(τ_A (A_j − A_i) + τ_Xᵀ (X_j − X_i))` and the
//! coefficients solve the quasi-binomial score equations over all ordered
//! pairs `i ≠ j`:
//!
//! ```text
//! U(τ) = Σ_{i≠j} (z_j − z_i) · (I(Y_i ⪯ Y_j) − expit(τᵀ(z_j − z_i))) = 0,   z = (A, X)
//! ```
//!
//! Solved by Newton's method (IRLS) from `τ = 0`. Both the response and the
//! design row change sign under `i ↔ j`, which collapses the pair sums into
//! per-subject row sums:
//!
//! ```text
//! U = −2 Σ_i z_i r_i,           r_i = Σ_{j≠i} (s_ij − μ_ij)
//! J = 2 Σ_i w_i z_i z_iᵀ − Σ_i (z_i v_iᵀ + v_i z_iᵀ),
//!                               w_i = Σ_{j≠i} μ_ij(1−μ_ij),  v_i = Σ_{j≠i} μ_ij(1−μ_ij) z_j
//! ```
//!
//! so one pass over the pairs costs O(n²·p) time and O(n·p) memory; the
//! pseudo-observations are never materialised.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, Dataset, Outcome};
use crate::error::FitError;
use crate::kernel::{expit, logit_row, par_rows, score_row_sums, PairLogit};
use crate::rule::{TwoLevelRule, WinRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PimOptions {
    pub max_iterations: usize,
    /// Convergence when `max |U| / (n(n−1))` falls to this value.
    pub score_tol: f64,
    /// ...or when the Newton step is this small relative to the coefficients.
    pub step_tol: f64,
    /// Separation guard on `|(τ_A, sd(X)·τ_X)|`.
    pub max_coef_norm: f64,
}

impl Default for PimOptions {
    fn default() -> Self {
        PimOptions {
            max_iterations: 100,
            score_tol: 1e-10,
            step_tol: 1e-8,
            max_coef_norm: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PimFit {
    pub tau_a: f64,
    pub tau_x: Vec<f64>,
    pub iterations: usize,
    /// Final `max |U| / (n(n−1))`.
    pub score_norm: f64,
    pub converged: bool,
}

impl PimFit {
    pub fn p(&self) -> usize {
        self.tau_x.len()
    }
}

const COLLINEAR_TOL: f64 = 1e-10;
const MAX_HALVINGS: usize = 30;
const SETTLED_STEP: f64 = 1e-3;

pub fn fit_pim(ds: &Dataset) -> Result<PimFit, FitError> {
    fit_pim_with(ds, &TwoLevelRule, &PimOptions::default())
}

pub fn fit_pim_with<R: WinRule>(
    ds: &Dataset,
    rule: &R,
    opts: &PimOptions,
) -> Result<PimFit, FitError> {
    let design = Design::new(ds)?;
    let outcomes: Vec<Outcome> = ds.records().iter().map(|r| r.outcome).collect();
    let row_scores = score_row_sums(&outcomes, rule);
    let n = ds.len() as f64;
    let pairs = n * (n - 1.0);
    let m = design.m;

    let eval = |beta: &[f64]| -> Pass { design.pass(&row_scores, beta) };
    // Score in original units is U_std * sd.
    let score_norm = |p: &Pass| -> f64 {
        p.score
            .iter()
            .zip(&design.scale)
            .map(|(u, s)| (u * s).abs())
            .fold(0.0, f64::max)
            / pairs
    };
    let merit = |p: &Pass| -> f64 { p.score.iter().map(|u| u * u).sum() };

    let mut beta = vec![0.0; m];
    let mut current = eval(&beta);
    let mut norm = score_norm(&current);
    let mut iterations = 0;
    let mut last_move: f64 = 0.0;

    loop {
        // Under separation the score also shrinks towards zero while the
        // coefficients keep moving, so a small score alone is not enough.
        let size = beta.iter().map(|b| b.abs()).fold(1.0, f64::max);
        if norm <= opts.score_tol && last_move <= SETTLED_STEP * size {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(FitError::NotConverged {
                iterations,
                score_norm: norm,
            });
        }
        let step = newton_step(&current, &design.names)?;

        let base_merit = merit(&current);
        let mut t = 1.0;
        let mut halvings = 0;
        let (candidate, next) = loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, d)| b + t * d).collect();
            let next = eval(&cand);
            if merit(&next) <= base_merit || halvings >= MAX_HALVINGS {
                break (cand, next);
            }
            t *= 0.5;
            halvings += 1;
        };
        iterations += 1;

        let moved = step.iter().map(|d| (t * d).abs()).fold(0.0, f64::max);
        last_move = moved;
        beta = candidate;
        current = next;
        norm = score_norm(&current);

        let coef_norm = design.logit_scale_norm(&beta);
        if !coef_norm.is_finite() || coef_norm > opts.max_coef_norm {
            return Err(FitError::Separation {
                iterations,
                norm: coef_norm,
                limit: opts.max_coef_norm,
            });
        }
        let size = beta.iter().map(|b| b.abs()).fold(1.0, f64::max);
        if halvings == 0 && moved <= opts.step_tol * size {
            break;
        }
    }

    // Final Newton correction from the last evaluated pass. Near the root it
    // roughly squares the remaining error at no extra pass over the pairs.
    if let Ok(step) = newton_step(&current, &design.names) {
        let size = beta.iter().map(|b| b.abs()).fold(1.0, f64::max);
        if step.iter().all(|d| d.abs() <= SETTLED_STEP * size) {
            beta.iter_mut().zip(&step).for_each(|(b, d)| *b += d);
        }
    }

    let coef: Vec<f64> = beta.iter().zip(&design.scale).map(|(b, s)| b / s).collect();
    Ok(PimFit {
        tau_a: coef[0],
        tau_x: coef[1..].to_vec(),
        iterations,
        score_norm: norm,
        converged: true,
    })
}

fn newton_step(pass: &Pass, names: &[String]) -> Result<Vec<f64>, FitError> {
    if let Some(columns) = dependent_columns(&pass.info, names, COLLINEAR_TOL) {
        return Err(FitError::Singular { columns });
    }
    let chol = pass.info.clone().cholesky().ok_or_else(|| FitError::Singular {
        columns: names.to_vec(),
    })?;
    Ok(chol.solve(&pass.score).iter().copied().collect())
}

/// Fitted CPI `expit(τ_A(a_j − a_i) + τ_Xᵀ(x_j − x_i))`.
pub fn cpi_predict(
    fit: &PimFit,
    x_i: &[f64],
    x_j: &[f64],
    a_i: Arm,
    a_j: Arm,
) -> Result<f64, FitError> {
    for x in [x_i, x_j] {
        if x.len() != fit.p() {
            return Err(FitError::DimensionMismatch {
                expected: fit.p(),
                found: x.len(),
            });
        }
    }
    let lin: f64 = fit.tau_a * (a_j.indicator() - a_i.indicator())
        + fit
            .tau_x
            .iter()
            .zip(x_j.iter().zip(x_i))
            .map(|(t, (xj, xi))| t * (xj - xi))
            .sum::<f64>();
    Ok(expit(lin))
}

/// Left-hand side of the score equations, evaluated literally over all
/// ordered pairs in original units. Used to audit fits.
pub fn estimating_equations<R: WinRule>(
    ds: &Dataset,
    rule: &R,
    tau_a: f64,
    tau_x: &[f64],
) -> Vec<f64> {
    let records = ds.records();
    let m = tau_x.len() + 1;
    let rows = par_rows(ds.len(), |i| {
        let ri = &records[i];
        let mut acc = vec![0.0; m];
        let mut d = vec![0.0; m];
        for (j, rj) in records.iter().enumerate() {
            if j == i {
                continue;
            }
            d[0] = rj.arm.indicator() - ri.arm.indicator();
            for k in 1..m {
                d[k] = rj.covariates[k - 1] - ri.covariates[k - 1];
            }
            let lin = tau_a * d[0] + (1..m).map(|k| tau_x[k - 1] * d[k]).sum::<f64>();
            let resid = rule.compare(&ri.outcome, &rj.outcome).score() - expit(lin);
            for k in 0..m {
                acc[k] += d[k] * resid;
            }
        }
        acc
    });
    let mut total = vec![0.0; m];
    for row in rows {
        for k in 0..m {
            total[k] += row[k];
        }
    }
    total
}

/// Standardised design `[A, X]`: centered, unit variance, stored both
/// row-major (`z`) and column-major (`zt`).
struct Design {
    m: usize,
    z: Vec<f64>,
    zt: Vec<f64>,
    scale: Vec<f64>,
    names: Vec<String>,
}

struct Pass {
    score: DVector<f64>,
    info: DMatrix<f64>,
}

impl Design {
    fn new(ds: &Dataset) -> Result<Design, FitError> {
        let n = ds.len();
        let m = ds.p() + 1;
        let mut names = Vec::with_capacity(m);
        names.push("arm".to_string());
        names.extend(ds.covariate_names().iter().cloned());

        let mut z = Vec::with_capacity(n * m);
        for r in ds.records() {
            z.push(r.arm.indicator());
            z.extend_from_slice(&r.covariates);
        }
        let mut scale = vec![0.0; m];
        for k in 0..m {
            let mean = (0..n).map(|i| z[i * m + k]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (z[i * m + k] - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1.0)) {
                return Err(FitError::Singular {
                    columns: vec![names[k].clone()],
                });
            }
            for i in 0..n {
                z[i * m + k] = (z[i * m + k] - mean) / sd;
            }
            scale[k] = sd;
        }

        let gram = DMatrix::from_fn(m, m, |a, b| {
            (0..n).map(|i| z[i * m + a] * z[i * m + b]).sum::<f64>() / n as f64
        });
        if let Some(columns) = dependent_columns(&gram, &names, COLLINEAR_TOL) {
            return Err(FitError::Singular { columns });
        }
        let zt = (0..m)
            .flat_map(|k| (0..n).map(move |i| i * m + k))
            .map(|idx| z[idx])
            .collect();
        Ok(Design {
            m,
            z,
            zt,
            scale,
            names,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.m..(i + 1) * self.m]
    }

    fn logit_scale_norm(&self, beta: &[f64]) -> f64 {
        // arm coefficient per unit of A, covariates per standard deviation
        let arm = beta[0] / self.scale[0];
        (arm * arm + beta[1..].iter().map(|b| b * b).sum::<f64>()).sqrt()
    }

    fn pass(&self, row_scores: &[f64], beta: &[f64]) -> Pass {
        let n = row_scores.len();
        let m = self.m;
        let e: Vec<f64> = (0..n)
            .map(|i| self.row(i).iter().zip(beta).map(|(z, b)| z * b).sum())
            .collect();
        let logit = PairLogit::new(&e, 0.0);

        let rows = par_rows(n, |i| {
            let mut v = vec![0.0; m];
            let (mu, weight) = logit_row(&logit, i, n, &self.zt, &mut v);
            (row_scores[i] - mu, weight, v)
        });

        let mut score = DVector::zeros(m);
        let mut info = DMatrix::zeros(m, m);
        for (i, (resid, weight, v)) in rows.iter().enumerate() {
            let z = self.row(i);
            for a in 0..m {
                score[a] -= 2.0 * z[a] * resid;
                for b in 0..m {
                    info[(a, b)] += 2.0 * weight * z[a] * z[b] - z[a] * v[b] - v[a] * z[b];
                }
            }
        }
        Pass { score, info }
    }
}

/// Finds a column whose residual variance after projecting on the earlier
/// columns is (relatively) below `tol`, and names it together with the
/// earlier columns it depends on.
fn dependent_columns(gram: &DMatrix<f64>, names: &[String], tol: f64) -> Option<Vec<String>> {
    let m = gram.nrows();
    let diag: Vec<f64> = (0..m).map(|k| gram[(k, k)]).collect();
    if let Some(k) = diag.iter().position(|d| !(*d > 0.0)) {
        return Some(vec![names[k].clone()]);
    }
    let corr = DMatrix::from_fn(m, m, |a, b| gram[(a, b)] / (diag[a] * diag[b]).sqrt());
    for k in 1..m {
        let lead = corr.view((0, 0), (k, k)).into_owned();
        let rhs = corr.view((0, k), (k, 1)).into_owned();
        let coef = match lead.cholesky() {
            Some(c) => c.solve(&rhs),
            None => return Some(names[..k].to_vec()),
        };
        let explained: f64 = (0..k).map(|a| coef[a] * rhs[a]).sum();
        if corr[(k, k)] - explained < tol {
            let mut cols: Vec<String> = (0..k)
                .filter(|&a| coef[a].abs() > 1e-6)
                .map(|a| names[a].clone())
                .collect();
            cols.push(names[k].clone());
            return Some(cols);
        }
    }
    None
}
