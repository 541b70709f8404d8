//! Building blocks for the O(n²) pair sums.
//!
//! Every pair sum is organised by rows: row `i` accumulates its own
//! contributions over all `j`, rows are evaluated in parallel and collected
//! in index order, and the final reduction runs sequentially. Results are
//! therefore bit-identical for any thread count.

use rayon::prelude::*;

use crate::data::{Dataset, Outcome};
use crate::rule::WinRule;

const MIN_ROWS_PER_TASK: usize = 8;

/// Evaluates `f` for every row index and returns the results in order.
pub(crate) fn par_rows<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .with_min_len(MIN_ROWS_PER_TASK)
        .map(f)
        .collect()
}

/// `expit(offset + e[j] − e[i])` for all pairs without a per-pair `exp`.
///
/// With `q = exp(e − c)` the probability is `k·q_j / (k·q_j + q_i)` where
/// `k = exp(offset)`. Falls back to direct evaluation when the spread of `e`
/// would overflow.
pub(crate) struct PairLogit {
    mode: Mode,
}

enum Mode {
    Product { q: Vec<f64>, kq: Vec<f64> },
    Direct { e: Vec<f64>, offset: f64 },
}

const MAX_EXPONENT: f64 = 300.0;

impl PairLogit {
    pub fn new(e: &[f64], offset: f64) -> PairLogit {
        let (lo, hi) = e
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let mid = if e.is_empty() { 0.0 } else { 0.5 * (lo + hi) };
        let spread = if e.is_empty() { 0.0 } else { 0.5 * (hi - lo) };
        if spread + offset.abs() <= MAX_EXPONENT {
            let k = offset.exp();
            let q: Vec<f64> = e.iter().map(|&v| (v - mid).exp()).collect();
            let kq = q.iter().map(|&v| k * v).collect();
            PairLogit {
                mode: Mode::Product { q, kq },
            }
        } else {
            PairLogit {
                mode: Mode::Direct {
                    e: e.to_vec(),
                    offset,
                },
            }
        }
    }

    /// `out[k] = prob(i, start + k)`.
    pub fn fill_row(&self, i: usize, start: usize, out: &mut [f64]) {
        let end = start + out.len();
        match &self.mode {
            Mode::Product { q, kq } => {
                let qi = q[i];
                for (o, &a) in out.iter_mut().zip(&kq[start..end]) {
                    *o = a / (a + qi);
                }
            }
            Mode::Direct { e, offset } => {
                let ei = e[i];
                for (o, &ej) in out.iter_mut().zip(&e[start..end]) {
                    *o = expit(offset + ej - ei);
                }
            }
        }
    }

    #[inline(always)]
    pub fn prob(&self, i: usize, j: usize) -> f64 {
        match &self.mode {
            Mode::Product { q, kq } => {
                let a = kq[j];
                a / (a + q[i])
            }
            Mode::Direct { e, offset } => expit(offset + e[j] - e[i]),
        }
    }
}

const BLOCK: usize = 128;

/// Row `i` of the logistic pair sums over `j ≠ i`: returns `Σ μ_ij` and
/// `Σ w_ij` with `w = μ(1 − μ)`, and writes `v[a] = Σ w_ij z_ja` for the
/// column-major `n × v.len()` matrix `zt`.
pub(crate) fn logit_row(logit: &PairLogit, i: usize, n: usize, zt: &[f64], v: &mut [f64]) -> (f64, f64) {
    let mut mu = [0.0; BLOCK];
    let mut w = [0.0; BLOCK];
    let mut mu_acc = [0.0; 4];
    let mut w_acc = [0.0; 4];
    v.fill(0.0);
    for start in (0..n).step_by(BLOCK) {
        let len = BLOCK.min(n - start);
        let (mu, w) = (&mut mu[..len], &mut w[..len]);
        logit.fill_row(i, start, mu);
        for (w, &m) in w.iter_mut().zip(mu.iter()) {
            *w = m * (1.0 - m);
        }
        if (start..start + len).contains(&i) {
            mu[i - start] = 0.0;
            w[i - start] = 0.0;
        }
        lane_sum(&mut mu_acc, mu);
        lane_sum(&mut w_acc, w);
        for (a, va) in v.iter_mut().enumerate() {
            *va += dot(w, &zt[a * n + start..a * n + start + len]);
        }
    }
    (reduce(mu_acc), reduce(w_acc))
}

fn lane_sum(acc: &mut [f64; 4], x: &[f64]) {
    let chunks = x.chunks_exact(4);
    let tail = chunks.remainder();
    for c in chunks {
        for k in 0..4 {
            acc[k] += c[k];
        }
    }
    for (k, &t) in tail.iter().enumerate() {
        acc[k] += t;
    }
}

fn reduce(acc: [f64; 4]) -> f64 {
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Dot product with a fixed four-lane summation order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    reduce(acc) + tail
}

/// `Σ_{j≠i} s_ij` per row, from exact half-point counts.
pub(crate) fn score_row_sums<R: WinRule>(outcomes: &[Outcome], rule: &R) -> Vec<f64> {
    par_rows(outcomes.len(), |i| {
        let oi = &outcomes[i];
        let half = |oj: &Outcome| rule.half_points(oi, oj) as u64;
        let total: u64 = outcomes[..i].iter().map(half).sum::<u64>()
            + outcomes[i + 1..].iter().map(half).sum::<u64>();
        total as f64 / 2.0
    })
}

#[inline]
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let z = t.exp();
        z / (1.0 + z)
    }
}

/// Column-oriented copy of what the pair kernels read.
pub(crate) struct Packed {
    pub outcomes: Vec<Outcome>,
    pub treated: Vec<bool>,
    pub control_idx: Vec<usize>,
    pub treated_idx: Vec<usize>,
}

impl Packed {
    pub fn new(ds: &Dataset) -> Packed {
        let (control_idx, treated_idx) = ds.arm_indices();
        Packed {
            outcomes: ds.records().iter().map(|r| r.outcome).collect(),
            treated: ds.records().iter().map(|r| r.arm.is_treated()).collect(),
            control_idx,
            treated_idx,
        }
    }
}

/// `τ_X·(x_i − x̄)` for every subject. Centering leaves all pair
/// differences unchanged.
pub(crate) fn covariate_scores(ds: &Dataset, tau_x: &[f64]) -> Vec<f64> {
    let n = ds.len() as f64;
    let p = tau_x.len();
    let mut mean = vec![0.0; p];
    for r in ds.records() {
        for (m, x) in mean.iter_mut().zip(&r.covariates) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    ds.records()
        .iter()
        .map(|r| {
            r.covariates
                .iter()
                .zip(&mean)
                .zip(tau_x)
                .map(|((x, m), t)| (x - m) * t)
                .sum()
        })
        .collect()
}
