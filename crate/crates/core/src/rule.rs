//! Pairwise win/loss/tie comparison and the cross-arm tally.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Outcome, SubjectRecord};

/// Result of comparing two subjects, always read as "does the second
/// subject beat the first".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    Win,
    Loss,
    Tie,
}

impl Comparison {
    /// `I(first ⪯ second)`: 1 for a win, ½ for a tie, 0 for a loss.
    pub fn score(self) -> f64 {
        self.half_points() as f64 * 0.5
    }

    /// Twice the score, as an integer.
    pub fn half_points(self) -> u32 {
        match self {
            Comparison::Win => 2,
            Comparison::Tie => 1,
            Comparison::Loss => 0,
        }
    }

    /// The same comparison seen from the other subject.
    pub fn reversed(self) -> Comparison {
        match self {
            Comparison::Win => Comparison::Loss,
            Comparison::Loss => Comparison::Win,
            Comparison::Tie => Comparison::Tie,
        }
    }
}

/// A total, antisymmetric three-way comparison of outcomes.
///
/// Implementations must satisfy `compare(a, b) == compare(b, a).reversed()`.
/// Transitivity is not required.
pub trait WinRule: Sync {
    fn compare(&self, first: &Outcome, second: &Outcome) -> Comparison;

    /// `compare(first, second).half_points()`.
    #[inline]
    fn half_points(&self, first: &Outcome, second: &Outcome) -> u32 {
        self.compare(first, second).half_points()
    }
}

/// Fatal events first, then first nonfatal events; an event only decides a
/// pair when it happened while the other subject was still observed and
/// event-free on that level. Equal times never decide.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoLevelRule;

impl WinRule for TwoLevelRule {
    #[inline]
    fn compare(&self, a: &Outcome, b: &Outcome) -> Comparison {
        if a.d1 && a.u1 < b.u1 {
            return Comparison::Win;
        }
        if b.d1 && b.u1 < a.u1 {
            return Comparison::Loss;
        }
        if a.d2 && a.u2 < b.u2 {
            return Comparison::Win;
        }
        if b.d2 && b.u2 < a.u2 {
            return Comparison::Loss;
        }
        Comparison::Tie
    }

    #[inline]
    fn half_points(&self, a: &Outcome, b: &Outcome) -> u32 {
        let w1 = (a.d1 & (a.u1 < b.u1)) as i32;
        let l1 = (b.d1 & (b.u1 < a.u1)) as i32;
        let w2 = (a.d2 & (a.u2 < b.u2)) as i32;
        let l2 = (b.d2 & (b.u2 < a.u2)) as i32;
        let undecided = 1 - (w1 | l1);
        (1 + w1 - l1 + undecided * (w2 - l2)) as u32
    }
}

/// Does `b` beat `a` under [`TwoLevelRule`]?
pub fn compare(a: &SubjectRecord, b: &SubjectRecord) -> Comparison {
    TwoLevelRule.compare(&a.outcome, &b.outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyCounts {
    pub wins: u64,
    pub losses: u64,
    pub ties: u64,
}

impl TallyCounts {
    pub fn total(&self) -> u64 {
        self.wins + self.losses + self.ties
    }
}

/// Cross-arm comparison counts (treated subject as the candidate winner)
/// plus per-subject win fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct WinTally {
    pub counts: TallyCounts,
    pub n_control: usize,
    pub n_treated: usize,
    /// For each treated subject (dataset order), mean score against controls.
    pub treated_winfrac: Vec<f64>,
    /// For each control subject (dataset order), mean score of treated
    /// subjects against it.
    pub control_winfrac: Vec<f64>,
}

impl WinTally {
    pub fn wins(&self) -> u64 {
        self.counts.wins
    }

    pub fn losses(&self) -> u64 {
        self.counts.losses
    }

    pub fn ties(&self) -> u64 {
        self.counts.ties
    }

    pub fn comparisons(&self) -> u64 {
        (self.n_control * self.n_treated) as u64
    }
}

pub fn pairwise_tally(ds: &Dataset) -> WinTally {
    pairwise_tally_with(ds, &TwoLevelRule)
}

/// Tallies all `N0·N1` cross-arm pairs. Win fractions are formed from
/// integer half-point sums, so the result does not depend on how rows are
/// scheduled across threads.
pub fn pairwise_tally_with<R: WinRule>(ds: &Dataset, rule: &R) -> WinTally {
    let (control, treated) = ds.arm_indices();
    let outcomes: Vec<Outcome> = ds.records().iter().map(|r| r.outcome).collect();

    let control_rows: Vec<(u64, u64, u64)> = control
        .par_iter()
        .with_min_len(16)
        .map(|&i| {
            let (mut wins, mut ties, mut half) = (0u64, 0u64, 0u64);
            for &j in &treated {
                let h = rule.half_points(&outcomes[i], &outcomes[j]);
                wins += (h == 2) as u64;
                ties += (h == 1) as u64;
                half += h as u64;
            }
            (wins, ties, half)
        })
        .collect();

    let treated_half: Vec<u64> = treated
        .par_iter()
        .with_min_len(16)
        .map(|&j| {
            control
                .iter()
                .map(|&i| rule.half_points(&outcomes[i], &outcomes[j]) as u64)
                .sum()
        })
        .collect();

    let n0 = control.len();
    let n1 = treated.len();
    let wins: u64 = control_rows.iter().map(|r| r.0).sum();
    let ties: u64 = control_rows.iter().map(|r| r.1).sum();
    WinTally {
        counts: TallyCounts {
            wins,
            losses: (n0 * n1) as u64 - wins - ties,
            ties,
        },
        n_control: n0,
        n_treated: n1,
        treated_winfrac: treated_half
            .iter()
            .map(|&h| h as f64 / (2.0 * n0 as f64))
            .collect(),
        control_winfrac: control_rows
            .iter()
            .map(|r| r.2 as f64 / (2.0 * n1 as f64))
            .collect(),
    }
}

/// One ordered pseudo-observation `(i, j)`: response `I(Y_i ⪯ Y_j)` and
/// design row `(A_j − A_i, X_j − X_i)`. The mirror pair `(j, i)` has
/// response `1 − response` and the negated design row.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPair {
    pub i: usize,
    pub j: usize,
    pub response: f64,
    pub arm_diff: f64,
    pub covariate_diff: Vec<f64>,
}

/// Lazy iterator over all `n(n−1)` ordered pairs.
pub struct PseudoPairs<'a, R: WinRule> {
    ds: &'a Dataset,
    rule: &'a R,
    i: usize,
    j: usize,
}

impl<R: WinRule> Iterator for PseudoPairs<'_, R> {
    type Item = PseudoPair;

    fn next(&mut self) -> Option<PseudoPair> {
        let n = self.ds.len();
        if self.j == self.i {
            self.j += 1;
        }
        if self.j >= n {
            self.i += 1;
            self.j = if self.i == 0 { 1 } else { 0 };
        }
        if self.i >= n || n < 2 {
            return None;
        }
        let (i, j) = (self.i, self.j);
        self.j += 1;
        let ri = &self.ds.records()[i];
        let rj = &self.ds.records()[j];
        Some(PseudoPair {
            i,
            j,
            response: self.rule.compare(&ri.outcome, &rj.outcome).score(),
            arm_diff: rj.arm.indicator() - ri.arm.indicator(),
            covariate_diff: rj
                .covariates
                .iter()
                .zip(&ri.covariates)
                .map(|(xj, xi)| xj - xi)
                .collect(),
        })
    }
}

pub fn pseudo_pairs(ds: &Dataset) -> PseudoPairs<'_, TwoLevelRule> {
    pseudo_pairs_with(ds, &TwoLevelRule)
}

pub fn pseudo_pairs_with<'a, R: WinRule>(ds: &'a Dataset, rule: &'a R) -> PseudoPairs<'a, R> {
    PseudoPairs {
        ds,
        rule,
        i: 0,
        j: 0,
    }
}
