//! Trial records and validated datasets.
//!
//! A subject's outcome is stored in the observed two-level form
//! `(u1, d1, u2, d2)`: `u1` is the time of the fatal event or end of
//! follow-up, `u2` the time of the first nonfatal event, fatal event or end
//! of follow-up, whichever came first. Times carry no unit; only their order
//! matters downstream.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub fn from_indicator(value: i64) -> Option<Arm> {
        match value {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }

    /// `A` as a number: 0 for control, 1 for treated.
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Control => 0.0,
            Arm::Treated => 1.0,
        }
    }

    pub fn flipped(self) -> Arm {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }

    pub fn is_treated(self) -> bool {
        self == Arm::Treated
    }
}

/// Observed two-level composite outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub u1: f64,
    pub d1: bool,
    pub u2: f64,
    pub d2: bool,
}

impl Outcome {
    /// Event-free through `followup` on both levels.
    pub fn event_free(followup: f64) -> Outcome {
        Outcome {
            u1: followup,
            d1: false,
            u2: followup,
            d2: false,
        }
    }

    /// Same outcome with every time moved by `offset`.
    pub fn shifted(&self, offset: f64) -> Outcome {
        Outcome {
            u1: self.u1 + offset,
            u2: self.u2 + offset,
            ..*self
        }
    }

    pub fn has_event(&self) -> bool {
        self.d1 || self.d2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub arm: Arm,
    pub covariates: Vec<f64>,
    pub outcome: Outcome,
}

/// Unvalidated record as read from a file; indicators are kept as integers
/// so out-of-range values can be reported.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub arm: i64,
    pub covariates: Vec<f64>,
    pub u1: f64,
    pub d1: i64,
    pub u2: f64,
    pub d2: i64,
}

impl From<&SubjectRecord> for RawRecord {
    fn from(r: &SubjectRecord) -> Self {
        RawRecord {
            id: r.id.clone(),
            arm: r.arm.indicator() as i64,
            covariates: r.covariates.clone(),
            u1: r.outcome.u1,
            d1: r.outcome.d1 as i64,
            u2: r.outcome.u2,
            d2: r.outcome.d2 as i64,
        }
    }
}

/// Validated two-arm dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    covariate_names: Vec<String>,
    n_control: usize,
    n_treated: usize,
}

/// Validates raw records, preserving their order. Rows in error messages are
/// 1-based.
pub fn validate_dataset(
    raw: Vec<RawRecord>,
    covariate_names: Vec<String>,
) -> Result<Dataset, DataError> {
    let p = covariate_names.len();
    let mut seen: HashMap<&str, usize> = HashMap::with_capacity(raw.len());
    for (k, r) in raw.iter().enumerate() {
        if let Some(first) = seen.insert(r.id.as_str(), k + 1) {
            return Err(DataError::DuplicateId {
                id: r.id.clone(),
                first,
                second: k + 1,
            });
        }
    }
    let mut records = Vec::with_capacity(raw.len());
    for (k, r) in raw.into_iter().enumerate() {
        let row = k + 1;
        let arm = Arm::from_indicator(r.arm).ok_or(DataError::InvalidArm {
            row,
            value: r.arm.to_string(),
        })?;
        let d1 = indicator(row, "d1", r.d1)?;
        let d2 = indicator(row, "d2", r.d2)?;
        let outcome = Outcome {
            u1: r.u1,
            d1,
            u2: r.u2,
            d2,
        };
        check_outcome(row, &outcome)?;
        if r.covariates.len() != p {
            return Err(DataError::RaggedCovariates {
                row,
                expected: p,
                found: r.covariates.len(),
            });
        }
        if let Some(c) = r.covariates.iter().position(|x| !x.is_finite()) {
            return Err(DataError::NonFiniteCovariate {
                row,
                column: covariate_names[c].clone(),
            });
        }
        records.push(SubjectRecord {
            id: r.id,
            arm,
            covariates: r.covariates,
            outcome,
        });
    }
    Dataset::from_parts(records, covariate_names)
}

fn indicator(row: usize, column: &str, value: i64) -> Result<bool, DataError> {
    match value {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(DataError::InvalidIndicator {
            row,
            column: column.to_string(),
            value: v.to_string(),
        }),
    }
}

fn check_outcome(row: usize, o: &Outcome) -> Result<(), DataError> {
    for (column, value) in [("u1", o.u1), ("u2", o.u2)] {
        if !value.is_finite() || value < 0.0 {
            return Err(DataError::InvalidTime {
                row,
                column: column.to_string(),
                value,
            });
        }
    }
    if o.u2 > o.u1 {
        return Err(DataError::U2ExceedsU1 {
            row,
            u1: o.u1,
            u2: o.u2,
        });
    }
    if o.d2 && o.u2 >= o.u1 {
        return Err(DataError::NonfatalNotBeforeFatal {
            row,
            u1: o.u1,
            u2: o.u2,
        });
    }
    Ok(())
}

impl Dataset {
    /// Builds a dataset from typed records, checking every invariant.
    pub fn new(
        records: Vec<SubjectRecord>,
        covariate_names: Vec<String>,
    ) -> Result<Dataset, DataError> {
        validate_dataset(
            records.iter().map(RawRecord::from).collect(),
            covariate_names,
        )
    }

    // Records must already satisfy the per-record invariants.
    fn from_parts(
        records: Vec<SubjectRecord>,
        covariate_names: Vec<String>,
    ) -> Result<Dataset, DataError> {
        let n_treated = records.iter().filter(|r| r.arm.is_treated()).count();
        let n_control = records.len() - n_treated;
        if n_control < 2 {
            return Err(DataError::ArmTooSmall {
                arm: "control",
                count: n_control,
            });
        }
        if n_treated < 2 {
            return Err(DataError::ArmTooSmall {
                arm: "treated",
                count: n_treated,
            });
        }
        Ok(Dataset {
            records,
            covariate_names,
            n_control,
            n_treated,
        })
    }

    /// Default names `x1..xp`.
    pub fn default_names(p: usize) -> Vec<String> {
        (1..=p).map(|k| format!("x{k}")).collect()
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>, DataError> {
        names
            .iter()
            .map(|name| {
                let name = name.as_ref();
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| DataError::UnknownCovariate(name.to_string()))
            })
            .collect()
    }

    /// Keeps only the covariates at `indices`, in that order.
    pub fn select_covariates(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        if let Some(&bad) = indices.iter().find(|&&k| k >= self.p()) {
            return Err(DataError::UnknownCovariate(format!("#{}", bad + 1)));
        }
        let records = self
            .records
            .iter()
            .map(|r| SubjectRecord {
                covariates: indices.iter().map(|&k| r.covariates[k]).collect(),
                ..r.clone()
            })
            .collect();
        let names = indices
            .iter()
            .map(|&k| self.covariate_names[k].clone())
            .collect();
        Ok(Dataset {
            records,
            covariate_names: names,
            n_control: self.n_control,
            n_treated: self.n_treated,
        })
    }

    /// The first `k` covariates.
    pub fn covariate_prefix(&self, k: usize) -> Result<Dataset, DataError> {
        self.select_covariates(&(0..k).collect::<Vec<_>>())
    }

    /// Same data with control and treated labels swapped.
    pub fn with_flipped_arms(&self) -> Dataset {
        Dataset {
            records: self
                .records
                .iter()
                .map(|r| SubjectRecord {
                    arm: r.arm.flipped(),
                    ..r.clone()
                })
                .collect(),
            covariate_names: self.covariate_names.clone(),
            n_control: self.n_treated,
            n_treated: self.n_control,
        }
    }

    /// Bootstrap-style resample: the records at `indices` (repeats allowed),
    /// with `#k` appended to ids so they stay unique.
    pub fn resample(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        let records = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let r = &self.records[i];
                SubjectRecord {
                    id: format!("{}#{k}", r.id),
                    ..r.clone()
                }
            })
            .collect();
        Dataset::from_parts(records, self.covariate_names.clone())
    }

    /// Record indices of each arm, in dataset order.
    pub fn arm_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let mut control = Vec::with_capacity(self.n_control);
        let mut treated = Vec::with_capacity(self.n_treated);
        for (i, r) in self.records.iter().enumerate() {
            match r.arm {
                Arm::Control => control.push(i),
                Arm::Treated => treated.push(i),
            }
        }
        (control, treated)
    }
}
