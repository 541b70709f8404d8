//! CSV ingestion and report serialization.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::analysis::AnalysisReport;
use crate::data::{validate_dataset, Dataset, RawRecord};
use crate::error::DataError;
use crate::estimators::{Method, WinOddsResult};
use crate::sim::{IncidencePoint, StudyResult};

const REQUIRED: [&str; 6] = ["id", "arm", "u1", "d1", "u2", "d2"];

/// A categorical covariate column. Without declared levels, the observed
/// levels are used and the lexicographically first is the reference.
/// Declared levels are taken in order, the first being the reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalSpec {
    pub name: String,
    pub levels: Option<Vec<String>>,
}

impl CategoricalSpec {
    pub fn new(name: impl Into<String>) -> CategoricalSpec {
        CategoricalSpec {
            name: name.into(),
            levels: None,
        }
    }
}

/// Which columns beyond the outcome columns enter the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsvSchema {
    /// Numeric covariates. `None` takes every extra column not declared
    /// categorical.
    pub covariates: Option<Vec<String>>,
    pub categorical: Vec<CategoricalSpec>,
}

enum Column {
    Numeric(usize, String),
    Categorical(usize, String, Vec<String>),
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset, DataError> {
    read_csv(File::open(path)?, schema)
}

/// Reads a header-driven CSV. Covariates keep their file order; each
/// categorical column expands in place to indicators named `col[level]`,
/// one per non-reference level.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| header.iter().position(|h| h == name);

    let mut required = [0usize; 6];
    for (slot, name) in required.iter_mut().zip(REQUIRED) {
        *slot = position(name).ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
    }
    let categorical: HashMap<&str, &CategoricalSpec> =
        schema.categorical.iter().map(|c| (c.name.as_str(), c)).collect();
    for c in &schema.categorical {
        position(&c.name).ok_or_else(|| DataError::MissingColumn(c.name.clone()))?;
    }
    if let Some(names) = &schema.covariates {
        for name in names {
            position(name).ok_or_else(|| DataError::MissingColumn(name.clone()))?;
        }
    }

    let rows: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>()?;

    let mut columns = Vec::new();
    for (idx, name) in header.iter().enumerate() {
        if REQUIRED.contains(&name.as_str()) {
            continue;
        }
        if let Some(spec) = categorical.get(name.as_str()) {
            let levels = category_levels(spec, idx, &rows)?;
            columns.push(Column::Categorical(idx, name.clone(), levels));
        } else if schema.covariates.as_ref().is_none_or(|c| c.contains(name)) {
            columns.push(Column::Numeric(idx, name.clone()));
        }
    }

    let mut names = Vec::new();
    for col in &columns {
        match col {
            Column::Numeric(_, name) => names.push(name.clone()),
            Column::Categorical(_, name, levels) => {
                names.extend(levels[1..].iter().map(|l| format!("{name}[{l}]")))
            }
        }
    }

    let mut raw = Vec::with_capacity(rows.len());
    for (k, rec) in rows.iter().enumerate() {
        let row = k + 1;
        let cell = |idx: usize| -> Result<&str, DataError> {
            match rec.get(idx) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(DataError::MissingValue {
                    row,
                    column: header[idx].clone(),
                }),
            }
        };
        let number = |idx: usize| -> Result<f64, DataError> {
            let v = cell(idx)?;
            v.parse::<f64>().map_err(|_| DataError::NonNumeric {
                row,
                column: header[idx].clone(),
                value: v.to_string(),
            })
        };
        let integer = |idx: usize| -> Result<i64, DataError> {
            let v = cell(idx)?;
            if let Ok(i) = v.parse::<i64>() {
                return Ok(i);
            }
            match v.parse::<f64>() {
                Ok(x) if x.fract() == 0.0 && x.abs() < 1e15 => Ok(x as i64),
                Ok(_) => Err(DataError::InvalidIndicator {
                    row,
                    column: header[idx].clone(),
                    value: v.to_string(),
                }),
                Err(_) => Err(DataError::NonNumeric {
                    row,
                    column: header[idx].clone(),
                    value: v.to_string(),
                }),
            }
        };

        let mut covariates = Vec::with_capacity(names.len());
        for col in &columns {
            match col {
                Column::Numeric(idx, _) => covariates.push(number(*idx)?),
                Column::Categorical(idx, name, levels) => {
                    let v = cell(*idx)?;
                    let level = levels.iter().position(|l| l == v).ok_or_else(|| {
                        DataError::UnknownCategory {
                            row,
                            column: name.clone(),
                            value: v.to_string(),
                        }
                    })?;
                    covariates.extend((1..levels.len()).map(|l| (l == level) as u8 as f64));
                }
            }
        }
        raw.push(RawRecord {
            id: cell(required[0])?.to_string(),
            arm: integer(required[1])?,
            covariates,
            u1: number(required[2])?,
            d1: integer(required[3])?,
            u2: number(required[4])?,
            d2: integer(required[5])?,
        });
    }
    validate_dataset(raw, names)
}

fn category_levels(
    spec: &CategoricalSpec,
    idx: usize,
    rows: &[csv::StringRecord],
) -> Result<Vec<String>, DataError> {
    let levels = match &spec.levels {
        Some(levels) => levels.clone(),
        None => rows
            .iter()
            .filter_map(|r| r.get(idx))
            .filter(|v| !v.is_empty())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect(),
    };
    if levels.len() < 2 {
        return Err(DataError::SingleLevel(spec.name.clone()));
    }
    Ok(levels)
}

/// Writes `ds` in the format [`read_csv`] accepts. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_dataset_csv<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(ds.covariate_names().iter().map(String::as_str));
    w.write_record(&header)?;
    for r in ds.records() {
        let o = &r.outcome;
        let mut fields = vec![
            r.id.clone(),
            (r.arm.is_treated() as u8).to_string(),
            o.u1.to_string(),
            (o.d1 as u8).to_string(),
            o.u2.to_string(),
            (o.d2 as u8).to_string(),
        ];
        fields.extend(r.covariates.iter().map(f64::to_string));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Direct => "direct",
        Method::Adjusted => "adjusted",
    }
}

/// One row per adjustment size: `scenario,n,adjustment_size,method,rate,mc_halfwidth,reps,seed`.
pub fn write_study_csv<W: Write>(result: &StudyResult, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "n",
        "adjustment_size",
        "method",
        "rate",
        "mc_halfwidth",
        "reps",
        "seed",
    ])?;
    let cfg = &result.config;
    for row in &result.rows {
        w.write_record([
            cfg.scenario.to_string(),
            cfg.n.to_string(),
            row.adjustment_size.to_string(),
            method_name(row.method).to_string(),
            row.rate.to_string(),
            row.mc_halfwidth.to_string(),
            cfg.reps.to_string(),
            cfg.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_incidence_csv<W: Write>(points: &[IncidencePoint], out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "composite", "fatal", "nonfatal"])?;
    for p in points {
        w.write_record([
            p.time.to_string(),
            p.composite.to_string(),
            p.fatal.to_string(),
            p.nonfatal.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn report_to_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report fields are finite");
    s.push('\n');
    s
}

pub fn report_from_json(s: &str) -> Result<AnalysisReport, serde_json::Error> {
    serde_json::from_str(s)
}

/// `x` with 10 significant digits.
pub fn sig10(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..10).contains(&exp) {
        format!("{:.*}", (9 - exp).max(0) as usize, x)
    } else {
        format!("{x:.9e}")
    }
}

/// Aligned plain-text rendering of a report.
pub fn report_to_table(r: &AnalysisReport) -> String {
    let mut s = String::new();
    let sm = &r.summary;
    let _ = writeln!(s, "subjects            {} (control {}, treated {})", sm.n, sm.n_control, sm.n_treated);
    for a in [&sm.control, &sm.treated] {
        let _ = writeln!(
            s,
            "  {:<8} events: composite {}, fatal {}, nonfatal {}",
            if a.arm.is_treated() { "treated" } else { "control" },
            a.composite_events,
            a.fatal_events,
            a.nonfatal_events
        );
    }
    let _ = writeln!(
        s,
        "pairs               wins {}, losses {}, ties {}",
        r.tally.wins, r.tally.losses, r.tally.ties
    );
    let adjusted_for = if r.adjusted_for.is_empty() {
        "(none)".to_string()
    } else {
        r.adjusted_for.join(", ")
    };
    let _ = writeln!(s, "adjusted for        {adjusted_for}");
    let _ = writeln!(
        s,
        "PIM fit             {} iterations, score norm {}",
        r.pim.iterations,
        sig10(r.pim.score_norm)
    );
    let _ = writeln!(s, "  {:<16}  {}", "treatment", sig10(r.pim.tau_a));
    for (name, t) in r.adjusted_for.iter().zip(&r.pim.tau_x) {
        let _ = writeln!(s, "  {:<16}  {}", name, sig10(*t));
    }
    let _ = writeln!(s);

    let _ = writeln!(s, "{:<20}{:>20}{:>20}", "", "unadjusted", "adjusted");
    let rows: [(&str, fn(&WinOddsResult) -> f64); 5] = [
        ("win odds", |w| w.theta_hat),
        ("ci low", |w| w.ci_low),
        ("ci high", |w| w.ci_high),
        ("z", |w| w.z),
        ("p-value", |w| w.p_value),
    ];
    let line = |s: &mut String, label: &str, a: f64, b: f64| {
        let _ = writeln!(s, "{:<20}{:>20}{:>20}", label, sig10(a), sig10(b));
    };
    line(&mut s, "MPI", r.unadjusted.estimate.nu_hat, r.adjusted.estimate.nu_hat);
    line(&mut s, "MPI variance", r.unadjusted.estimate.variance, r.adjusted.estimate.variance);
    for (label, f) in rows {
        line(&mut s, label, f(&r.unadjusted.inference), f(&r.adjusted.inference));
    }
    let _ = writeln!(
        s,
        "{:<20}{:>20}{:>20}",
        "sided",
        format!("{:?}", r.unadjusted.inference.sided).to_lowercase(),
        format!("{:?}", r.adjusted.inference.sided).to_lowercase()
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "standardized MPI    {}", sig10(r.nu_standardized));
    let _ = writeln!(s, "identity residual   {}", sig10(r.identity_residual));
    if let Some(b) = &r.bootstrap {
        let _ = writeln!(
            s,
            "bootstrap           {} replicates ({} failed), variance direct {}, adjusted {}",
            b.replicates,
            b.failed,
            sig10(b.direct),
            sig10(b.augmented)
        );
    }
    if let Some(t) = &r.timings {
        let _ = writeln!(
            s,
            "timings (s)         tally {}, fit {}, estimation {}, bootstrap {}",
            sig10(t.tally),
            sig10(t.fit),
            sig10(t.estimation),
            sig10(t.bootstrap)
        );
    }
    s
}
