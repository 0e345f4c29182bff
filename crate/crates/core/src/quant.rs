//! Dilution bookkeeping and bacteria estimates with confidence intervals.
//!
//! A dish plated at dilution factor `d` with `n` colonies estimates `n / d`
//! CFU in the undiluted sample. All dishes of an experiment are pooled per
//! class and summarised by a Student-t interval.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::model::{ClassLabel, Dataset, ImageId, Origin};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("dilution factor must lie in (0, 1], got {0}")]
    InvalidDilution(f64),
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("experiment has no dishes")]
    NoDishes,
    #[error("no counts for images {0:?}")]
    MissingCounts(Vec<ImageId>),
}

/// Fraction of the original concentration plated on a dish.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DilutionFactor(f64);

impl DilutionFactor {
    pub fn new(value: f64) -> Result<Self, QuantError> {
        if value > 0.0 && value <= 1.0 {
            Ok(Self(value))
        } else {
            Err(QuantError::InvalidDilution(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for DilutionFactor {
    type Error = QuantError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<DilutionFactor> for f64 {
    fn from(d: DilutionFactor) -> f64 {
        d.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriplicateGroup {
    pub image_ids: Vec<ImageId>,
    pub dilution: DilutionFactor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub triplicates: Vec<TriplicateGroup>,
    pub created_at: DateTime<Utc>,
}

/// Estimated CFU in the undiluted sample.
pub fn scaled_estimate(count: u64, d: DilutionFactor) -> f64 {
    count as f64 / d.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    NonDecreasingDilutions,
    ImageCount,
    UnvalidatedPredictions,
    DuplicateImage,
    UnknownImage,
    EmptyExperiment,
    SingleDish,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub message: String,
}

impl Diagnostic {
    fn warning(code: DiagnosticCode, message: String) -> Self {
        Self { severity: Severity::Warning, code, message }
    }

    fn error(code: DiagnosticCode, message: String) -> Self {
        Self { severity: Severity::Error, code, message }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{s}: {}", self.message)
    }
}

/// Consistency checks on an experiment. `dataset`, when given, is used to
/// flag unknown images and images still holding unsure predictions no
/// reviewer has resolved.
pub fn validate_experiment(exp: &Experiment, dataset: Option<&Dataset>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if exp.triplicates.is_empty() {
        out.push(Diagnostic::error(
            DiagnosticCode::EmptyExperiment,
            format!("experiment {} has no triplicates", exp.id),
        ));
        return out;
    }
    if exp.triplicates.windows(2).any(|w| w[1].dilution.value() >= w[0].dilution.value()) {
        let list: Vec<String> =
            exp.triplicates.iter().map(|t| t.dilution.value().to_string()).collect();
        out.push(Diagnostic::warning(
            DiagnosticCode::NonDecreasingDilutions,
            format!("non-decreasing dilutions: {}", list.join(", ")),
        ));
    }
    for (k, t) in exp.triplicates.iter().enumerate() {
        if t.image_ids.len() != 3 {
            out.push(Diagnostic::error(
                DiagnosticCode::ImageCount,
                format!("image count ≠ 3: triplicate {} has {} images", k + 1, t.image_ids.len()),
            ));
        }
    }
    let mut seen = HashSet::new();
    for id in exp.triplicates.iter().flat_map(|t| &t.image_ids) {
        if !seen.insert(*id) {
            out.push(Diagnostic::error(
                DiagnosticCode::DuplicateImage,
                format!("image {id} appears more than once"),
            ));
        }
    }
    if let Some(ds) = dataset {
        let mut pending = Vec::new();
        for id in exp.triplicates.iter().flat_map(|t| &t.image_ids) {
            if ds.image(*id).is_none() {
                out.push(Diagnostic::error(
                    DiagnosticCode::UnknownImage,
                    format!("image {id} is not in dataset {}", ds.id),
                ));
                continue;
            }
            let unresolved = ds
                .predictions_for(*id)
                .filter(|i| i.origin == Origin::Model && i.is_kept() && i.unsure && !i.validated)
                .count();
            if unresolved > 0 {
                pending.push(format!("{id} ({unresolved})"));
            }
        }
        if !pending.is_empty() {
            out.push(Diagnostic::warning(
                DiagnosticCode::UnvalidatedPredictions,
                format!("unvalidated unsure predictions on images {}", pending.join(", ")),
            ));
        }
    }
    out
}

/// Kept prediction counts per image, indexed by `ClassLabel::index`. Unsure
/// instances count toward their current label.
pub fn counts_from_dataset(ds: &Dataset) -> BTreeMap<ImageId, [u64; 2]> {
    let mut out: BTreeMap<ImageId, [u64; 2]> = ds.images.iter().map(|i| (i.id, [0, 0])).collect();
    for p in ds.predictions.iter().filter(|p| p.is_kept()) {
        if let Some(c) = out.get_mut(&p.image_id) {
            c[p.label.index()] += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence_level: f64,
    pub n_dishes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DishEstimate {
    pub image_id: ImageId,
    pub dilution: DilutionFactor,
    pub counts: [u64; 2],
    pub scaled: [f64; 2],
    pub scaled_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantReport {
    pub experiment_id: String,
    pub per_class: BTreeMap<ClassLabel, Estimate>,
    pub total: Estimate,
    pub dishes: Vec<DishEstimate>,
    pub warnings: Vec<Diagnostic>,
}

/// Mean and Student-t interval of `values` at `level`. A single value gives
/// a zero-width interval.
pub fn t_interval(values: &[f64], level: f64) -> Result<Estimate, QuantError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(QuantError::InvalidLevel(level));
    }
    let n = values.len();
    if n == 0 {
        return Err(QuantError::NoDishes);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(1.0 - (1.0 - level) / 2.0);
        t * var.sqrt() / (n as f64).sqrt()
    };
    Ok(Estimate {
        point_estimate: mean,
        ci_low: mean - half,
        ci_high: mean + half,
        confidence_level: level,
        n_dishes: n,
    })
}

/// Pools every dish's scaled estimate per class and for the total.
pub fn aggregate_ci(
    exp: &Experiment,
    counts: &BTreeMap<ImageId, [u64; 2]>,
    level: f64,
) -> Result<QuantReport, QuantError> {
    let missing: Vec<ImageId> = exp
        .triplicates
        .iter()
        .flat_map(|t| &t.image_ids)
        .filter(|id| !counts.contains_key(id))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(QuantError::MissingCounts(missing));
    }
    let mut dishes = Vec::new();
    for t in &exp.triplicates {
        for id in &t.image_ids {
            let c = counts[id];
            dishes.push(DishEstimate {
                image_id: *id,
                dilution: t.dilution,
                counts: c,
                scaled: [scaled_estimate(c[0], t.dilution), scaled_estimate(c[1], t.dilution)],
                scaled_total: scaled_estimate(c[0] + c[1], t.dilution),
            });
        }
    }
    let mut per_class = BTreeMap::new();
    for class in ClassLabel::ALL {
        let v: Vec<f64> = dishes.iter().map(|d| d.scaled[class.index()]).collect();
        per_class.insert(class, t_interval(&v, level)?);
    }
    let totals: Vec<f64> = dishes.iter().map(|d| d.scaled_total).collect();
    let total = t_interval(&totals, level)?;
    let mut warnings = Vec::new();
    if dishes.len() == 1 {
        warnings.push(Diagnostic::warning(
            DiagnosticCode::SingleDish,
            "a single dish gives no interval; bounds equal the estimate".into(),
        ));
    }
    Ok(QuantReport { experiment_id: exp.id.clone(), per_class, total, dishes, warnings })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExportError {
    #[error("experiment has {} blocking error(s)", .0.iter().filter(|d| d.is_error()).count())]
    Blocked(Vec<Diagnostic>),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

/// Validates `exp` against `ds` and, if nothing blocks, reports the kept
/// counts. Validation warnings precede the aggregation's own.
pub fn export_experiment(exp: &Experiment, ds: &Dataset, level: f64) -> Result<QuantReport, ExportError> {
    let diags = validate_experiment(exp, Some(ds));
    if diags.iter().any(Diagnostic::is_error) {
        return Err(ExportError::Blocked(diags));
    }
    let mut report = aggregate_ci(exp, &counts_from_dataset(ds), level)?;
    let mut warnings = diags;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

/// Field order of the export file.
pub const EXPORT_HEADER: [&str; 9] = [
    "experiment_id",
    "class",
    "point_estimate",
    "ci_low",
    "ci_high",
    "confidence_level",
    "n_dishes",
    "dish_counts",
    "dilutions",
];

/// Delimited export: one row per class plus a `total` row. Per-dish counts
/// and dilutions are `;`-joined in triplicate order.
pub fn export_csv(report: &QuantReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EXPORT_HEADER).expect("in-memory write");
    let dilutions: Vec<String> = report.dishes.iter().map(|d| d.dilution.value().to_string()).collect();
    let dilutions = dilutions.join(";");
    let mut row = |name: &str, e: &Estimate, counts: Vec<u64>| {
        let counts: Vec<String> = counts.iter().map(u64::to_string).collect();
        w.write_record([
            report.experiment_id.clone(),
            name.to_string(),
            e.point_estimate.to_string(),
            e.ci_low.to_string(),
            e.ci_high.to_string(),
            e.confidence_level.to_string(),
            e.n_dishes.to_string(),
            counts.join(";"),
            dilutions.clone(),
        ])
        .expect("in-memory write");
    };
    for class in ClassLabel::ALL {
        let counts = report.dishes.iter().map(|d| d.counts[class.index()]).collect();
        row(class.name(), &report.per_class[&class], counts);
    }
    let totals = report.dishes.iter().map(|d| d.counts[0] + d.counts[1]).collect();
    row("total", &report.total, totals);
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
