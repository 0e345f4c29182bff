//! Evaluation report and its text / JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    confusion_matrix, image_counts, mape_counts, mean_average_precision, normalize_confusion,
    prepare_images, round1, ConfusionMatrix, EvalConfig, EvalError, ImageCounts,
    NormalizedConfusion, PreparedImage, ThresholdMap,
};
use super::variability::{variability_report, Rater, RaterKind, VariabilityReport};
use crate::model::{ClassLabel, Dataset, ImageId, Split};
use crate::quant::counts_from_dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub map_avg: Option<f64>,
    pub map_at: Vec<ThresholdMap>,
    pub mape_per_class: BTreeMap<ClassLabel, Option<f64>>,
    pub mape_total: Option<f64>,
    /// Images left out of each MAPE because their ground-truth count is zero.
    pub mape_skipped: BTreeMap<String, Vec<ImageId>>,
    pub confusion: ConfusionMatrix,
    pub normalized_confusion: NormalizedConfusion,
    pub per_image_counts: Vec<ImageCounts>,
}

impl EvalReport {
    pub fn map_at(&self, iou: f64) -> Option<f64> {
        self.map_at.iter().find(|t| (t.iou - iou).abs() < 1e-9).and_then(|t| t.map)
    }
}

pub fn evaluate(images: &[PreparedImage], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let map = mean_average_precision(images, cfg);
    let counts = image_counts(images);
    let mut mape_per_class = BTreeMap::new();
    let mut mape_skipped = BTreeMap::new();
    for c in ClassLabel::ALL {
        let r = mape_counts(&counts, Some(c), cfg.pooled_mape);
        mape_per_class.insert(c, r.value);
        mape_skipped.insert(c.name().to_string(), r.skipped);
    }
    let total = mape_counts(&counts, None, cfg.pooled_mape);
    mape_skipped.insert("total".to_string(), total.skipped);
    let confusion = confusion_matrix(images, cfg);
    Ok(EvalReport {
        n_images: images.len(),
        map_avg: map.map_avg,
        map_at: map.map_at,
        mape_per_class,
        mape_total: total.value,
        mape_skipped,
        normalized_confusion: normalize_confusion(&confusion),
        confusion,
        per_image_counts: counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportColumn {
    pub name: String,
    pub report: EvalReport,
}

/// One report per populated split, then one over all images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    /// Dataset name.
    pub dataset: String,
    pub config: EvalConfig,
    pub columns: Vec<ReportColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variability: Option<VariabilityReport>,
}

pub fn evaluate_dataset(ds: &Dataset, cfg: &EvalConfig) -> Result<DatasetReport, EvalError> {
    cfg.validate()?;
    let mut columns = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        if ds.images.iter().any(|i| i.split == split) {
            let images = prepare_images(ds, |i| i.split == split);
            columns.push(ReportColumn { name: split.as_str().into(), report: evaluate(&images, cfg)? });
        }
    }
    let images = prepare_images(ds, |_| true);
    columns.push(ReportColumn { name: "all".into(), report: evaluate(&images, cfg)? });
    Ok(DatasetReport { dataset: ds.name.clone(), config: cfg.clone(), columns, variability: None })
}

/// Report served to reviewers: requires ground truth, and when user raters
/// are given adds their agreement with each other and with the kept
/// predictions (rater `model`).
pub fn review_report(ds: &Dataset, cfg: &EvalConfig, users: &[Rater]) -> Result<DatasetReport, EvalError> {
    if ds.ground_truth.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let mut report = evaluate_dataset(ds, cfg)?;
    if !users.is_empty() {
        let mut raters = users.to_vec();
        raters.push(Rater { name: "model".into(), kind: RaterKind::Model, counts: counts_from_dataset(ds) });
        report.variability = Some(variability_report(&raters)?);
    }
    Ok(report)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", round1(x)))
}

impl DatasetReport {
    /// Pretty JSON with a trailing newline.
    pub fn render_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text tables: benchmarks per column, then raw and normalised
    /// confusion matrices and per-image counts for each column.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let thresholds = &self.config.iou_thresholds;
        let range_label = match (thresholds.first(), thresholds.last()) {
            (Some(a), Some(b)) if thresholds.len() > 1 => {
                format!("mAP IoU={:.2}:{:.2}:{:.2}", a, thresholds[1] - a, b)
            }
            (Some(a), _) => format!("mAP IoU={a:.2}"),
            _ => "mAP".to_string(),
        };
        let _ = writeln!(out, "Benchmarks (%) for dataset {}", self.dataset);
        let _ = write!(out, "{:<22}", "");
        for c in &self.columns {
            let _ = write!(out, "{:>10}", c.name);
        }
        out.push('\n');
        let mut row = |name: &str, f: &dyn Fn(&EvalReport) -> Option<f64>| {
            let _ = write!(out, "{name:<22}");
            for c in &self.columns {
                let _ = write!(out, "{:>10}", pct(f(&c.report)));
            }
            out.push('\n');
        };
        row(&range_label, &|r| r.map_avg);
        row("mAP IoU=.5", &|r| r.map_at(0.5));
        row("mAP IoU=.75", &|r| r.map_at(0.75));
        row("MAPE BVG-", &|r| r.mape_per_class.get(&ClassLabel::BvgMinus).copied().flatten());
        row("MAPE BVG+", &|r| r.mape_per_class.get(&ClassLabel::BvgPlus).copied().flatten());
        row("MAPE Tot", &|r| r.mape_total);

        for c in &self.columns {
            out.push('\n');
            let _ = writeln!(out, "Confusion matrix ({})", c.name);
            out.push_str(&confusion_text(&c.report.confusion));
            out.push('\n');
            let _ = writeln!(out, "Normalised confusion matrix ({}, % of actual)", c.name);
            out.push_str(&normalized_text(&c.report.normalized_confusion));
        }

        if let Some(all) = self.columns.last() {
            out.push('\n');
            let _ = writeln!(out, "Per-image counts");
            let _ = writeln!(
                out,
                "{:>10}{:>10}{:>10}{:>12}{:>12}",
                "image", "gt BVG-", "gt BVG+", "pred BVG-", "pred BVG+"
            );
            for c in &all.report.per_image_counts {
                let _ = writeln!(
                    out,
                    "{:>10}{:>10}{:>10}{:>12}{:>12}",
                    c.image_id, c.gt[0], c.gt[1], c.pred[0], c.pred[1]
                );
            }
        }
        if let Some(v) = &self.variability {
            out.push('\n');
            out.push_str(&v.render_text());
        }
        out
    }
}

const HEADER: [&str; 4] = ["BVG- predicted", "BVG+ predicted", "Missed", "Total"];

fn header() -> String {
    let mut s = format!("{:<14}", "");
    for h in HEADER {
        s.push_str(&format!("{h:>16}"));
    }
    s.push('\n');
    s
}

pub(crate) fn confusion_text(m: &ConfusionMatrix) -> String {
    let mut out = header();
    for class in ClassLabel::ALL {
        let r = m.actual[class.index()];
        out.push_str(&format!("{:<14}", format!("{} actual", class.name())));
        for v in r {
            out.push_str(&format!("{v:>16}"));
        }
        out.push_str(&format!("{:>16}\n", m.row_total(class)));
    }
    out.push_str(&format!(
        "{:<14}{:>16}{:>16}{:>16}{:>16}\n",
        "Invented",
        m.invented[0],
        m.invented[1],
        ".",
        m.invented_total()
    ));
    out
}

pub(crate) fn normalized_text(n: &NormalizedConfusion) -> String {
    let mut out = header();
    for class in ClassLabel::ALL {
        out.push_str(&format!("{:<14}", format!("{} actual", class.name())));
        match n.actual[class.index()] {
            Some(r) => {
                for v in r {
                    out.push_str(&format!("{:>16.1}", round1(v)));
                }
                out.push_str(&format!("{:>16}\n", 100));
            }
            None => out.push_str(&format!("{:>16}{:>16}{:>16}{:>16}\n", "-", "-", "-", "-")),
        }
    }
    match n.invented {
        Some(r) => out.push_str(&format!(
            "{:<14}{:>16.1}{:>16.1}{:>16}{:>16}\n",
            "Invented",
            round1(r[0]),
            round1(r[1]),
            ".",
            100
        )),
        None => out.push_str(&format!("{:<14}{:>16}{:>16}{:>16}{:>16}\n", "Invented", "-", "-", ".", "-")),
    }
    out
}
