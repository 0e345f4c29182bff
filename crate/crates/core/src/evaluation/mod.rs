//! Detection and counting metrics: matching, AP/mAP, MAPE, confusion
//! matrices with Missed/Invented cells and rater variability.

mod ap;
mod confusion;
mod mape;
mod matching;
mod report;
mod variability;

pub use ap::{
    ap_from_detections, average_precision, mean_average_precision, MapResult, RankedDetection,
    ThresholdMap,
};
pub use confusion::{
    confusion_matrix, normalize_confusion, round1, ConfusionMatrix, NormalizedConfusion, MISSED,
};
pub use mape::{image_counts, mape_counts, mape_of, ImageCounts, MapeResult};
pub use matching::{match_instances, IouTable, MatchPair, MatchResult};
pub use report::{evaluate, evaluate_dataset, review_report, DatasetReport, EvalReport, ReportColumn};
pub use variability::{
    variability_report, CountErrors, PairVariability, Rater, RaterKind, VariabilityReport,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dataset, ImageId, ImageRecord, Instance};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error("variability needs at least 2 raters, got {0}")]
    TooFewRaters(usize),
    #[error("dataset has no ground truth")]
    NoGroundTruth,
    #[error("raters {reference} and {other} cover different images")]
    MismatchedImages { reference: String, other: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub match_iou_for_confusion: f64,
    pub interpolation_points: usize,
    /// Compare summed counts instead of averaging per-image errors.
    pub pooled_mape: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            match_iou_for_confusion: 0.5,
            interpolation_points: 101,
            pooled_mape: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iou_thresholds.is_empty() {
            return Err(EvalError::InvalidConfig("iou_thresholds is empty".into()));
        }
        if self.iou_thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return Err(EvalError::InvalidConfig("iou_thresholds must lie in (0, 1]".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidConfig(
                "iou_thresholds must be strictly increasing".into(),
            ));
        }
        if !(self.match_iou_for_confusion > 0.0 && self.match_iou_for_confusion <= 1.0) {
            return Err(EvalError::InvalidConfig("match_iou_for_confusion must lie in (0, 1]".into()));
        }
        if self.interpolation_points < 2 {
            return Err(EvalError::InvalidConfig("interpolation_points must be at least 2".into()));
        }
        Ok(())
    }
}

/// Kept predictions and ground truth of one image with their IoU table.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub image_id: ImageId,
    pub preds: Vec<Instance>,
    pub gts: Vec<Instance>,
    pub table: IouTable,
}

impl PreparedImage {
    /// Excluded predictions are dropped.
    pub fn new(image_id: ImageId, preds: Vec<Instance>, gts: Vec<Instance>) -> Self {
        let preds: Vec<Instance> = preds.into_iter().filter(Instance::is_kept).collect();
        let table = IouTable::new(&preds, &gts);
        Self { image_id, preds, gts, table }
    }
}

/// Prepares every image accepted by `keep`, in dataset order.
pub fn prepare_images(ds: &Dataset, keep: impl Fn(&ImageRecord) -> bool) -> Vec<PreparedImage> {
    let images: Vec<&ImageRecord> = ds.images.iter().filter(|i| keep(i)).collect();
    images
        .par_iter()
        .map(|img| {
            PreparedImage::new(
                img.id,
                ds.predictions_for(img.id).cloned().collect(),
                ds.ground_truth_for(img.id).cloned().collect(),
            )
        })
        .collect()
}
