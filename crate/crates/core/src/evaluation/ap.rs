//! Average precision and its mean over classes and IoU thresholds.

use serde::{Deserialize, Serialize};

use super::matching::greedy_assign;
use super::{EvalConfig, PreparedImage};
use crate::model::{ClassLabel, ImageId, InstanceId};

/// One ranked detection: score, a stable tie-break key and whether it
/// matched a ground-truth instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedDetection {
    pub score: f64,
    pub key: (ImageId, InstanceId),
    pub true_positive: bool,
}

/// Interpolated AP in percent from ranked detections and the number of
/// ground-truth instances.
///
/// Precision is made non-increasing from the right, then read at `points`
/// equally spaced recall levels `0, 1/(points-1), …, 1`; a level no recall
/// reaches contributes zero.
pub fn ap_from_detections(mut dets: Vec<RankedDetection>, n_gt: usize, points: usize) -> f64 {
    if n_gt == 0 || points < 2 {
        return 0.0;
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key)));
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for d in &dets {
        if d.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i] < precision[i + 1] {
            precision[i] = precision[i + 1];
        }
    }
    // Number of recall levels read at each curve index.
    let mut hits = vec![0usize; precision.len()];
    for k in 0..points {
        let r = k as f64 / (points - 1) as f64;
        let idx = recall.partition_point(|&x| x < r);
        if idx < hits.len() {
            hits[idx] += 1;
        }
    }
    let sum: f64 = hits
        .iter()
        .zip(&precision)
        .filter(|(&h, _)| h > 0)
        .map(|(&h, &p)| h as f64 * p)
        .sum();
    100.0 * sum / points as f64
}

/// Ranked detections of one class at one threshold, with the class's
/// ground-truth count.
pub(crate) fn class_detections(
    images: &[PreparedImage],
    class: ClassLabel,
    iou_threshold: f64,
) -> (Vec<RankedDetection>, usize) {
    let mut dets = Vec::new();
    let mut n_gt = 0;
    for img in images {
        n_gt += img.gts.iter().filter(|g| g.label == class).count();
        let assign = greedy_assign(&img.preds, &img.gts, &img.table, iou_threshold, true);
        for (p, a) in img.preds.iter().zip(assign) {
            if p.label == class {
                dets.push(RankedDetection {
                    score: p.score,
                    key: (img.image_id, p.id),
                    true_positive: a.is_some(),
                });
            }
        }
    }
    (dets, n_gt)
}

/// AP in percent for one class, `None` when the class has no ground truth.
pub fn average_precision(
    images: &[PreparedImage],
    class: ClassLabel,
    iou_threshold: f64,
    cfg: &EvalConfig,
) -> Option<f64> {
    let (dets, n_gt) = class_detections(images, class, iou_threshold);
    (n_gt > 0).then(|| ap_from_detections(dets, n_gt, cfg.interpolation_points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMap {
    pub iou: f64,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map_avg: Option<f64>,
    pub map_at: Vec<ThresholdMap>,
}

impl MapResult {
    /// mAP at the threshold closest to `iou`.
    pub fn at(&self, iou: f64) -> Option<f64> {
        self.map_at.iter().find(|t| (t.iou - iou).abs() < 1e-9).and_then(|t| t.map)
    }
}

/// Mean over classes of AP per threshold; `map_avg` averages the thresholds.
pub fn mean_average_precision(images: &[PreparedImage], cfg: &EvalConfig) -> MapResult {
    let map_at: Vec<ThresholdMap> = cfg
        .iou_thresholds
        .iter()
        .map(|&t| {
            let aps: Vec<f64> = ClassLabel::ALL
                .iter()
                .filter_map(|&c| average_precision(images, c, t, cfg))
                .collect();
            let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
            ThresholdMap { iou: t, map }
        })
        .collect();
    let defined: Vec<f64> = map_at.iter().filter_map(|t| t.map).collect();
    let map_avg = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    MapResult { map_avg, map_at }
}
