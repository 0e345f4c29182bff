//! Greedy score-ranked matching of predictions to ground truth.

use serde::{Deserialize, Serialize};

use crate::geometry::instance_iou;
use crate::model::{Instance, InstanceId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub prediction_id: InstanceId,
    pub gt_id: InstanceId,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_predictions: Vec<InstanceId>,
    pub unmatched_gt: Vec<InstanceId>,
}

/// Dense prediction × ground-truth IoU table for one image.
#[derive(Debug, Clone)]
pub struct IouTable {
    n_gt: usize,
    values: Vec<f64>,
}

impl IouTable {
    pub fn new(preds: &[Instance], gts: &[Instance]) -> Self {
        let mut values = vec![0.0; preds.len() * gts.len()];
        for (i, p) in preds.iter().enumerate() {
            for (j, g) in gts.iter().enumerate() {
                if p.bbox.intersection_area(&g.bbox) > 0.0 {
                    values[i * gts.len() + j] = instance_iou(p, g);
                }
            }
        }
        Self { n_gt: gts.len(), values }
    }

    pub fn get(&self, pred: usize, gt: usize) -> f64 {
        self.values[pred * self.n_gt + gt]
    }
}

/// Prediction indices by descending score, ties by ascending id.
pub(crate) fn score_order(preds: &[Instance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b].score.total_cmp(&preds[a].score).then_with(|| preds[a].id.cmp(&preds[b].id))
    });
    order
}

/// Greedy matching on a precomputed table. Returns, for each prediction
/// index, the matched ground-truth index.
pub(crate) fn greedy_assign(
    preds: &[Instance],
    gts: &[Instance],
    table: &IouTable,
    iou_threshold: f64,
    class_aware: bool,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; preds.len()];
    for p in score_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || (class_aware && gt.label != preds[p].label) {
                continue;
            }
            let iou = table.get(p, g);
            if iou < iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, biou)) => iou > biou || (iou == biou && gt.id < gts[bg].id),
            };
            if better {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            out[p] = Some(g);
        }
    }
    out
}

pub(crate) fn match_with_table(
    preds: &[Instance],
    gts: &[Instance],
    table: &IouTable,
    iou_threshold: f64,
    class_aware: bool,
) -> MatchResult {
    let assign = greedy_assign(preds, gts, table, iou_threshold, class_aware);
    let mut result = MatchResult::default();
    let mut gt_used = vec![false; gts.len()];
    for p in score_order(preds) {
        match assign[p] {
            Some(g) => {
                gt_used[g] = true;
                result.pairs.push(MatchPair {
                    prediction_id: preds[p].id,
                    gt_id: gts[g].id,
                    iou: table.get(p, g),
                });
            }
            None => result.unmatched_predictions.push(preds[p].id),
        }
    }
    result.unmatched_gt =
        gts.iter().zip(&gt_used).filter(|(_, &u)| !u).map(|(g, _)| g.id).collect();
    result
}

/// Matches the predictions of one image to its ground truth.
///
/// Predictions are visited by descending score (ties by id); each claims the
/// still-unmatched ground truth with the highest IoU at or above the
/// threshold, restricted to its own class when `class_aware`.
pub fn match_instances(
    preds: &[Instance],
    gts: &[Instance],
    iou_threshold: f64,
    class_aware: bool,
) -> MatchResult {
    let table = IouTable::new(preds, gts);
    match_with_table(preds, gts, &table, iou_threshold, class_aware)
}
