//! Confusion matrix with Missed and Invented cells.

use serde::{Deserialize, Serialize};

use super::matching::greedy_assign;
use super::{EvalConfig, PreparedImage};
use crate::model::ClassLabel;

/// Column index of the Missed cell in an actual row.
pub const MISSED: usize = 2;

/// Rows: BVG- actual, BVG+ actual; columns: BVG- predicted, BVG+ predicted,
/// Missed. The Invented row has the two predicted columns only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub actual: [[u64; 3]; 2],
    pub invented: [u64; 2],
}

impl ConfusionMatrix {
    pub fn row_total(&self, class: ClassLabel) -> u64 {
        self.actual[class.index()].iter().sum()
    }

    pub fn invented_total(&self) -> u64 {
        self.invented.iter().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for r in 0..2 {
            for c in 0..3 {
                self.actual[r][c] += other.actual[r][c];
            }
            self.invented[r] += other.invented[r];
        }
    }
}

/// Row percentages; a row with no entries is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedConfusion {
    pub actual: [Option<[f64; 3]>; 2],
    pub invented: Option<[f64; 2]>,
}

/// Class-agnostic matching at `match_iou_for_confusion`, tabulated per
/// image and summed.
pub fn confusion_matrix(images: &[PreparedImage], cfg: &EvalConfig) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for img in images {
        let assign =
            greedy_assign(&img.preds, &img.gts, &img.table, cfg.match_iou_for_confusion, false);
        let mut gt_used = vec![false; img.gts.len()];
        for (p, a) in img.preds.iter().zip(assign) {
            match a {
                Some(g) => {
                    gt_used[g] = true;
                    m.actual[img.gts[g].label.index()][p.label.index()] += 1;
                }
                None => m.invented[p.label.index()] += 1,
            }
        }
        for (g, used) in img.gts.iter().zip(gt_used) {
            if !used {
                m.actual[g.label.index()][MISSED] += 1;
            }
        }
    }
    m
}

fn scale<const N: usize>(row: [u64; N]) -> Option<[f64; N]> {
    let total: u64 = row.iter().sum();
    (total > 0).then(|| row.map(|v| 100.0 * v as f64 / total as f64))
}

pub fn normalize_confusion(m: &ConfusionMatrix) -> NormalizedConfusion {
    NormalizedConfusion {
        actual: [scale(m.actual[0]), scale(m.actual[1])],
        invented: scale(m.invented),
    }
}

/// One-decimal rounding used when printing percentages.
pub fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}
