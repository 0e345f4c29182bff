//! Count-level error: mean absolute percentage error of per-image counts.

use serde::{Deserialize, Serialize};

use super::PreparedImage;
use crate::model::{ClassLabel, ImageId};

/// Ground-truth and kept-prediction counts of one image, indexed by
/// `ClassLabel::index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCounts {
    pub image_id: ImageId,
    pub gt: [u64; 2],
    pub pred: [u64; 2],
}

impl ImageCounts {
    fn pick(counts: &[u64; 2], filter: Option<ClassLabel>) -> u64 {
        match filter {
            Some(c) => counts[c.index()],
            None => counts[0] + counts[1],
        }
    }

    pub fn gt_for(&self, filter: Option<ClassLabel>) -> u64 {
        Self::pick(&self.gt, filter)
    }

    pub fn pred_for(&self, filter: Option<ClassLabel>) -> u64 {
        Self::pick(&self.pred, filter)
    }
}

pub fn image_counts(images: &[PreparedImage]) -> Vec<ImageCounts> {
    images
        .iter()
        .map(|img| {
            let mut c = ImageCounts { image_id: img.image_id, gt: [0; 2], pred: [0; 2] };
            for g in &img.gts {
                c.gt[g.label.index()] += 1;
            }
            for p in &img.preds {
                c.pred[p.label.index()] += 1;
            }
            c
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapeResult {
    /// Percent; `None` when every image was skipped.
    pub value: Option<f64>,
    pub images_used: usize,
    /// Images with a zero reference count.
    pub skipped: Vec<ImageId>,
}

/// MAPE of `(image, reference, other)` triples. Per-image mode averages
/// `100·|other − reference| / reference`; pooled mode compares the sums.
pub fn mape_of(pairs: impl IntoIterator<Item = (ImageId, u64, u64)>, pooled: bool) -> MapeResult {
    let mut skipped = Vec::new();
    let mut terms = Vec::new();
    let (mut sum_ref, mut sum_other) = (0u64, 0u64);
    for (id, reference, other) in pairs {
        if reference == 0 {
            skipped.push(id);
            continue;
        }
        sum_ref += reference;
        sum_other += other;
        terms.push(100.0 * (other as f64 - reference as f64).abs() / reference as f64);
    }
    if !skipped.is_empty() {
        tracing::info!(skipped = skipped.len(), "images with zero reference count skipped in MAPE");
    }
    let value = if terms.is_empty() {
        None
    } else if pooled {
        Some(100.0 * (sum_other as f64 - sum_ref as f64).abs() / sum_ref as f64)
    } else {
        Some(terms.iter().sum::<f64>() / terms.len() as f64)
    };
    MapeResult { value, images_used: terms.len(), skipped }
}

/// Prediction-vs-ground-truth MAPE for one class, or the total when
/// `class_filter` is `None`.
pub fn mape_counts(counts: &[ImageCounts], class_filter: Option<ClassLabel>, pooled: bool) -> MapeResult {
    mape_of(
        counts.iter().map(|c| (c.image_id, c.gt_for(class_filter), c.pred_for(class_filter))),
        pooled,
    )
}
