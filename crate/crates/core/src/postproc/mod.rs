//! The four-stage exclusion pipeline.
//!
//! Stages run in a fixed order on the model predictions of one image:
//!
//! 1. score below `score_threshold`;
//! 2. the less likely member of a cross-class pair with IoU at or above
//!    `dup_iou_threshold` (the survivor is flagged unsure);
//! 3. no pixel inside the dish ellipse shrunk by `ellipse_shrink`;
//! 4. area outside the central `laplace_ci` band of a Laplace fit on the
//!    areas of the instances still kept.
//!
//! Exclusion is a flag with a reason. Geometry, labels and scores are never
//! touched, so reviewers can restore anything the pipeline removed.

mod laplace;

pub use laplace::{fit_laplace, laplace_band, laplace_quantile, LaplaceParams};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{instance_iou, instance_touches_ellipse, shrink_ellipse, EllipseModel};
use crate::model::{ClassLabel, ExclusionReason, ImageId, ImageRecord, Instance, Origin};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PostProcError {
    #[error("invalid config: {field} = {value} ({reason})")]
    InvalidConfig { field: &'static str, value: f64, reason: &'static str },
    #[error("image {0} has no dish ellipse")]
    MissingEllipse(ImageId),
    #[error("Laplace fit needs at least 2 areas, got {0}")]
    LaplaceTooFew(usize),
    #[error("Laplace fit on identical areas")]
    LaplaceZeroDeviation,
    #[error("Laplace fit on non-finite areas")]
    LaplaceNonFinite,
    #[error("quantile level {0} outside (0, 1)")]
    QuantileOutOfRange(f64),
}

/// Parameters of the four filters. Defaults are the published settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostProcConfig {
    pub score_threshold: f64,
    pub dup_iou_threshold: f64,
    pub ellipse_shrink: f64,
    pub laplace_ci: f64,
    pub min_instances_for_area_filter: usize,
}

impl Default for PostProcConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.70,
            dup_iou_threshold: 0.70,
            ellipse_shrink: 0.98,
            laplace_ci: 0.99,
            min_instances_for_area_filter: 5,
        }
    }
}

impl PostProcConfig {
    pub fn validate(&self) -> Result<(), PostProcError> {
        let unit = |field, value: f64| {
            if value > 0.0 && value <= 1.0 {
                Ok(())
            } else {
                Err(PostProcError::InvalidConfig { field, value, reason: "must be in (0, 1]" })
            }
        };
        // A zero score threshold disables stage 1.
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(PostProcError::InvalidConfig {
                field: "score_threshold",
                value: self.score_threshold,
                reason: "must be in [0, 1]",
            });
        }
        unit("dup_iou_threshold", self.dup_iou_threshold)?;
        unit("ellipse_shrink", self.ellipse_shrink)?;
        if !(self.laplace_ci > 0.0 && self.laplace_ci < 1.0) {
            return Err(PostProcError::InvalidConfig {
                field: "laplace_ci",
                value: self.laplace_ci,
                reason: "must be in (0, 1)",
            });
        }
        if self.min_instances_for_area_filter < 3 {
            return Err(PostProcError::InvalidConfig {
                field: "min_instances_for_area_filter",
                value: self.min_instances_for_area_filter as f64,
                reason: "must be at least 3",
            });
        }
        Ok(())
    }

    /// Parameter tuple used for lexicographic tie-breaks.
    pub fn key(&self) -> [f64; 4] {
        [self.score_threshold, self.dup_iou_threshold, self.ellipse_shrink, self.laplace_ci]
    }
}

/// Model predictions the pipeline may still exclude.
fn eligible(inst: &Instance) -> bool {
    inst.origin == Origin::Model && inst.excluded.is_none() && !inst.restored
}

/// Kept model predictions; the population for the area fit.
fn kept_model(inst: &Instance) -> bool {
    inst.origin == Origin::Model && inst.excluded.is_none()
}

/// Stage 1: strict `score < threshold`.
pub fn filter_by_score(instances: &mut [Instance], cfg: &PostProcConfig) {
    for inst in instances.iter_mut().filter(|i| eligible(i)) {
        if inst.score < cfg.score_threshold {
            inst.excluded = Some(ExclusionReason::BelowScoreThreshold);
        }
    }
}

/// Stage 2: cross-class duplicates.
///
/// Candidate pairs (different labels, IoU ≥ threshold) are processed by
/// descending IoU, ties by ascending id pair. A pair is skipped once either
/// member is excluded. The lower score loses; on equal scores BVG+ is kept.
/// The survivor is flagged unsure with the loser's label as alternative.
pub fn resolve_cross_class_duplicates(instances: &mut [Instance], cfg: &PostProcConfig) {
    let idx: Vec<usize> = (0..instances.len()).filter(|&i| eligible(&instances[i])).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (n, &i) in idx.iter().enumerate() {
        for &j in &idx[n + 1..] {
            let (p, q) = (&instances[i], &instances[j]);
            if p.label == q.label || p.bbox.intersection_area(&q.bbox) <= 0.0 {
                continue;
            }
            let iou = instance_iou(p, q);
            if iou >= cfg.dup_iou_threshold {
                let (a, b) = if p.id <= q.id { (i, j) } else { (j, i) };
                pairs.push((iou, a, b));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then_with(|| instances[x.1].id.cmp(&instances[y.1].id))
            .then_with(|| instances[x.2].id.cmp(&instances[y.2].id))
    });

    let mut marked = Vec::new();
    for (_, a, b) in pairs {
        if instances[a].excluded.is_some() || instances[b].excluded.is_some() {
            continue;
        }
        let (sa, sb) = (instances[a].score, instances[b].score);
        let a_wins = if sa != sb { sa > sb } else { instances[a].label == ClassLabel::BvgPlus };
        let (winner, loser) = if a_wins { (a, b) } else { (b, a) };
        let loser_label = instances[loser].label;
        instances[loser].excluded = Some(ExclusionReason::CrossClassDuplicate);
        instances[winner].unsure = true;
        instances[winner].alt_label = Some(loser_label);
        marked.push(winner);
    }
    // A survivor of one pair can lose a later one; only kept instances stay
    // flagged.
    for i in marked {
        if instances[i].excluded.is_some() {
            instances[i].unsure = false;
            instances[i].alt_label = None;
        }
    }
}

/// Stage 3: exclude instances with no pixel inside the shrunken dish.
///
/// Fails only when there is something to test and no ellipse to test it on.
pub fn filter_by_dish(
    image: ImageId,
    instances: &mut [Instance],
    ellipse: Option<&EllipseModel>,
    cfg: &PostProcConfig,
) -> Result<(), PostProcError> {
    if !instances.iter().any(eligible) {
        return Ok(());
    }
    let ellipse = ellipse.ok_or(PostProcError::MissingEllipse(image))?;
    let shrunk = shrink_ellipse(ellipse, cfg.ellipse_shrink);
    for inst in instances.iter_mut().filter(|i| eligible(i)) {
        if !instance_touches_ellipse(inst, &shrunk) {
            inst.excluded = Some(ExclusionReason::OutsideDish);
        }
    }
    Ok(())
}

/// Stage 4: Laplace area outliers. Skipped (returns `None`) when fewer than
/// `min_instances_for_area_filter` instances are kept or the fit fails.
pub fn filter_area_outliers(
    instances: &mut [Instance],
    cfg: &PostProcConfig,
) -> Option<LaplaceParams> {
    let areas: Vec<f64> = instances.iter().filter(|i| kept_model(i)).map(Instance::area).collect();
    if areas.len() < cfg.min_instances_for_area_filter {
        return None;
    }
    let params = fit_laplace(&areas).ok()?;
    let (lo, hi) = laplace_band(&params, cfg.laplace_ci).ok()?;
    for inst in instances.iter_mut().filter(|i| eligible(i)) {
        let area = inst.area();
        if area < lo || area > hi {
            inst.excluded = Some(ExclusionReason::AreaOutlier);
        }
    }
    Some(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub instances: Vec<Instance>,
    pub laplace: Option<LaplaceParams>,
    pub ellipse_used: Option<EllipseModel>,
}

impl PipelineResult {
    pub fn kept(&self) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(|i| i.is_kept())
    }

    pub fn excluded(&self) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(|i| !i.is_kept())
    }

    pub fn reason_counts(&self) -> ReasonCounts {
        ReasonCounts::tally(&self.instances)
    }
}

/// Number of instances per exclusion reason, plus kept and unsure counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonCounts {
    pub kept: usize,
    pub unsure: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
}

impl ReasonCounts {
    pub fn tally<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Self {
        let mut out = ReasonCounts::default();
        for r in ExclusionReason::ALL {
            out.excluded.insert(r, 0);
        }
        for inst in instances {
            match inst.excluded {
                Some(r) => *out.excluded.entry(r).or_default() += 1,
                None => {
                    out.kept += 1;
                    if inst.unsure {
                        out.unsure += 1;
                    }
                }
            }
        }
        out
    }

    pub fn merge(&mut self, other: &ReasonCounts) {
        self.kept += other.kept;
        self.unsure += other.unsure;
        for (r, n) in &other.excluded {
            *self.excluded.entry(*r).or_default() += n;
        }
    }

    pub fn get(&self, r: ExclusionReason) -> usize {
        self.excluded.get(&r).copied().unwrap_or(0)
    }
}

/// Clears everything an earlier pipeline run or review set on model
/// predictions, except user deletions.
fn reset_pipeline_flags(instances: &mut [Instance]) {
    for inst in instances.iter_mut() {
        if inst.origin != Origin::Model || inst.excluded == Some(ExclusionReason::UserDeleted) {
            continue;
        }
        inst.excluded = None;
        inst.unsure = false;
        inst.alt_label = None;
        inst.validated = false;
        inst.restored = false;
    }
}

/// Runs stages 1 to 4 in order on the predictions of one image.
///
/// Instances not of model origin pass through untouched.
pub fn run_pipeline(
    image: &ImageRecord,
    mut instances: Vec<Instance>,
    cfg: &PostProcConfig,
) -> Result<PipelineResult, PostProcError> {
    cfg.validate()?;
    reset_pipeline_flags(&mut instances);
    filter_by_score(&mut instances, cfg);
    resolve_cross_class_duplicates(&mut instances, cfg);
    filter_by_dish(image.id, &mut instances, image.dish_ellipse.as_ref(), cfg)?;
    let laplace = filter_area_outliers(&mut instances, cfg);
    Ok(PipelineResult { instances, laplace, ellipse_used: image.dish_ellipse })
}

/// Recomputes stages 3 and 4 after the dish ellipse changed. Stage 1 and 2
/// outcomes, unsure flags and reviewer restores are kept.
pub fn rerun_dish_and_area(
    image: &ImageRecord,
    mut instances: Vec<Instance>,
    cfg: &PostProcConfig,
) -> Result<PipelineResult, PostProcError> {
    cfg.validate()?;
    for inst in instances.iter_mut().filter(|i| i.origin == Origin::Model) {
        if matches!(
            inst.excluded,
            Some(ExclusionReason::OutsideDish | ExclusionReason::AreaOutlier)
        ) {
            inst.excluded = None;
        }
    }
    filter_by_dish(image.id, &mut instances, image.dish_ellipse.as_ref(), cfg)?;
    let laplace = filter_area_outliers(&mut instances, cfg);
    Ok(PipelineResult { instances, laplace, ellipse_used: image.dish_ellipse })
}
