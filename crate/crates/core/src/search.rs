//! Exhaustive grid search over post-processing parameters.
//!
//! Each configuration is scored on the train and validation images by the
//! mean of the total and BVG+ count MAPEs. Lower wins; ties go to the higher
//! mAP at IoU 0.5, then to the lexicographically smaller parameter tuple.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{
    image_counts, mape_counts, mean_average_precision, EvalConfig, PreparedImage,
};
use crate::model::{ClassLabel, Dataset, Split};
use crate::postproc::{run_pipeline, PostProcConfig, PostProcError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("search space is empty")]
    EmptySpace,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("no train or validation images with ground truth")]
    NoImages,
    #[error(transparent)]
    PostProc(#[from] PostProcError),
    #[error("objective undefined for every configuration")]
    UndefinedObjective,
}

/// Candidate values per parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub score_threshold: Vec<f64>,
    pub dup_iou_threshold: Vec<f64>,
    pub ellipse_shrink: Vec<f64>,
    pub laplace_ci: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            score_threshold: vec![0.6, 0.65, 0.7, 0.75, 0.8],
            dup_iou_threshold: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            ellipse_shrink: vec![0.94, 0.96, 0.98, 1.0],
            laplace_ci: vec![0.95, 0.98, 0.99, 0.995, 0.999],
        }
    }
}

fn dedup_sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl SearchSpace {
    pub fn single(cfg: &PostProcConfig) -> Self {
        Self {
            score_threshold: vec![cfg.score_threshold],
            dup_iou_threshold: vec![cfg.dup_iou_threshold],
            ellipse_shrink: vec![cfg.ellipse_shrink],
            laplace_ci: vec![cfg.laplace_ci],
        }
    }

    /// Every combination, built on `base` for the parameters not searched.
    pub fn configs(&self, base: &PostProcConfig) -> Result<Vec<PostProcConfig>, SearchError> {
        let lists = [
            &self.score_threshold,
            &self.dup_iou_threshold,
            &self.ellipse_shrink,
            &self.laplace_ci,
        ];
        if lists.iter().any(|l| l.is_empty()) {
            return Err(SearchError::EmptySpace);
        }
        let mut out = Vec::new();
        for &s in &dedup_sorted(&self.score_threshold) {
            for &d in &dedup_sorted(&self.dup_iou_threshold) {
                for &e in &dedup_sorted(&self.ellipse_shrink) {
                    for &c in &dedup_sorted(&self.laplace_ci) {
                        let cfg = PostProcConfig {
                            score_threshold: s,
                            dup_iou_threshold: d,
                            ellipse_shrink: e,
                            laplace_ci: c,
                            ..*base
                        };
                        cfg.validate().map_err(|e| SearchError::InvalidSpace(e.to_string()))?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub config: PostProcConfig,
    pub objective: Option<f64>,
    pub mape_total: Option<f64>,
    pub mape_bvg_plus: Option<f64>,
    pub map_at_50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_config: PostProcConfig,
    pub objective: f64,
    /// Every evaluated configuration, best first.
    pub table: Vec<SearchRow>,
}

fn rank(a: &SearchRow, b: &SearchRow) -> Ordering {
    let obj = |r: &SearchRow| r.objective.unwrap_or(f64::INFINITY);
    let map = |r: &SearchRow| r.map_at_50.unwrap_or(f64::NEG_INFINITY);
    obj(a)
        .total_cmp(&obj(b))
        .then_with(|| map(b).total_cmp(&map(a)))
        .then_with(|| {
            a.config
                .key()
                .iter()
                .zip(b.config.key())
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Runs the pipeline with `cfg` on the given images and scores the result.
pub fn evaluate_config(
    ds: &Dataset,
    images: &[&crate::model::ImageRecord],
    cfg: &PostProcConfig,
) -> Result<SearchRow, SearchError> {
    let mut prepared = Vec::with_capacity(images.len());
    for img in images {
        let mut preds: Vec<_> = ds.predictions_for(img.id).cloned().collect();
        preds.sort_by_key(|p| p.id);
        let result = run_pipeline(img, preds, cfg)?;
        let mut gts: Vec<_> = ds.ground_truth_for(img.id).cloned().collect();
        gts.sort_by_key(|g| g.id);
        prepared.push(PreparedImage::new(img.id, result.instances, gts));
    }
    let counts = image_counts(&prepared);
    let mape_total = mape_counts(&counts, None, false).value;
    let mape_bvg_plus = mape_counts(&counts, Some(ClassLabel::BvgPlus), false).value;
    let objective = match (mape_total, mape_bvg_plus) {
        (Some(t), Some(p)) => Some((t + p) / 2.0),
        _ => None,
    };
    let eval = EvalConfig { iou_thresholds: vec![0.5], ..EvalConfig::default() };
    let map_at_50 = mean_average_precision(&prepared, &eval).map_avg;
    Ok(SearchRow { config: *cfg, objective, mape_total, mape_bvg_plus, map_at_50 })
}

/// Evaluates the whole Cartesian product on the train and validation
/// images. The result depends neither on the order of values in `space`
/// nor on the order of images and instances in `ds`.
pub fn grid_search(
    ds: &Dataset,
    space: &SearchSpace,
    base: &PostProcConfig,
) -> Result<SearchResult, SearchError> {
    let configs = space.configs(base)?;
    let mut images: Vec<_> = ds
        .images
        .iter()
        .filter(|i| matches!(i.split, Split::Train | Split::Val))
        .filter(|i| ds.ground_truth_for(i.id).next().is_some())
        .collect();
    if images.is_empty() {
        return Err(SearchError::NoImages);
    }
    images.sort_by_key(|i| i.id);
    let mut table = configs
        .par_iter()
        .map(|cfg| evaluate_config(ds, &images, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    table.sort_by(rank);
    let best = &table[0];
    let objective = best.objective.ok_or(SearchError::UndefinedObjective)?;
    Ok(SearchResult { best_config: best.config, objective, table })
}

pub const TABLE_HEADER: [&str; 8] = [
    "score_threshold",
    "dup_iou_threshold",
    "ellipse_shrink",
    "laplace_ci",
    "objective",
    "mape_total",
    "mape_bvg_plus",
    "map_at_50",
];

/// Result table as delimited text, best configuration first. Undefined
/// values are empty fields.
pub fn render_table_csv(result: &SearchResult) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_HEADER).expect("in-memory write");
    for r in &result.table {
        let c = &r.config;
        w.write_record([
            c.score_threshold.to_string(),
            c.dup_iou_threshold.to_string(),
            c.ellipse_shrink.to_string(),
            c.laplace_ci.to_string(),
            opt(r.objective),
            opt(r.mape_total),
            opt(r.mape_bvg_plus),
            opt(r.map_at_50),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
