//! Ingestion, persistence and the review edit log.

mod events;
mod interchange;
mod repo;

pub use events::{replay, EditAction, EditError, EditEvent, Snapshot, Timestamp};
pub use interchange::{
    dataset_to_doc, decode_segmentation, default_categories, doc_to_dataset, instance_to_entry, load_interchange, parse_dataset, parse_doc,
    rasterize_polygons, save_interchange, to_json, AnnotationEntry, Category, ImageEntry, Info,
    InterchangeDoc, InterchangeError, RleSegmentation, Segmentation,
};
pub use repo::{Store, StoreError};

use std::collections::BTreeMap;

use std::fmt::Write as _;

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{estimate_dish_ellipse, EllipseModel};
use crate::model::{Dataset, ExclusionReason, ImageId, ImageRecord};
use crate::postproc::{PostProcConfig, ReasonCounts};

/// Dish ellipses estimated from pixels for images that have none. Images
/// without pixels are listed separately.
pub fn fit_missing_ellipses(
    ds: &Dataset,
    pixels: impl Fn(&ImageRecord) -> Option<GrayImage> + Sync,
) -> (BTreeMap<ImageId, EllipseModel>, Vec<ImageId>) {
    let results: Vec<(ImageId, Option<EllipseModel>)> = ds
        .images
        .par_iter()
        .filter(|i| i.dish_ellipse.is_none())
        .map(|i| (i.id, pixels(i).map(|g| estimate_dish_ellipse(&g, None).ellipse)))
        .collect();
    let mut fitted = BTreeMap::new();
    let mut missing = Vec::new();
    for (id, e) in results {
        match e {
            Some(e) => {
                fitted.insert(id, e);
            }
            None => missing.push(id),
        }
    }
    (fitted, missing)
}

/// Pipeline event for `ds`, fitting ellipses where pixels allow.
pub fn pipeline_action(
    ds: &Dataset,
    config: PostProcConfig,
    pixels: impl Fn(&ImageRecord) -> Option<GrayImage> + Sync,
) -> EditAction {
    let (fitted_ellipses, _) = fit_missing_ellipses(ds, pixels);
    EditAction::ApplyPipeline { config, fitted_ellipses }
}

/// Kept, unsure and per-reason exclusion counts over all predictions.
pub fn summarize(ds: &Dataset) -> ReasonCounts {
    ReasonCounts::tally(&ds.predictions)
}

/// Outcome of a pipeline run over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub config: PostProcConfig,
    pub totals: ReasonCounts,
    pub per_image: BTreeMap<ImageId, ReasonCounts>,
    /// Images whose dish ellipse was estimated from pixels for this run.
    pub fitted_ellipses: Vec<ImageId>,
}

impl PipelineSummary {
    pub fn new(ds: &Dataset, config: PostProcConfig, fitted_ellipses: Vec<ImageId>) -> Self {
        let per_image = ds
            .images
            .iter()
            .map(|img| (img.id, ReasonCounts::tally(ds.predictions_for(img.id))))
            .collect();
        Self { config, totals: summarize(ds), per_image, fitted_ellipses }
    }

    pub fn render_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let reasons: Vec<ExclusionReason> = ExclusionReason::ALL.to_vec();
        let _ = write!(out, "{:>10}{:>8}{:>8}", "image", "kept", "unsure");
        for r in &reasons {
            let _ = write!(out, "{:>24}", r.as_str());
        }
        out.push('\n');
        let mut line = |name: String, c: &ReasonCounts| {
            let _ = write!(out, "{name:>10}{:>8}{:>8}", c.kept, c.unsure);
            for r in &reasons {
                let _ = write!(out, "{:>24}", c.get(*r));
            }
            out.push('\n');
        };
        for (id, c) in &self.per_image {
            line(id.to_string(), c);
        }
        line("total".into(), &self.totals);
        if !self.fitted_ellipses.is_empty() {
            let ids: Vec<String> = self.fitted_ellipses.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "dish ellipse estimated from pixels for images {}", ids.join(", "));
        }
        out
    }
}
