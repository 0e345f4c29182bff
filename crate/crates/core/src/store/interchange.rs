//! Interchange documents: the JSON file format used to move datasets in and
//! out of the store.
//!
//! ```text
//! {
//!   "info":        { "dataset_id": "ds1", "name": "plates" },        optional
//!   "images":      [ { "id", "width", "height", "file_name"?, "split"?,
//!                      "dish_ellipse"?, "ellipse_source"? } ],
//!   "categories":  [ { "id": 1, "name": "BVG-" }, { "id": 2, "name": "BVG+" } ],
//!   "annotations": [ ground truth ],
//!   "predictions": [ model or user detections ]
//! }
//! ```
//!
//! An annotation carries `id`, `image_id`, `category_id`, `bbox` as
//! `[x, y, w, h]` and an optional `segmentation`, which is either
//! `{ "counts": [...], "size": [h, w] }` (uncompressed column-major RLE,
//! background first) or a list of polygons `[[x0, y0, x1, y1, ...], ...]`.
//! Polygons are rasterized by pixel-center inclusion (even-odd rule). When a
//! segmentation is present the box is taken from the mask.
//!
//! Predictions add `score` and the review state: `unsure`,
//! `alt_category_id`, `excluded`, `origin` (`model` or `user`), `validated`
//! and `restored`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, EllipseModel, RleMask};
use crate::model::{
    validate_dataset, ClassLabel, Dataset, EllipseSource, Entity, ExclusionReason, ImageId,
    ImageRecord, Instance, InstanceId, Origin, Split,
};

/// Schema or semantic problem, located by a JSON path such as
/// `annotations[3].segmentation`.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct InterchangeError {
    pub path: String,
    pub message: String,
}

impl InterchangeError {
    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Info {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageEntry {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dish_ellipse: Option<EllipseModel>,
    #[serde(default)]
    pub ellipse_source: EllipseSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleSegmentation {
    pub counts: Vec<u32>,
    /// `[height, width]`.
    pub size: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Rle(RleSegmentation),
    Polygons(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEntry {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    /// Written for readers' convenience; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unsure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_category_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<ExclusionReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub validated: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub restored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterchangeDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<Info>,
    pub images: Vec<ImageEntry>,
    #[serde(default = "default_categories")]
    pub categories: Vec<Category>,
    #[serde(default)]
    pub annotations: Vec<AnnotationEntry>,
    #[serde(default)]
    pub predictions: Vec<AnnotationEntry>,
}

pub fn default_categories() -> Vec<Category> {
    ClassLabel::ALL
        .iter()
        .map(|c| Category { id: c.category_id(), name: c.name().to_string() })
        .collect()
}

/// Parses a document, reporting the JSON path of the first schema error.
pub fn parse_doc(text: &str) -> Result<InterchangeDoc, InterchangeError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        InterchangeError::at(path, e.into_inner().to_string())
    })
}

pub fn parse_dataset(text: &str) -> Result<Dataset, InterchangeError> {
    doc_to_dataset(&parse_doc(text)?)
}

/// Reads an interchange file.
pub fn load_interchange(path: &Path) -> Result<Dataset, InterchangeError> {
    let text = fs::read_to_string(path)
        .map_err(|e| InterchangeError::at(path.display().to_string(), e.to_string()))?;
    parse_dataset(&text)
}

/// Writes `ds` as an interchange file.
pub fn save_interchange(ds: &Dataset, path: &Path) -> std::io::Result<()> {
    fs::write(path, to_json(ds))
}

/// Pretty JSON with a trailing newline.
pub fn to_json(ds: &Dataset) -> String {
    let mut s = serde_json::to_string_pretty(&dataset_to_doc(ds)).expect("document serializes");
    s.push('\n');
    s
}

/// Pixel-center inclusion of the union of `polygons` (even-odd rule within
/// each polygon). Coordinates are `[x0, y0, x1, y1, ...]` in pixel units.
pub fn rasterize_polygons(width: u32, height: u32, polygons: &[Vec<f64>]) -> RleMask {
    let polys: Vec<Vec<(f64, f64)>> = polygons
        .iter()
        .map(|p| p.chunks_exact(2).map(|c| (c[0], c[1])).collect())
        .collect();
    // Column spans from scanline crossings on each pixel-center column.
    let mut inside = vec![false; width as usize * height as usize];
    let h = height as usize;
    for poly in polys.iter().filter(|p| p.len() >= 3) {
        for x in 0..width {
            let px = x as f64 + 0.5;
            let mut ys: Vec<f64> = Vec::new();
            for k in 0..poly.len() {
                let (x0, y0) = poly[k];
                let (x1, y1) = poly[(k + 1) % poly.len()];
                if (x0 > px) != (x1 > px) {
                    ys.push(y0 + (px - x0) * (y1 - y0) / (x1 - x0));
                }
            }
            ys.sort_by(f64::total_cmp);
            for pair in ys.chunks_exact(2) {
                // Centers strictly between the two crossings.
                let lo = (pair[0] - 0.5).floor() as i64 + 1;
                let hi = (pair[1] - 0.5).ceil() as i64 - 1;
                for y in lo.max(0)..=hi.min(height as i64 - 1) {
                    inside[x as usize * h + y as usize] = true;
                }
            }
        }
    }
    RleMask::from_column_major(width, height, &inside)
}

fn segmentation_to_mask(
    seg: &Segmentation,
    img: &ImageEntry,
    path: &str,
) -> Result<RleMask, InterchangeError> {
    match seg {
        Segmentation::Rle(r) => {
            if r.size != [img.height, img.width] {
                return Err(InterchangeError::at(
                    format!("{path}.size"),
                    format!("mask size {:?} differs from image size [{}, {}]", r.size, img.height, img.width),
                ));
            }
            RleMask::new(img.width, img.height, r.counts.clone())
                .map_err(|e| InterchangeError::at(format!("{path}.counts"), e.to_string()))
        }
        Segmentation::Polygons(p) => {
            for (k, poly) in p.iter().enumerate() {
                if poly.len() < 6 || poly.len() % 2 == 1 {
                    return Err(InterchangeError::at(
                        format!("{path}[{k}]"),
                        "polygon needs an even number of at least 6 coordinates",
                    ));
                }
                if poly.iter().any(|v| !v.is_finite()) {
                    return Err(InterchangeError::at(format!("{path}[{k}]"), "non-finite coordinate"));
                }
            }
            Ok(rasterize_polygons(img.width, img.height, p))
        }
    }
}

/// Decodes a segmentation for an image of the given size.
pub fn decode_segmentation(s: &Segmentation, width: u32, height: u32, path: &str) -> Result<RleMask, InterchangeError> {
    let img = ImageEntry {
        id: 0,
        width,
        height,
        file_name: None,
        split: Split::Unsplit,
        dish_ellipse: None,
        ellipse_source: EllipseSource::None,
    };
    segmentation_to_mask(s, &img, path)
}

fn entry_to_instance(
    a: &AnnotationEntry,
    images: &[ImageEntry],
    path: &str,
    is_gt: bool,
) -> Result<Instance, InterchangeError> {
    let label = ClassLabel::from_category_id(a.category_id).ok_or_else(|| {
        InterchangeError::at(format!("{path}.category_id"), format!("unknown category {}", a.category_id))
    })?;
    let img = images.iter().find(|i| i.id == a.image_id).ok_or_else(|| {
        InterchangeError::at(format!("{path}.image_id"), format!("unknown image {}", a.image_id))
    })?;
    let mask = match &a.segmentation {
        Some(s) => Some(segmentation_to_mask(s, img, &format!("{path}.segmentation"))?),
        None => None,
    };
    let bbox = match (&mask, a.bbox) {
        (Some(m), _) => m.tight_bbox().ok_or_else(|| {
            InterchangeError::at(format!("{path}.segmentation"), "mask has no foreground pixels")
        })?,
        (None, Some([x, y, w, h])) => BBox::from_xywh(x, y, w, h),
        (None, None) => {
            return Err(InterchangeError::at(path.to_string(), "needs a bbox or a segmentation"));
        }
    };
    let origin = match (is_gt, a.origin) {
        (true, None | Some(Origin::GroundTruth)) => Origin::GroundTruth,
        (false, None) => Origin::Model,
        (false, Some(o @ (Origin::Model | Origin::User))) => o,
        (_, Some(o)) => {
            return Err(InterchangeError::at(
                format!("{path}.origin"),
                format!("origin {o:?} not allowed in this list"),
            ));
        }
    };
    let score = match (origin, a.score) {
        (Origin::Model, None) => {
            return Err(InterchangeError::at(format!("{path}.score"), "model predictions need a score"));
        }
        (_, s) => s.unwrap_or(1.0),
    };
    let alt_label = match a.alt_category_id {
        Some(c) => Some(ClassLabel::from_category_id(c).ok_or_else(|| {
            InterchangeError::at(format!("{path}.alt_category_id"), format!("unknown category {c}"))
        })?),
        None => None,
    };
    Ok(Instance {
        id: InstanceId(a.id),
        image_id: ImageId(a.image_id),
        label,
        score,
        bbox,
        mask,
        unsure: a.unsure,
        alt_label,
        origin,
        excluded: a.excluded,
        validated: a.validated,
        restored: a.restored,
    })
}

/// Converts a parsed document and checks every dataset invariant.
pub fn doc_to_dataset(doc: &InterchangeDoc) -> Result<Dataset, InterchangeError> {
    for (k, c) in doc.categories.iter().enumerate() {
        match ClassLabel::from_category_id(c.id) {
            Some(l) if l.name() == c.name => {}
            _ => {
                return Err(InterchangeError::at(
                    format!("categories[{k}]"),
                    "categories are fixed to 1 = BVG- and 2 = BVG+",
                ));
            }
        }
    }
    let mut ds = Dataset::default();
    if let Some(info) = &doc.info {
        ds.id = info.dataset_id.clone().unwrap_or_default();
        ds.name = info.name.clone().unwrap_or_default();
    }
    for img in &doc.images {
        ds.images.push(ImageRecord {
            id: ImageId(img.id),
            width: img.width,
            height: img.height,
            pixel_data_ref: img.file_name.clone(),
            dish_ellipse: img.dish_ellipse,
            ellipse_source: img.ellipse_source,
            split: img.split,
        });
    }
    for (k, a) in doc.annotations.iter().enumerate() {
        ds.ground_truth.push(entry_to_instance(a, &doc.images, &format!("annotations[{k}]"), true)?);
    }
    for (k, a) in doc.predictions.iter().enumerate() {
        ds.predictions.push(entry_to_instance(a, &doc.images, &format!("predictions[{k}]"), false)?);
    }
    if let Some(v) = validate_dataset(&ds).into_iter().next() {
        let path = match v.entity {
            Entity::Image(id) => {
                format!("images[{}]", ds.images.iter().position(|i| i.id == id).unwrap_or(0))
            }
            Entity::Instance(id) => match ds.ground_truth.iter().position(|i| i.id == id) {
                Some(k) => format!("annotations[{k}]"),
                None => format!(
                    "predictions[{}]",
                    ds.predictions.iter().rposition(|i| i.id == id).unwrap_or(0)
                ),
            },
        };
        return Err(InterchangeError::at(path, v.kind.message()));
    }
    Ok(ds)
}

/// Interchange form of one instance.
pub fn instance_to_entry(i: &Instance, is_gt: bool) -> AnnotationEntry {
    AnnotationEntry {
        id: i.id.0,
        image_id: i.image_id.0,
        category_id: i.label.category_id(),
        bbox: Some(i.bbox.to_xywh()),
        segmentation: i.mask.as_ref().map(|m| {
            Segmentation::Rle(RleSegmentation { counts: m.counts.clone(), size: [m.height, m.width] })
        }),
        area: Some(i.area()),
        score: (!is_gt).then_some(i.score),
        unsure: i.unsure,
        alt_category_id: i.alt_label.map(ClassLabel::category_id),
        excluded: i.excluded,
        origin: (!is_gt && i.origin != Origin::Model).then_some(i.origin),
        validated: i.validated,
        restored: i.restored,
    }
}

pub fn dataset_to_doc(ds: &Dataset) -> InterchangeDoc {
    let info = (!ds.id.is_empty() || !ds.name.is_empty()).then(|| Info {
        dataset_id: (!ds.id.is_empty()).then(|| ds.id.clone()),
        name: (!ds.name.is_empty()).then(|| ds.name.clone()),
    });
    InterchangeDoc {
        info,
        images: ds
            .images
            .iter()
            .map(|i| ImageEntry {
                id: i.id.0,
                width: i.width,
                height: i.height,
                file_name: i.pixel_data_ref.clone(),
                split: i.split,
                dish_ellipse: i.dish_ellipse,
                ellipse_source: i.ellipse_source,
            })
            .collect(),
        categories: default_categories(),
        annotations: ds.ground_truth.iter().map(|i| instance_to_entry(i, true)).collect(),
        predictions: ds.predictions.iter().map(|i| instance_to_entry(i, false)).collect(),
    }
}
