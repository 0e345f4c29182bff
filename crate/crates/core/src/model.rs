//! Domain types shared by every stage: images, colony instances, datasets.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, EllipseModel, RleMask};

const BBOX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u64);

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The two colony classes. Ordering follows the confusion-matrix layout
/// (BVG- first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    #[serde(rename = "BVG-")]
    BvgMinus,
    #[serde(rename = "BVG+")]
    BvgPlus,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::BvgMinus, ClassLabel::BvgPlus];

    pub fn other(self) -> ClassLabel {
        match self {
            ClassLabel::BvgMinus => ClassLabel::BvgPlus,
            ClassLabel::BvgPlus => ClassLabel::BvgMinus,
        }
    }

    /// Category id used by the interchange format.
    pub fn category_id(self) -> u32 {
        match self {
            ClassLabel::BvgMinus => 1,
            ClassLabel::BvgPlus => 2,
        }
    }

    pub fn from_category_id(id: u32) -> Option<ClassLabel> {
        match id {
            1 => Some(ClassLabel::BvgMinus),
            2 => Some(ClassLabel::BvgPlus),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ClassLabel::BvgMinus => 0,
            ClassLabel::BvgPlus => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::BvgMinus => "BVG-",
            ClassLabel::BvgPlus => "BVG+",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Model,
    User,
    GroundTruth,
}

/// Why an instance no longer counts. Exclusion is a soft flag; the instance
/// stays in the dataset and can be restored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    BelowScoreThreshold,
    CrossClassDuplicate,
    OutsideDish,
    AreaOutlier,
    UserDeleted,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 5] = [
        ExclusionReason::BelowScoreThreshold,
        ExclusionReason::CrossClassDuplicate,
        ExclusionReason::OutsideDish,
        ExclusionReason::AreaOutlier,
        ExclusionReason::UserDeleted,
    ];

    /// True for reasons assigned by the post-processing pipeline.
    pub fn is_pipeline(self) -> bool {
        !matches!(self, ExclusionReason::UserDeleted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::BelowScoreThreshold => "below_score_threshold",
            ExclusionReason::CrossClassDuplicate => "cross_class_duplicate",
            ExclusionReason::OutsideDish => "outside_dish",
            ExclusionReason::AreaOutlier => "area_outlier",
            ExclusionReason::UserDeleted => "user_deleted",
        }
    }
}

/// One detected or annotated colony.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub image_id: ImageId,
    pub label: ClassLabel,
    /// Model probability; 1.0 for ground truth and user-created instances.
    pub score: f64,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    #[serde(default)]
    pub unsure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_label: Option<ClassLabel>,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded: Option<ExclusionReason>,
    /// Set once a reviewer has confirmed or corrected the label.
    #[serde(default)]
    pub validated: bool,
    /// Set when a reviewer restored a pipeline exclusion; partial re-runs of
    /// the pipeline leave such instances kept.
    #[serde(default)]
    pub restored: bool,
}

impl Instance {
    /// A plain instance with no review flags.
    pub fn new(
        id: InstanceId,
        image_id: ImageId,
        label: ClassLabel,
        score: f64,
        bbox: BBox,
        mask: Option<RleMask>,
        origin: Origin,
    ) -> Self {
        Self {
            id,
            image_id,
            label,
            score,
            bbox,
            mask,
            unsure: false,
            alt_label: None,
            origin,
            excluded: None,
            validated: false,
            restored: false,
        }
    }

    pub fn is_kept(&self) -> bool {
        self.excluded.is_none()
    }

    /// Mask area in pixels, or the box area when the instance is box-only.
    pub fn area(&self) -> f64 {
        match &self.mask {
            Some(m) => m.area() as f64,
            None => self.bbox.area(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unsplit,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Unsplit];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unsplit => "unsplit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EllipseSource {
    Fitted,
    UserOverride,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_data_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dish_ellipse: Option<EllipseModel>,
    #[serde(default)]
    pub ellipse_source: EllipseSource,
    #[serde(default)]
    pub split: Split,
}

impl ImageRecord {
    pub fn new(id: ImageId, width: u32, height: u32) -> Self {
        Self {
            id,
            width,
            height,
            pixel_data_ref: None,
            dish_ellipse: None,
            ellipse_source: EllipseSource::None,
            split: Split::Unsplit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub id: String,
    pub name: String,
    pub images: Vec<ImageRecord>,
    /// Instances with origin `GroundTruth`.
    pub ground_truth: Vec<Instance>,
    /// Instances with origin `Model` or `User`.
    pub predictions: Vec<Instance>,
}

impl Dataset {
    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn image_mut(&mut self, id: ImageId) -> Option<&mut ImageRecord> {
        self.images.iter_mut().find(|i| i.id == id)
    }

    pub fn prediction(&self, id: InstanceId) -> Option<&Instance> {
        self.predictions.iter().find(|i| i.id == id)
    }

    pub fn prediction_mut(&mut self, id: InstanceId) -> Option<&mut Instance> {
        self.predictions.iter_mut().find(|i| i.id == id)
    }

    /// Smallest instance id not used by any instance in the dataset.
    pub fn next_instance_id(&self) -> InstanceId {
        let max = self
            .ground_truth
            .iter()
            .chain(&self.predictions)
            .map(|i| i.id.0)
            .max();
        InstanceId(max.map_or(1, |m| m + 1))
    }

    pub fn predictions_for(&self, image: ImageId) -> impl Iterator<Item = &Instance> {
        self.predictions.iter().filter(move |i| i.image_id == image)
    }

    pub fn ground_truth_for(&self, image: ImageId) -> impl Iterator<Item = &Instance> {
        self.ground_truth.iter().filter(move |i| i.image_id == image)
    }
}

/// Which entity a violation is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Entity {
    Image(ImageId),
    Instance(InstanceId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonPositiveImageSize,
    MissingDishEllipse,
    DuplicateImageId,
    DuplicateInstanceId,
    ScoreOutOfRange,
    GroundTruthScoreNotOne,
    InvalidBBox,
    BBoxOutsideImage,
    MaskSizeMismatch,
    MaskCountsMismatch,
    EmptyMask,
    MaskBBoxMismatch,
    UnsureWithoutAltLabel,
    AltLabelEqualsLabel,
    DanglingImageReference,
    WrongOrigin,
}

impl ViolationKind {
    pub fn message(self) -> &'static str {
        match self {
            ViolationKind::NonPositiveImageSize => "image width and height must be positive",
            ViolationKind::MissingDishEllipse => "ellipse source set but no dish ellipse",
            ViolationKind::DuplicateImageId => "duplicate image id",
            ViolationKind::DuplicateInstanceId => "duplicate instance id",
            ViolationKind::ScoreOutOfRange => "score out of range",
            ViolationKind::GroundTruthScoreNotOne => "ground-truth or user score must be 1.0",
            ViolationKind::InvalidBBox => "bounding box is empty or inverted",
            ViolationKind::BBoxOutsideImage => "bounding box outside image bounds",
            ViolationKind::MaskSizeMismatch => "mask size differs from image size",
            ViolationKind::MaskCountsMismatch => "mask run lengths do not cover the image",
            ViolationKind::EmptyMask => "mask has no foreground pixels",
            ViolationKind::MaskBBoxMismatch => "mask tight box differs from bounding box",
            ViolationKind::UnsureWithoutAltLabel => "unsure instance without alternative label",
            ViolationKind::AltLabelEqualsLabel => "alternative label equals label",
            ViolationKind::DanglingImageReference => "dangling image reference",
            ViolationKind::WrongOrigin => "instance origin does not match its list",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entity: Entity,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.entity {
            Entity::Image(id) => write!(f, "image {id}: {}", self.kind.message()),
            Entity::Instance(id) => write!(f, "instance {id}: {}", self.kind.message()),
        }
    }
}

/// Checks every type invariant and returns the broken ones. An empty list
/// means the dataset is well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut images: HashMap<ImageId, &ImageRecord> = HashMap::new();

    for img in &d.images {
        let entity = Entity::Image(img.id);
        if images.insert(img.id, img).is_some() {
            out.push(Violation { entity, kind: ViolationKind::DuplicateImageId });
        }
        if img.width == 0 || img.height == 0 {
            out.push(Violation { entity, kind: ViolationKind::NonPositiveImageSize });
        }
        if img.ellipse_source != EllipseSource::None && img.dish_ellipse.is_none() {
            out.push(Violation { entity, kind: ViolationKind::MissingDishEllipse });
        }
    }

    let mut seen: HashSet<InstanceId> = HashSet::new();
    let lists = [(&d.ground_truth, true), (&d.predictions, false)];
    for (list, is_gt) in lists {
        for inst in list {
            let entity = Entity::Instance(inst.id);
            let mut push = |kind| out.push(Violation { entity, kind });
            if !seen.insert(inst.id) {
                push(ViolationKind::DuplicateInstanceId);
            }
            let origin_ok = match inst.origin {
                Origin::GroundTruth => is_gt,
                Origin::Model | Origin::User => !is_gt,
            };
            if !origin_ok {
                push(ViolationKind::WrongOrigin);
            }
            if !(0.0..=1.0).contains(&inst.score) || inst.score.is_nan() {
                push(ViolationKind::ScoreOutOfRange);
            } else if inst.origin != Origin::Model && inst.score != 1.0 {
                push(ViolationKind::GroundTruthScoreNotOne);
            }
            if inst.unsure && inst.alt_label.is_none() {
                push(ViolationKind::UnsureWithoutAltLabel);
            }
            if inst.alt_label == Some(inst.label) {
                push(ViolationKind::AltLabelEqualsLabel);
            }
            if !inst.bbox.is_valid() {
                push(ViolationKind::InvalidBBox);
            }
            let Some(img) = images.get(&inst.image_id) else {
                push(ViolationKind::DanglingImageReference);
                continue;
            };
            if inst.bbox.is_valid() && !inst.bbox.within(img.width as f64, img.height as f64) {
                push(ViolationKind::BBoxOutsideImage);
            }
            if let Some(mask) = &inst.mask {
                if mask.width != img.width || mask.height != img.height {
                    push(ViolationKind::MaskSizeMismatch);
                }
                if !mask.is_consistent() {
                    push(ViolationKind::MaskCountsMismatch);
                    continue;
                }
                match mask.tight_bbox() {
                    None => push(ViolationKind::EmptyMask),
                    Some(tight) => {
                        if !tight.approx_eq(&inst.bbox, BBOX_TOLERANCE) {
                            push(ViolationKind::MaskBBoxMismatch);
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_image_dataset() -> Dataset {
        let img1 = ImageRecord::new(ImageId(1), 10, 10);
        let img2 = ImageRecord::new(ImageId(2), 8, 6);
        let mask = RleMask::from_fn(10, 10, |x, y| (2..5).contains(&x) && (3..6).contains(&y));
        let gt = Instance::new(
            InstanceId(1),
            ImageId(1),
            ClassLabel::BvgPlus,
            1.0,
            mask.tight_bbox().unwrap(),
            Some(mask),
            Origin::GroundTruth,
        );
        let pred = Instance::new(
            InstanceId(2),
            ImageId(2),
            ClassLabel::BvgMinus,
            0.8,
            BBox::new(1.0, 1.0, 3.0, 4.0),
            None,
            Origin::Model,
        );
        Dataset {
            id: "d".into(),
            name: "two".into(),
            images: vec![img1, img2],
            ground_truth: vec![gt],
            predictions: vec![pred],
        }
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&two_image_dataset()).is_empty());
    }

    #[test]
    fn score_out_of_range() {
        let mut d = two_image_dataset();
        d.predictions[0].score = 1.3;
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::ScoreOutOfRange);
        assert_eq!(v[0].kind.message(), "score out of range");
        assert_eq!(v[0].entity, Entity::Instance(InstanceId(2)));
    }

    #[test]
    fn dangling_image_reference() {
        let mut d = two_image_dataset();
        d.predictions[0].image_id = ImageId(99);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind.message(), "dangling image reference");
    }

    #[test]
    fn unsure_requires_distinct_alt_label() {
        let mut d = two_image_dataset();
        d.predictions[0].unsure = true;
        assert_eq!(validate_dataset(&d)[0].kind, ViolationKind::UnsureWithoutAltLabel);
        d.predictions[0].alt_label = Some(ClassLabel::BvgMinus);
        assert_eq!(validate_dataset(&d)[0].kind, ViolationKind::AltLabelEqualsLabel);
        d.predictions[0].alt_label = Some(ClassLabel::BvgPlus);
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn mask_box_mismatch_and_out_of_bounds() {
        let mut d = two_image_dataset();
        d.ground_truth[0].bbox = BBox::new(2.0, 3.0, 6.0, 6.0);
        assert_eq!(validate_dataset(&d)[0].kind, ViolationKind::MaskBBoxMismatch);
        let mut d = two_image_dataset();
        d.predictions[0].bbox = BBox::new(5.0, 1.0, 9.0, 4.0);
        assert_eq!(validate_dataset(&d)[0].kind, ViolationKind::BBoxOutsideImage);
    }

    #[test]
    fn duplicate_ids_across_lists() {
        let mut d = two_image_dataset();
        d.predictions[0].id = InstanceId(1);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::DuplicateInstanceId);
    }

    #[test]
    fn validation_is_idempotent() {
        let mut d = two_image_dataset();
        d.predictions[0].score = -0.1;
        d.images[1].width = 0;
        let before = d.clone();
        let a = validate_dataset(&d);
        let b = validate_dataset(&d);
        assert_eq!(a, b);
        assert_eq!(d, before);
    }

    #[test]
    fn next_instance_id_skips_all_lists() {
        let d = two_image_dataset();
        assert_eq!(d.next_instance_id(), InstanceId(3));
        assert_eq!(Dataset::default().next_instance_id(), InstanceId(1));
    }
}
