//! Review edits as an append-only event log, and the fold that replays them
//! onto an ingested dataset.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, EllipseModel, RleMask};
use crate::model::{
    ClassLabel, Dataset, EllipseSource, ExclusionReason, ImageId, Instance, InstanceId, Origin,
    Split,
};
use crate::postproc::{rerun_dish_and_area, run_pipeline, PostProcConfig, PostProcError};
use crate::quant::{Experiment, TriplicateGroup};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EditError {
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("instance id {0} already in use")]
    DuplicateInstance(InstanceId),
    #[error("instance {0} is not unsure")]
    NotUnsure(InstanceId),
    #[error("instance {0} is already excluded")]
    AlreadyExcluded(InstanceId),
    #[error("instance {0} is not excluded")]
    NotExcluded(InstanceId),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
    #[error(transparent)]
    Pipeline(#[from] PostProcError),
}

/// What an event does. Serialized as `"action"` / `"payload"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "payload", rename_all = "snake_case")]
pub enum EditAction {
    /// A reviewer-drawn colony. The id is fixed when the event is created.
    CreateInstance {
        instance_id: InstanceId,
        image_id: ImageId,
        label: ClassLabel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bbox: Option<BBox>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<RleMask>,
    },
    DeleteInstance { instance_id: InstanceId },
    ChangeClass { instance_id: InstanceId, label: ClassLabel },
    /// Keeps the current label of an unsure instance.
    ValidateUnsure { instance_id: InstanceId },
    /// Switches an unsure instance to its alternative label.
    InvalidateUnsure { instance_id: InstanceId },
    RestoreExcluded { instance_id: InstanceId },
    /// Moves the dish boundary and recomputes the dish and area stages.
    MoveEllipse { image_id: ImageId, ellipse: EllipseModel },
    /// Creates or replaces an experiment's triplicates.
    SetDilution { experiment_id: String, triplicates: Vec<TriplicateGroup> },
    SetSplit { image_id: ImageId, split: Split },
    /// Full pipeline run. Ellipses fitted from pixels for images without
    /// one are recorded so replay does not need the pixels.
    ApplyPipeline {
        config: PostProcConfig,
        #[serde(default)]
        fitted_ellipses: BTreeMap<ImageId, EllipseModel>,
    },
}

pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEvent {
    pub seq: u64,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub action: EditAction,
}

/// Dataset state after replaying events `1..=seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub dataset: Dataset,
    pub experiments: BTreeMap<String, Experiment>,
    /// Configuration of the last pipeline run, reused when an ellipse moves.
    pub postproc: Option<PostProcConfig>,
}

impl Snapshot {
    pub fn from_base(base: Dataset) -> Self {
        Self { seq: 0, dataset: base, experiments: BTreeMap::new(), postproc: None }
    }

    /// Applies one event. On error the snapshot is left unchanged.
    pub fn apply(&mut self, event: &EditEvent) -> Result<(), EditError> {
        apply_action(self, &event.action, event.timestamp)?;
        self.seq = event.seq;
        Ok(())
    }
}

/// Folds `events` over `base`, stopping after `upto` when given.
pub fn replay(base: &Dataset, events: &[EditEvent], upto: Option<u64>) -> Result<Snapshot, EditError> {
    let mut snap = Snapshot::from_base(base.clone());
    for e in events.iter().take_while(|e| upto.is_none_or(|u| e.seq <= u)) {
        snap.apply(e)?;
    }
    Ok(snap)
}

fn prediction_index(ds: &Dataset, id: InstanceId) -> Result<usize, EditError> {
    ds.predictions.iter().position(|p| p.id == id).ok_or(EditError::UnknownInstance(id))
}

fn rerun_image(snap: &mut Snapshot, image: ImageId, cfg: &PostProcConfig) -> Result<(), EditError> {
    let ds = &snap.dataset;
    let rec = ds.image(image).ok_or(EditError::UnknownImage(image))?;
    let preds: Vec<Instance> = ds.predictions_for(image).cloned().collect();
    let out = run_pipeline(rec, preds, cfg)?;
    let mut updated = out.instances.into_iter();
    for p in snap.dataset.predictions.iter_mut().filter(|p| p.image_id == image) {
        *p = updated.next().expect("pipeline keeps instance order");
    }
    Ok(())
}

fn apply_action(snap: &mut Snapshot, action: &EditAction, at: DateTime<Utc>) -> Result<(), EditError> {
    let ds = &mut snap.dataset;
    match action {
        EditAction::CreateInstance { instance_id, image_id, label, bbox, mask } => {
            let img = ds.image(*image_id).ok_or(EditError::UnknownImage(*image_id))?;
            if ds.ground_truth.iter().chain(&ds.predictions).any(|i| i.id == *instance_id) {
                return Err(EditError::DuplicateInstance(*instance_id));
            }
            let bbox = match mask {
                Some(m) => {
                    if (m.width, m.height) != (img.width, img.height) || !m.is_consistent() {
                        return Err(EditError::InvalidGeometry("mask does not match the image".into()));
                    }
                    m.tight_bbox().ok_or_else(|| EditError::InvalidGeometry("empty mask".into()))?
                }
                None => {
                    let b = bbox.ok_or_else(|| EditError::InvalidGeometry("needs a bbox or a mask".into()))?;
                    if !b.is_valid() || !b.within(img.width as f64, img.height as f64) {
                        return Err(EditError::InvalidGeometry("bbox empty or outside the image".into()));
                    }
                    b
                }
            };
            ds.predictions.push(Instance::new(
                *instance_id,
                *image_id,
                *label,
                1.0,
                bbox,
                mask.clone(),
                Origin::User,
            ));
        }
        EditAction::DeleteInstance { instance_id } => {
            let k = prediction_index(ds, *instance_id)?;
            let p = &mut ds.predictions[k];
            if p.excluded.is_some() {
                return Err(EditError::AlreadyExcluded(*instance_id));
            }
            p.excluded = Some(ExclusionReason::UserDeleted);
        }
        EditAction::ChangeClass { instance_id, label } => {
            let k = prediction_index(ds, *instance_id)?;
            let p = &mut ds.predictions[k];
            p.label = *label;
            p.unsure = false;
            p.alt_label = None;
            p.validated = true;
        }
        EditAction::ValidateUnsure { instance_id } | EditAction::InvalidateUnsure { instance_id } => {
            let k = prediction_index(ds, *instance_id)?;
            let p = &mut ds.predictions[k];
            let Some(alt) = p.alt_label.filter(|_| p.unsure) else {
                return Err(EditError::NotUnsure(*instance_id));
            };
            if matches!(action, EditAction::InvalidateUnsure { .. }) {
                p.label = alt;
            }
            p.unsure = false;
            p.alt_label = None;
            p.validated = true;
        }
        EditAction::RestoreExcluded { instance_id } => {
            let k = prediction_index(ds, *instance_id)?;
            let p = &mut ds.predictions[k];
            let reason = p.excluded.ok_or(EditError::NotExcluded(*instance_id))?;
            p.excluded = None;
            if reason.is_pipeline() {
                p.restored = true;
            }
        }
        EditAction::MoveEllipse { image_id, ellipse } => {
            if !ellipse.is_valid() {
                return Err(EditError::InvalidGeometry("ellipse needs a finite center and positive axes".into()));
            }
            let rec = ds.image(*image_id).ok_or(EditError::UnknownImage(*image_id))?;
            let mut moved = rec.clone();
            moved.dish_ellipse = Some(*ellipse);
            moved.ellipse_source = EllipseSource::UserOverride;
            // Run first so a failure leaves the snapshot untouched.
            let rerun = match snap.postproc {
                Some(cfg) => {
                    let preds: Vec<Instance> = ds.predictions_for(*image_id).cloned().collect();
                    Some(rerun_dish_and_area(&moved, preds, &cfg)?)
                }
                None => None,
            };
            *ds.image_mut(*image_id).expect("checked") = moved;
            if let Some(out) = rerun {
                let mut updated = out.instances.into_iter();
                for p in ds.predictions.iter_mut().filter(|p| p.image_id == *image_id) {
                    *p = updated.next().expect("pipeline keeps instance order");
                }
            }
        }
        EditAction::SetDilution { experiment_id, triplicates } => {
            if experiment_id.is_empty() {
                return Err(EditError::InvalidExperiment("empty experiment id".into()));
            }
            if let Some(id) = triplicates.iter().flat_map(|t| &t.image_ids).find(|id| ds.image(**id).is_none()) {
                return Err(EditError::UnknownImage(*id));
            }
            let created_at = snap.experiments.get(experiment_id).map_or(at, |e| e.created_at);
            snap.experiments.insert(
                experiment_id.clone(),
                Experiment { id: experiment_id.clone(), triplicates: triplicates.clone(), created_at },
            );
        }
        EditAction::SetSplit { image_id, split } => {
            ds.image_mut(*image_id).ok_or(EditError::UnknownImage(*image_id))?.split = *split;
        }
        EditAction::ApplyPipeline { config, fitted_ellipses } => {
            config.validate()?;
            if let Some((id, _)) = fitted_ellipses.iter().find(|(id, _)| ds.image(**id).is_none()) {
                return Err(EditError::UnknownImage(*id));
            }
            if fitted_ellipses.values().any(|e| !e.is_valid()) {
                return Err(EditError::InvalidGeometry("fitted ellipse is degenerate".into()));
            }
            let mut next = snap.clone();
            for (id, e) in fitted_ellipses {
                let rec = next.dataset.image_mut(*id).expect("checked");
                if rec.ellipse_source != EllipseSource::UserOverride {
                    rec.dish_ellipse = Some(*e);
                    rec.ellipse_source = EllipseSource::Fitted;
                }
            }
            let ids: Vec<ImageId> = next.dataset.images.iter().map(|i| i.id).collect();
            for id in ids {
                rerun_image(&mut next, id, config)?;
            }
            next.postproc = Some(*config);
            *snap = next;
        }
    }
    Ok(())
}
