//! Back end for counting BVG+ and BVG- colony-forming units on Petri-dish
//! images.
//!
//! The crate ingests instance-segmentation predictions and ground truth,
//! runs the four-stage exclusion pipeline (score, cross-class duplicates,
//! dish boundary, area outliers), evaluates predictions against ground truth,
//! turns validated counts into dilution-scaled bacteria estimates, and keeps
//! an append-only log of review edits from which dataset state is replayed.

pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod postproc;
pub mod quant;
pub mod search;
pub mod store;
pub mod synth;

pub use geometry::{BBox, EllipseModel, RleMask};
pub use model::{
    ClassLabel, Dataset, EllipseSource, ExclusionReason, ImageId, ImageRecord, Instance,
    InstanceId, Origin, Split,
};
pub use postproc::{PipelineResult, PostProcConfig};
