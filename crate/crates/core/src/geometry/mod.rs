//! Masks, boxes, IoU, areas and the Petri-dish ellipse.

mod bbox;
mod dish;
mod ellipse;
mod rle;

pub use bbox::{iou_bbox, BBox};
pub use dish::{estimate_dish_ellipse, inscribed_ellipse, DishEstimate, DishSource};
pub use ellipse::{conic_to_ellipse, fit_ellipse, shrink_ellipse, EllipseModel};
pub use rle::{iou_mask, mask_area, RleMask};

use thiserror::Error;

use crate::model::Instance;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("mask sizes differ: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },
    #[error("run lengths sum to {got}, expected {expected}")]
    RleLength { expected: u64, got: u64 },
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("points are degenerate (collinear or coincident)")]
    DegenerateFit,
    #[error("fitted conic is not an ellipse")]
    NotAnEllipse,
    #[error("ellipse needs finite center and positive semi-axes")]
    InvalidEllipse,
}

/// IoU between two instances: mask IoU when both carry masks of the same
/// size, box IoU otherwise.
pub fn instance_iou(p: &Instance, q: &Instance) -> f64 {
    match (&p.mask, &q.mask) {
        (Some(a), Some(b)) => iou_mask(a, b).unwrap_or_else(|_| iou_bbox(&p.bbox, &q.bbox)),
        _ => iou_bbox(&p.bbox, &q.bbox),
    }
}

/// True when any foreground pixel center lies inside or on the ellipse. A
/// box-only instance is tested on its four corners and its center.
pub fn instance_touches_ellipse(inst: &Instance, e: &EllipseModel) -> bool {
    match &inst.mask {
        Some(mask) => {
            // Runs whose pixel span misses the ellipse's extent are skipped.
            let (x0, y0, x1, y1) = e.extent();
            let h = mask.height as u64;
            mask.foreground_runs().any(|(s, end)| {
                let (cs, ce) = (s / h, (end - 1) / h);
                if (ce as f64 + 1.0) < x0 || (cs as f64) > x1 {
                    return false;
                }
                (s..end).any(|i| {
                    let (x, y) = ((i / h) as f64 + 0.5, (i % h) as f64 + 0.5);
                    y >= y0 && y <= y1 && e.contains(x, y)
                })
            })
        }
        None => {
            let b = &inst.bbox;
            b.corners()
                .into_iter()
                .chain(std::iter::once(b.center()))
                .any(|(x, y)| e.contains(x, y))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassLabel, ImageId, InstanceId, Origin};

    fn mask_instance(mask: RleMask) -> Instance {
        let bbox = mask.tight_bbox().unwrap();
        Instance::new(
            InstanceId(1),
            ImageId(1),
            ClassLabel::BvgPlus,
            0.9,
            bbox,
            Some(mask),
            Origin::Model,
        )
    }

    fn dense_touches(m: &RleMask, e: &EllipseModel) -> bool {
        m.pixels().any(|(x, y)| e.contains(x as f64 + 0.5, y as f64 + 0.5))
    }

    #[test]
    fn center_and_outside_instances() {
        let e = EllipseModel::circle(50.0, 50.0, 40.0).unwrap();
        let center = mask_instance(RleMask::from_fn(100, 100, |x, y| {
            (48..52).contains(&x) && (48..52).contains(&y)
        }));
        assert!(instance_touches_ellipse(&center, &e));
        let outside = mask_instance(RleMask::from_fn(100, 100, |x, y| x < 4 && y < 4));
        assert!(!instance_touches_ellipse(&outside, &e));
    }

    #[test]
    fn straddling_instance_with_one_interior_pixel() {
        // Circle of radius 10 around (20.5, 20.5): pixel (30, 20) has its center
        // exactly on the boundary; every other pixel of the block is outside.
        let e = EllipseModel::circle(20.5, 20.5, 10.0).unwrap();
        let m = RleMask::from_fn(60, 60, |x, y| (30..36).contains(&x) && (20..21).contains(&y));
        let interior: Vec<_> = m
            .pixels()
            .filter(|&(x, y)| e.contains(x as f64 + 0.5, y as f64 + 0.5))
            .collect();
        assert_eq!(interior, vec![(30, 20)]);
        let inst = mask_instance(m.clone());
        assert!(instance_touches_ellipse(&inst, &e));
        assert_eq!(instance_touches_ellipse(&inst, &e), dense_touches(&m, &e));
    }

    #[test]
    fn box_only_instance_uses_corners_and_center() {
        let e = EllipseModel::circle(0.0, 0.0, 5.0).unwrap();
        let mut inst = mask_instance(RleMask::from_fn(4, 4, |x, y| x == 0 && y == 0));
        inst.mask = None;
        inst.bbox = BBox::new(4.0, 0.0, 12.0, 2.0);
        assert!(instance_touches_ellipse(&inst, &e));
        inst.bbox = BBox::new(6.0, 0.0, 12.0, 2.0);
        assert!(!instance_touches_ellipse(&inst, &e));
    }

    #[test]
    fn instance_iou_prefers_masks() {
        let a = mask_instance(RleMask::from_fn(10, 10, |x, y| x < 4 && y < 4));
        let b = mask_instance(RleMask::from_fn(10, 10, |x, y| x < 4 && y < 2));
        assert!((instance_iou(&a, &b) - 0.5).abs() < 1e-15);
        let mut c = b.clone();
        c.mask = None;
        c.bbox = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(instance_iou(&a, &c), 1.0);
    }

    #[test]
    fn touches_matches_dense_oracle_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let e = EllipseModel::new(
                rng.random_range(0.0..40.0),
                rng.random_range(0.0..40.0),
                rng.random_range(3.0..20.0),
                rng.random_range(3.0..20.0),
                rng.random_range(0.0..3.0),
            )
            .unwrap();
            let (cx, cy, r) = (
                rng.random_range(0..40),
                rng.random_range(0..40),
                rng.random_range(1..6),
            );
            let m = RleMask::from_fn(40, 40, |x, y| {
                (x as i32 - cx).pow(2) + (y as i32 - cy).pow(2) <= r * r
            });
            if m.area() == 0 {
                continue;
            }
            let inst = mask_instance(m.clone());
            assert_eq!(instance_touches_ellipse(&inst, &e), dense_touches(&m, &e));
        }
    }
}
