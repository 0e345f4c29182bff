#![allow(dead_code)]

use cfu_core::evaluation::PreparedImage;
use cfu_core::{BBox, ClassLabel, ImageId, Instance, InstanceId, Origin, RleMask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const W: u32 = 64;
pub const H: u32 = 64;

pub fn rect_mask(x0: u32, y0: u32, x1: u32, y1: u32) -> RleMask {
    RleMask::from_fn(W, H, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
}

pub fn rect(id: u64, label: ClassLabel, score: f64, r: [u32; 4], origin: Origin) -> Instance {
    let mask = rect_mask(r[0], r[1], r[2], r[3]);
    let bbox = BBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64);
    Instance::new(InstanceId(id), ImageId(1), label, score, bbox, Some(mask), origin)
}

pub fn random_label(rng: &mut ChaCha8Rng) -> ClassLabel {
    if rng.random_bool(0.5) {
        ClassLabel::BvgPlus
    } else {
        ClassLabel::BvgMinus
    }
}

pub fn random_rect(rng: &mut ChaCha8Rng) -> [u32; 4] {
    let x0 = rng.random_range(0..W - 4);
    let y0 = rng.random_range(0..H - 4);
    let x1 = rng.random_range(x0 + 2..=(x0 + 16).min(W));
    let y1 = rng.random_range(y0 + 2..=(y0 + 16).min(H));
    [x0, y0, x1, y1]
}

fn jitter(rng: &mut ChaCha8Rng, r: [u32; 4]) -> [u32; 4] {
    let d = |rng: &mut ChaCha8Rng, v: u32, lo: u32, hi: u32| {
        (v as i64 + rng.random_range(-2..=2)).clamp(lo as i64, hi as i64) as u32
    };
    let x0 = d(rng, r[0], 0, W - 2);
    let y0 = d(rng, r[1], 0, H - 2);
    let x1 = d(rng, r[2], x0 + 1, W);
    let y1 = d(rng, r[3], y0 + 1, H);
    [x0, y0, x1, y1]
}

/// Random image: up to `max_gt` ground-truth rectangles, detections that
/// jitter some of them (occasionally relabelled) and a few false positives.
pub fn random_image(rng: &mut ChaCha8Rng, image: u64, max_gt: usize) -> PreparedImage {
    let n_gt = rng.random_range(0..=max_gt);
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    let mut next = image * 1000;
    for _ in 0..n_gt {
        let r = random_rect(rng);
        let label = random_label(rng);
        next += 1;
        let mut g = rect(next, label, 1.0, r, Origin::GroundTruth);
        g.image_id = ImageId(image);
        gts.push(g);
        if rng.random_bool(0.8) {
            let pl = if rng.random_bool(0.15) { label.other() } else { label };
            next += 1;
            let mut p = rect(next, pl, rng.random_range(0.05..1.0), jitter(rng, r), Origin::Model);
            p.image_id = ImageId(image);
            preds.push(p);
        }
    }
    for _ in 0..rng.random_range(0..3) {
        next += 1;
        let mut p = rect(next, random_label(rng), rng.random_range(0.05..1.0), random_rect(rng), Origin::Model);
        p.image_id = ImageId(image);
        preds.push(p);
    }
    PreparedImage::new(ImageId(image), preds, gts)
}

pub fn random_images(rng: &mut ChaCha8Rng, n: usize, max_gt: usize) -> Vec<PreparedImage> {
    (0..n).map(|k| random_image(rng, k as u64 + 1, max_gt)).collect()
}
