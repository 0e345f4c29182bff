//! Random rectangle images on a 64x64 canvas.

use cfu_core::evaluation::PreparedImage;
use cfu_core::{BBox, ClassLabel, ImageId, Instance, InstanceId, Origin, RleMask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SIDE: u32 = 64;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
pub type Rect = [u32; 4];

pub fn rect_area(r: Rect) -> u64 {
    ((r[2] - r[0]) * (r[3] - r[1])) as u64
}

pub fn rect_iou(a: Rect, b: Rect) -> f64 {
    let w = a[2].min(b[2]).saturating_sub(a[0].max(b[0]));
    let h = a[3].min(b[3]).saturating_sub(a[1].max(b[1]));
    let inter = (w * h) as u64;
    let union = rect_area(a) + rect_area(b) - inter;
    inter as f64 / union as f64
}

fn overlaps(a: Rect, b: Rect) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}

pub fn instance(id: u64, image: u64, label: ClassLabel, score: f64, r: Rect, origin: Origin) -> Instance {
    let mask = RleMask::from_fn(SIDE, SIDE, |x, y| x >= r[0] && x < r[2] && y >= r[1] && y < r[3]);
    let bbox = BBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64);
    Instance::new(InstanceId(id), ImageId(image), label, score, bbox, Some(mask), origin)
}

pub fn label(rng: &mut ChaCha8Rng) -> ClassLabel {
    if rng.random_bool(0.5) {
        ClassLabel::BvgPlus
    } else {
        ClassLabel::BvgMinus
    }
}

pub fn random_rect(rng: &mut ChaCha8Rng) -> Rect {
    let x0 = rng.random_range(0..SIDE - 4);
    let y0 = rng.random_range(0..SIDE - 4);
    let x1 = rng.random_range(x0 + 2..=(x0 + 16).min(SIDE));
    let y1 = rng.random_range(y0 + 2..=(y0 + 16).min(SIDE));
    [x0, y0, x1, y1]
}

fn jitter(rng: &mut ChaCha8Rng, r: Rect) -> Rect {
    let mut d = |v: u32, lo: u32, hi: u32| (v as i64 + rng.random_range(-2..=2)).clamp(lo as i64, hi as i64) as u32;
    let x0 = d(r[0], 0, SIDE - 2);
    let y0 = d(r[1], 0, SIDE - 2);
    let x1 = d(r[2], x0 + 1, SIDE);
    let y1 = d(r[3], y0 + 1, SIDE);
    [x0, y0, x1, y1]
}

/// Rectangles and labels of one random image, kept alongside the
/// instances so oracles can work on plain geometry.
pub struct RectImage {
    pub preds: Vec<(Rect, ClassLabel)>,
    pub gts: Vec<(Rect, ClassLabel)>,
    pub prepared: PreparedImage,
}

/// Up to `max` ground-truth rectangles (pairwise disjoint when `disjoint`),
/// detections jittered from some of them and a few false positives, capped
/// at `max` predictions.
pub fn random_image(rng: &mut ChaCha8Rng, image: u64, max: usize, disjoint: bool) -> RectImage {
    let n_gt = rng.random_range(0..=max);
    let mut gts: Vec<(Rect, ClassLabel)> = Vec::new();
    let mut tries = 0;
    while gts.len() < n_gt && tries < 200 {
        tries += 1;
        let r = random_rect(rng);
        if disjoint && gts.iter().any(|(g, _)| overlaps(*g, r)) {
            continue;
        }
        gts.push((r, label(rng)));
    }
    let mut preds: Vec<(Rect, ClassLabel)> = Vec::new();
    for (r, l) in &gts {
        if rng.random_bool(0.8) {
            let pl = if rng.random_bool(0.15) { l.other() } else { *l };
            preds.push((jitter(rng, *r), pl));
        }
    }
    for _ in 0..rng.random_range(0..3) {
        preds.push((random_rect(rng), label(rng)));
    }
    preds.truncate(max);

    let mut next = image * 1000;
    let mut id = || {
        next += 1;
        next
    };
    let g: Vec<Instance> =
        gts.iter().map(|(r, l)| instance(id(), image, *l, 1.0, *r, Origin::GroundTruth)).collect();
    let p: Vec<Instance> = preds
        .iter()
        .map(|(r, l)| instance(id(), image, *l, rng.random_range(0.05..1.0), *r, Origin::Model))
        .collect();
    RectImage { preds, gts, prepared: PreparedImage::new(ImageId(image), p, g) }
}

pub fn random_images(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<PreparedImage> {
    (0..n).map(|k| random_image(rng, k as u64 + 1, max, false).prepared).collect()
}
