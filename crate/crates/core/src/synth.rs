//! Synthetic Petri-dish cases.
//!
//! A case is one rendered dish image, its ground-truth colonies and a set of
//! model-like predictions derived from them. Predictions can carry planted
//! violations, each built to trip exactly one post-processing rule under the
//! default configuration:
//!
//! * low-score detections (`BelowScoreThreshold`),
//! * cross-class twins of a kept detection (`CrossClassDuplicate`),
//! * detections beyond the dish rim (`OutsideDish`),
//! * dust specks far below the colony area distribution (`AreaOutlier`).
//!
//! Generation is deterministic in the seed. When a draw does not satisfy the
//! plantedness checks it is redrawn from a derived seed.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_mask, BBox, EllipseModel, RleMask};
use crate::model::{
    ClassLabel, Dataset, EllipseSource, ExclusionReason, ImageId, ImageRecord, Instance,
    InstanceId, Origin, Split,
};
use crate::postproc::PostProcConfig;
use crate::search::SearchSpace;

const BACKGROUND: u8 = 235;
const RING_INK: u8 = 40;
const RING_WIDTH: f64 = 3.0;
const PLUS_INK: u8 = 150;
const MINUS_INK: u8 = 110;
/// Minimum free space between colony boxes, in pixels.
const GAP: f64 = 2.0;
/// Colonies stay inside this fraction of the dish.
const INNER: f64 = 0.95;
/// Extra clearance beyond the rim for border plants, in pixels.
const BORDER_CLEARANCE: f64 = 6.0;
const PLACEMENT_TRIES: usize = 20_000;
const MAX_ATTEMPTS: u32 = 20;
const LOW_SCORES: (f64, f64) = (0.40, 0.68);
const DUST_RADIUS: (f64, f64) = (1.0, 1.8);
const TWIN_MIN_IOU: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("could not place {what}: {placed} of {wanted} fit")]
    Infeasible { what: &'static str, placed: usize, wanted: usize },
    #[error("no draw satisfied the planted-violation checks after {0} attempts")]
    NotPlanted(u32),
}

/// Perturbations applied to ground truth to obtain predictions. Rates of
/// planted or extra detections are fractions of `n_colonies`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub drop_rate: f64,
    pub false_positive_rate: f64,
    pub jitter_px: f64,
    pub score_noise: f64,
    pub dust_rate: f64,
    pub border_rate: f64,
    pub class_flip_rate: f64,
    pub low_score_rate: f64,
    pub duplicate_rate: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            drop_rate: 0.02,
            false_positive_rate: 0.02,
            jitter_px: 1.0,
            score_noise: 0.03,
            dust_rate: 0.05,
            border_rate: 0.05,
            class_flip_rate: 0.02,
            low_score_rate: 0.05,
            duplicate_rate: 0.05,
        }
    }
}

impl Perturbation {
    /// Predictions equal to ground truth.
    pub fn none() -> Self {
        Self {
            drop_rate: 0.0,
            false_positive_rate: 0.0,
            jitter_px: 0.0,
            score_noise: 0.0,
            dust_rate: 0.0,
            border_rate: 0.0,
            class_flip_rate: 0.0,
            low_score_rate: 0.0,
            duplicate_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub image_id: u64,
    /// Drawn around the image center when absent.
    pub dish: Option<EllipseModel>,
    pub n_colonies: usize,
    /// Fraction of BVG+ colonies.
    pub class_ratio: f64,
    pub radius_range: [f64; 2],
    /// Scores of clean detections.
    pub score_range: [f64; 2],
    pub perturbation: Perturbation,
    /// Store the true dish on the image record as a user override.
    pub attach_dish: bool,
    pub split: Split,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 512,
            height: 512,
            image_id: 1,
            dish: None,
            n_colonies: 60,
            class_ratio: 401.0 / 485.0,
            radius_range: [9.0, 11.0],
            score_range: [0.72, 0.97],
            perturbation: Perturbation::default(),
            attach_dish: false,
            split: Split::Unsplit,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let p = &self.perturbation;
        let rates = [
            p.drop_rate,
            p.false_positive_rate,
            p.dust_rate,
            p.border_rate,
            p.class_flip_rate,
            p.low_score_rate,
            p.duplicate_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("rates must lie in [0, 1]");
        }
        if !(p.jitter_px >= 0.0 && p.score_noise >= 0.0) {
            return bad("jitter_px and score_noise must be non-negative");
        }
        let [r0, r1] = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad("radius_range must be positive and ordered");
        }
        let [s0, s1] = self.score_range;
        if !(s0 >= PostProcConfig::default().score_threshold + 0.01 && s0 <= s1 && s1 <= 1.0) {
            return bad("score_range must lie in [0.71, 1] and be ordered");
        }
        if !(0.0..=1.0).contains(&self.class_ratio) {
            return bad("class_ratio must lie in [0, 1]");
        }
        if self.width < 64 || self.height < 64 {
            return bad("image must be at least 64x64");
        }
        if self.image_id == 0 || self.image_id >= 1_000_000 {
            return bad("image_id must lie in 1..1000000");
        }
        Ok(())
    }
}

/// A generated image with ground truth, predictions and the planted reason
/// of every planted prediction.
#[derive(Debug, Clone)]
pub struct SynthCase {
    pub config: SynthConfig,
    pub dataset: Dataset,
    pub image: GrayImage,
    pub dish: EllipseModel,
    pub planted: BTreeMap<InstanceId, ExclusionReason>,
    /// Seed of the accepted draw.
    pub seed_used: u64,
}

impl SynthCase {
    pub fn image_record(&self) -> &ImageRecord {
        &self.dataset.images[0]
    }

    /// Predictions that carry no planted violation.
    pub fn clean_predictions(&self) -> impl Iterator<Item = &Instance> {
        self.dataset.predictions.iter().filter(|p| !self.planted.contains_key(&p.id))
    }
}

/// Derived seed for redraw `k`.
fn derive_seed(seed: u64, k: u32) -> u64 {
    if k == 0 {
        return seed;
    }
    // splitmix64 step
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Rasterizes a filled ellipse by pixel-center inclusion.
pub fn rasterize_ellipse(width: u32, height: u32, e: &EllipseModel) -> Option<RleMask> {
    let (x0, y0, x1, y1) = e.extent();
    let xa = x0.floor().max(0.0) as i64;
    let xb = x1.ceil().min(width as f64 - 1.0) as i64;
    let ya = y0.floor().max(0.0) as i64;
    let yb = y1.ceil().min(height as f64 - 1.0) as i64;
    let mut spans = Vec::new();
    for x in xa..=xb {
        let mut lo = None;
        let mut hi = 0;
        for y in ya..=yb {
            if e.contains(x as f64 + 0.5, y as f64 + 0.5) {
                lo.get_or_insert(y);
                hi = y;
            }
        }
        if let Some(lo) = lo {
            spans.push((x as u64, lo as u64, hi as u64 + 1));
        }
    }
    if spans.is_empty() {
        return None;
    }
    let h = height as u64;
    let mut counts: Vec<u32> = Vec::new();
    let mut pos = 0u64;
    for (x, a, b) in spans {
        let (s, t) = (x * h + a, x * h + b);
        if s == pos && !counts.is_empty() {
            *counts.last_mut().expect("non-empty") += (t - s) as u32;
        } else {
            counts.push((s - pos) as u32);
            counts.push((t - s) as u32);
        }
        pos = t;
    }
    let tail = width as u64 * h - pos;
    if tail > 0 {
        counts.push(tail as u32);
    }
    Some(RleMask { width, height, counts })
}

/// Smallest and largest normalised radius `sqrt(value)` over the mask's
/// pixel centers.
fn rho_range(mask: &RleMask, dish: &EllipseModel) -> (f64, f64) {
    mask.pixels().fold((f64::INFINITY, 0.0f64), |(lo, hi), (x, y)| {
        let r = dish.value(x as f64 + 0.5, y as f64 + 0.5).sqrt();
        (lo.min(r), hi.max(r))
    })
}

fn auto_dish(rng: &mut ChaCha8Rng, width: u32, height: u32) -> EllipseModel {
    let (w, h) = (width as f64, height as f64);
    let a = 0.38 * w.min(h) * rng.random_range(0.98..1.02);
    let b = a * rng.random_range(0.96..1.0);
    EllipseModel::new(
        w / 2.0 + w * rng.random_range(-0.02..0.02),
        h / 2.0 + h * rng.random_range(-0.02..0.02),
        a,
        b,
        rng.random_range(0.0..PI),
    )
    .expect("positive axes")
}

fn colony_shape(rng: &mut ChaCha8Rng, cx: f64, cy: f64, r: f64) -> EllipseModel {
    let ecc = rng.random_range(0.0..0.12);
    EllipseModel::new(cx, cy, r * (1.0 + ecc / 2.0), r * (1.0 - ecc / 2.0), rng.random_range(0.0..PI))
        .expect("positive axes")
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, Copy)]
enum Region {
    /// Every pixel center within this fraction of the dish.
    Inside(f64),
    /// Every pixel center beyond this normalised radius.
    Outside(f64),
    /// Innermost pixel center between these normalised radii.
    Rim(f64, f64),
}

/// Placement state for one image.
struct Canvas {
    rng: ChaCha8Rng,
    width: u32,
    height: u32,
    dish: EllipseModel,
    occupied: Vec<BBox>,
}

impl Canvas {
    fn new(rng: ChaCha8Rng, width: u32, height: u32, dish: EllipseModel) -> Self {
        Self { rng, width, height, dish, occupied: Vec::new() }
    }

    fn is_free(&self, b: &BBox) -> bool {
        let g = BBox::new(b.x_min - GAP, b.y_min - GAP, b.x_max + GAP, b.y_max + GAP);
        self.occupied.iter().all(|o| o.intersection_area(&g) <= 0.0)
    }

    fn fits(&self, mask: &RleMask, region: Region) -> bool {
        let (lo, hi) = rho_range(mask, &self.dish);
        match region {
            Region::Inside(s) => hi <= s,
            Region::Outside(s) => lo >= s,
            Region::Rim(a, b) => lo > a && lo < b,
        }
    }

    fn random_center(&mut self, region: Region, r: f64) -> (f64, f64) {
        match region {
            Region::Inside(s) => {
                let t = self.rng.random_range(0.0..2.0 * PI);
                let u: f64 = self.rng.random_range(0.0..1.0);
                let e = self.dish;
                let (sn, cs) = e.theta.sin_cos();
                let (px, py) = (s * u.sqrt() * e.a * t.cos(), s * u.sqrt() * e.b * t.sin());
                (e.cx + px * cs - py * sn, e.cy + px * sn + py * cs)
            }
            Region::Outside(_) => (
                self.rng.random_range(0.0..self.width as f64),
                self.rng.random_range(0.0..self.height as f64),
            ),
            Region::Rim(a, b) => {
                let t = self.rng.random_range(0.0..2.0 * PI);
                let (px, py) = self.dish.point_at(t);
                let (cx, cy) = (self.dish.cx, self.dish.cy);
                let reach = (px - cx).hypot(py - cy);
                let s = self.rng.random_range(a..b.max(a + 1e-9)) + r / reach;
                (cx + (px - cx) * s, cy + (py - cy) * s)
            }
        }
    }

    /// Places a colony of radius drawn from `radius` in `region`, without
    /// touching earlier placements.
    fn place(&mut self, radius: [f64; 2], region: Region) -> Option<(EllipseModel, RleMask)> {
        for _ in 0..PLACEMENT_TRIES {
            let r = uniform(&mut self.rng, radius);
            let (cx, cy) = self.random_center(region, r);
            let shape = colony_shape(&mut self.rng, cx, cy, r);
            let (x0, y0, x1, y1) = shape.extent();
            if x0 < 0.0 || y0 < 0.0 || x1 > self.width as f64 || y1 > self.height as f64 {
                continue;
            }
            let Some(mask) = rasterize_ellipse(self.width, self.height, &shape) else {
                continue;
            };
            let bbox = mask.tight_bbox().expect("non-empty");
            if !self.is_free(&bbox) || !self.fits(&mask, region) {
                continue;
            }
            self.occupied.push(bbox);
            return Some((shape, mask));
        }
        None
    }

    fn place_n(
        &mut self,
        n: usize,
        radius: [f64; 2],
        region: Region,
        what: &'static str,
    ) -> Result<Vec<(EllipseModel, RleMask)>, SynthError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            match self.place(radius, region) {
                Some(p) => out.push(p),
                None => return Err(SynthError::Infeasible { what, placed: out.len(), wanted: n }),
            }
        }
        Ok(out)
    }
}

struct IdGen {
    gt: u64,
    pred: u64,
}

impl IdGen {
    fn new(image_id: u64) -> Self {
        Self { gt: image_id * 1_000_000, pred: image_id * 1_000_000 + 500_000 }
    }

    fn gt(&mut self) -> InstanceId {
        self.gt += 1;
        InstanceId(self.gt)
    }

    fn pred(&mut self) -> InstanceId {
        self.pred += 1;
        InstanceId(self.pred)
    }
}

fn instance(id: InstanceId, image: ImageId, label: ClassLabel, score: f64, mask: RleMask, origin: Origin) -> Instance {
    let bbox = mask.tight_bbox().expect("non-empty mask");
    Instance::new(id, image, label, score, bbox, Some(mask), origin)
}

fn count_for(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

/// Renders background, the dark dish rim and the ground-truth colonies.
pub fn render_image(width: u32, height: u32, dish: &EllipseModel, ground_truth: &[Instance]) -> GrayImage {
    let mut img = GrayImage::from_fn(width, height, |x, y| {
        let rho = dish.value(x as f64 + 0.5, y as f64 + 0.5).sqrt();
        let d = (rho - 1.0).abs() * dish.b;
        Luma([if d <= RING_WIDTH / 2.0 { RING_INK } else { BACKGROUND }])
    });
    for g in ground_truth {
        let ink = match g.label {
            ClassLabel::BvgPlus => PLUS_INK,
            ClassLabel::BvgMinus => MINUS_INK,
        };
        if let Some(m) = &g.mask {
            for (x, y) in m.pixels() {
                img.put_pixel(x, y, Luma([ink]));
            }
        }
    }
    img
}

/// Laplace band of `areas` at `ci`, via a plain median / mean absolute
/// deviation fit and bisection on the CDF.
fn reference_band(areas: &[f64], ci: f64) -> Option<(f64, f64)> {
    if areas.len() < 2 {
        return None;
    }
    let mut s = areas.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let mu = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let b = s.iter().map(|a| (a - mu).abs()).sum::<f64>() / n as f64;
    if b <= 0.0 {
        return None;
    }
    let cdf = |x: f64| {
        if x < mu {
            0.5 * ((x - mu) / b).exp()
        } else {
            1.0 - 0.5 * (-(x - mu) / b).exp()
        }
    };
    let invert = |q: f64| {
        let (mut lo, mut hi) = (mu - 100.0 * b, mu + 100.0 * b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let tail = (1.0 - ci) / 2.0;
    Some((invert(tail), invert(1.0 - tail)))
}

fn scored(rng: &mut ChaCha8Rng, range: [f64; 2], noise: f64) -> f64 {
    let base = uniform(rng, range);
    let jitter = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
    (base + jitter).clamp(range[0], range[1])
}

fn draw(cfg: &SynthConfig, seed: u64) -> Result<Option<SynthCase>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dish = cfg.dish.unwrap_or_else(|| auto_dish(&mut rng, cfg.width, cfg.height));
    let mut canvas = Canvas::new(rng, cfg.width, cfg.height, dish);
    let (w, h) = (cfg.width, cfg.height);
    let image_id = ImageId(cfg.image_id);
    let p = cfg.perturbation;
    let n = cfg.n_colonies;
    let mut ids = IdGen::new(cfg.image_id);

    let colonies = canvas.place_n(n, cfg.radius_range, Region::Inside(INNER), "colonies")?;
    let mut gts = Vec::with_capacity(n);
    let mut preds = Vec::new();
    let mut planted = BTreeMap::new();
    let mut winners = Vec::new();

    for (shape, mask) in colonies {
        let label = if canvas.rng.random_bool(cfg.class_ratio) {
            ClassLabel::BvgPlus
        } else {
            ClassLabel::BvgMinus
        };
        gts.push(instance(ids.gt(), image_id, label, 1.0, mask.clone(), Origin::GroundTruth));
        if canvas.rng.random_bool(p.drop_rate) {
            continue;
        }
        let pred_mask = if p.jitter_px > 0.0 {
            let j = p.jitter_px;
            let dx = canvas.rng.random_range(-j..j);
            let dy = canvas.rng.random_range(-j..j);
            let moved = EllipseModel { cx: shape.cx + dx, cy: shape.cy + dy, ..shape };
            rasterize_ellipse(w, h, &moved).unwrap_or(mask)
        } else {
            mask
        };
        let label = if canvas.rng.random_bool(p.class_flip_rate) { label.other() } else { label };
        let score = scored(&mut canvas.rng, cfg.score_range, p.score_noise);
        winners.push((preds.len(), shape));
        preds.push(instance(ids.pred(), image_id, label, score, pred_mask, Origin::Model));
    }

    for (_, mask) in canvas.place_n(
        count_for(p.false_positive_rate, n),
        cfg.radius_range,
        Region::Inside(INNER),
        "false positives",
    )? {
        let label = if canvas.rng.random_bool(cfg.class_ratio) {
            ClassLabel::BvgPlus
        } else {
            ClassLabel::BvgMinus
        };
        let score = scored(&mut canvas.rng, cfg.score_range, p.score_noise);
        preds.push(instance(ids.pred(), image_id, label, score, mask, Origin::Model));
    }
    let n_clean = preds.len();

    for (_, mask) in canvas.place_n(
        count_for(p.low_score_rate, n),
        cfg.radius_range,
        Region::Inside(INNER),
        "low-score detections",
    )? {
        let label = if canvas.rng.random_bool(0.5) { ClassLabel::BvgPlus } else { ClassLabel::BvgMinus };
        let score = canvas.rng.random_range(LOW_SCORES.0..LOW_SCORES.1);
        let id = ids.pred();
        planted.insert(id, ExclusionReason::BelowScoreThreshold);
        preds.push(instance(id, image_id, label, score, mask, Origin::Model));
    }

    let n_twins = count_for(p.duplicate_rate, n);
    if n_twins > winners.len() {
        return Err(SynthError::Infeasible { what: "duplicate twins", placed: winners.len(), wanted: n_twins });
    }
    for k in 0..n_twins {
        // Spread twins over the detections.
        let (idx, shape) = winners[k * winners.len() / n_twins];
        let winner = preds[idx].clone();
        let Some(twin_mask) = shifted_twin(w, h, &shape, winner.mask.as_ref().expect("mask"), TWIN_MIN_IOU, 1.0)
        else {
            return Ok(None);
        };
        let hi = winner.score - 0.005;
        let score = canvas.rng.random_range(0.705..hi.max(0.706));
        if score >= winner.score {
            return Ok(None);
        }
        let id = ids.pred();
        planted.insert(id, ExclusionReason::CrossClassDuplicate);
        preds.push(instance(id, image_id, winner.label.other(), score, twin_mask, Origin::Model));
    }

    let border_rho = 1.0 + (RING_WIDTH / 2.0 + BORDER_CLEARANCE) / dish.b;
    for (_, mask) in canvas.place_n(
        count_for(p.border_rate, n),
        cfg.radius_range,
        Region::Outside(border_rho),
        "border detections",
    )? {
        let label = if canvas.rng.random_bool(cfg.class_ratio) {
            ClassLabel::BvgPlus
        } else {
            ClassLabel::BvgMinus
        };
        let score = scored(&mut canvas.rng, cfg.score_range, p.score_noise);
        let id = ids.pred();
        planted.insert(id, ExclusionReason::OutsideDish);
        preds.push(instance(id, image_id, label, score, mask, Origin::Model));
    }

    let n_dust = count_for(p.dust_rate, n);
    let dust = canvas.place_n(n_dust, [DUST_RADIUS.0, DUST_RADIUS.1], Region::Inside(INNER), "dust")?;
    let mut dust_areas = Vec::new();
    for (_, mask) in dust {
        let label = if canvas.rng.random_bool(0.5) { ClassLabel::BvgPlus } else { ClassLabel::BvgMinus };
        let score = scored(&mut canvas.rng, cfg.score_range, p.score_noise);
        let id = ids.pred();
        dust_areas.push(mask.area() as f64);
        planted.insert(id, ExclusionReason::AreaOutlier);
        preds.push(instance(id, image_id, label, score, mask, Origin::Model));
    }

    // The area filter sees the clean detections plus the dust.
    let defaults = PostProcConfig::default();
    let clean_areas: Vec<f64> = preds[..n_clean].iter().map(Instance::area).collect();
    let population: Vec<f64> = clean_areas.iter().chain(&dust_areas).copied().collect();
    if population.len() >= defaults.min_instances_for_area_filter {
        let Some((lo, hi)) = reference_band(&population, defaults.laplace_ci) else {
            return Ok(None);
        };
        let clean_ok = clean_areas.iter().all(|&a| a > lo + 0.5 && a < hi - 0.5);
        let dust_ok = dust_areas.iter().all(|&a| a < lo - 0.5);
        if !clean_ok || !dust_ok {
            return Ok(None);
        }
    } else if !dust_areas.is_empty() {
        return Ok(None);
    }

    let mut record = ImageRecord::new(image_id, w, h);
    record.pixel_data_ref = Some(format!("image_{}.png", cfg.image_id));
    record.split = cfg.split;
    if cfg.attach_dish {
        record.dish_ellipse = Some(dish);
        record.ellipse_source = EllipseSource::UserOverride;
    }
    let image = render_image(w, h, &dish, &gts);
    let dataset = Dataset {
        id: format!("synth-{}", cfg.seed),
        name: format!("synthetic case seed {}", cfg.seed),
        images: vec![record],
        ground_truth: gts,
        predictions: preds,
    };
    Ok(Some(SynthCase { config: cfg.clone(), dataset, image, dish, planted, seed_used: seed }))
}

/// A copy of `shape` shifted by the smallest offset whose IoU with `mask`
/// lies in `[min_iou, max_iou]`.
fn shifted_twin(
    width: u32,
    height: u32,
    shape: &EllipseModel,
    mask: &RleMask,
    min_iou: f64,
    max_iou: f64,
) -> Option<RleMask> {
    let mut offsets: Vec<(i32, i32)> =
        (-4..=4).flat_map(|dx| (-4..=4).map(move |dy| (dx, dy))).filter(|&o| o != (0, 0)).collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dx, dy));
    offsets.into_iter().find_map(|(dx, dy)| {
        let moved = EllipseModel { cx: shape.cx + dx as f64, cy: shape.cy + dy as f64, ..*shape };
        let m = rasterize_ellipse(width, height, &moved)?;
        let iou = iou_mask(&m, mask).ok()?;
        (iou >= min_iou && iou <= max_iou).then_some(m)
    })
}

/// Generates one case. Redraws from derived seeds until the planted
/// violations satisfy their checks.
pub fn generate_case(cfg: &SynthConfig) -> Result<SynthCase, SynthError> {
    cfg.validate()?;
    for k in 0..MAX_ATTEMPTS {
        if let Some(case) = draw(cfg, derive_seed(cfg.seed, k))? {
            return Ok(case);
        }
    }
    Err(SynthError::NotPlanted(MAX_ATTEMPTS))
}

/// What a probe image in the search fixture checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    /// True colony scored between the planted and the next higher threshold.
    TrueLowScore,
    /// False detection scored between the next lower and planted threshold.
    FalseLowScore,
    /// Cross-class twin with IoU between the planted and next higher threshold.
    TwinAboveDup,
    /// Two real colonies of different classes with IoU below the planted threshold.
    PairBelowDup,
    /// True colony touching the planted shrunk dish but not the next smaller one.
    TrueNearRim,
    /// False detection on the rim, outside the planted shrunk dish.
    FalseOnRim,
    /// True colony whose area lies between the narrower and planted band edges.
    TrueLargeArea,
    /// False detection whose area lies between the planted and wider band edges.
    FalseLargeArea,
}

impl Probe {
    pub const ALL: [Probe; 8] = [
        Probe::TrueLowScore,
        Probe::FalseLowScore,
        Probe::TwinAboveDup,
        Probe::PairBelowDup,
        Probe::TrueNearRim,
        Probe::FalseOnRim,
        Probe::TrueLargeArea,
        Probe::FalseLargeArea,
    ];
}

/// Dataset whose count-optimal configuration is known: every probe image
/// has exact counts under the planted configuration and a wrong count when
/// one parameter moves to the neighbouring grid value it probes.
#[derive(Debug, Clone)]
pub struct SearchFixture {
    pub dataset: Dataset,
    pub planted: PostProcConfig,
    pub space: SearchSpace,
    pub probes: Vec<(ImageId, Probe)>,
}

const FIXTURE_CLEAN: usize = 12;
const FIXTURE_RADIUS: [f64; 2] = [8.5, 9.5];
const FIXTURE_SCORES: [f64; 2] = [0.85, 0.97];

struct ProbeImage {
    gts: Vec<Instance>,
    preds: Vec<Instance>,
    dish: EllipseModel,
}

fn probe_image(seed: u64, image: ImageId, probe: Probe, size: u32) -> Option<ProbeImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dish = auto_dish(&mut rng, size, size);
    let mut c = Canvas::new(rng, size, size, dish);
    let mut ids = IdGen::new(image.0);
    // (mask, label, score) of real colonies, each detected exactly.
    let mut truth: Vec<(RleMask, ClassLabel, f64)> = Vec::new();
    let mut shapes = Vec::new();
    for (shape, mask) in c.place_n(FIXTURE_CLEAN, FIXTURE_RADIUS, Region::Inside(0.85), "colonies").ok()? {
        let label = if c.rng.random_bool(0.7) { ClassLabel::BvgPlus } else { ClassLabel::BvgMinus };
        let score = uniform(&mut c.rng, FIXTURE_SCORES);
        shapes.push(shape);
        truth.push((mask, label, score));
    }
    let mut false_det: Option<(RleMask, ClassLabel, f64)> = None;
    match probe {
        Probe::TrueLowScore => {
            let (_, mask) = c.place(FIXTURE_RADIUS, Region::Inside(0.85))?;
            truth.push((mask, ClassLabel::BvgPlus, 0.75));
        }
        Probe::FalseLowScore => {
            let (_, mask) = c.place(FIXTURE_RADIUS, Region::Inside(0.85))?;
            false_det = Some((mask, ClassLabel::BvgPlus, 0.65));
        }
        Probe::TwinAboveDup => {
            let idx = truth.iter().position(|t| t.1 == ClassLabel::BvgPlus)?;
            let twin = shifted_twin(size, size, &shapes[idx], &truth[idx].0, 0.72, 0.78)?;
            false_det = Some((twin, ClassLabel::BvgMinus, 0.75));
        }
        Probe::PairBelowDup => {
            // Reserve room for both, then put two overlapping colonies in it.
            let (shape, _) = c.place([FIXTURE_RADIUS[0] + 3.0, FIXTURE_RADIUS[1] + 3.0], Region::Inside(0.85))?;
            let small = EllipseModel { a: shape.a - 3.0, b: shape.b - 3.0, ..shape };
            let first = rasterize_ellipse(size, size, &small)?;
            let second = shifted_twin(size, size, &small, &first, 0.62, 0.68)?;
            truth.push((first, ClassLabel::BvgPlus, 0.93));
            truth.push((second, ClassLabel::BvgMinus, 0.90));
        }
        Probe::TrueNearRim => {
            let (_, mask) = c.place(FIXTURE_RADIUS, Region::Rim(0.964, 0.976))?;
            truth.push((mask, ClassLabel::BvgPlus, 0.9));
        }
        Probe::FalseOnRim => {
            let (_, mask) = c.place(FIXTURE_RADIUS, Region::Rim(0.984, 0.996))?;
            false_det = Some((mask, ClassLabel::BvgPlus, 0.9));
        }
        Probe::TrueLargeArea | Probe::FalseLargeArea => {
            // Reserve room for the largest radius tried, then grow a circle
            // until its area lands in the wanted gap between band edges.
            let (shape, _) = c.place([16.0, 16.0], Region::Inside(0.8))?;
            let clean: Vec<f64> = truth.iter().map(|t| t.0.area() as f64).collect();
            let (narrow, wide) = if probe == Probe::TrueLargeArea { (0.95, 0.99) } else { (0.99, 0.999) };
            let mut found = None;
            let mut r = FIXTURE_RADIUS[1];
            while r < 16.0 && found.is_none() {
                let m = rasterize_ellipse(size, size, &EllipseModel::circle(shape.cx, shape.cy, r).ok()?)?;
                let a = m.area() as f64;
                let mut pop = clean.clone();
                pop.push(a);
                let (_, hi_narrow) = reference_band(&pop, narrow)?;
                let (_, hi_wide) = reference_band(&pop, wide)?;
                if a > hi_narrow + 1.0 && a < hi_wide - 1.0 {
                    found = Some(m);
                }
                r += 0.05;
            }
            let m = found?;
            if probe == Probe::TrueLargeArea {
                truth.push((m, ClassLabel::BvgPlus, 0.9));
            } else {
                false_det = Some((m, ClassLabel::BvgPlus, 0.9));
            }
        }
    }

    // Area population at the planted configuration.
    let mut pop: Vec<f64> = truth.iter().map(|t| t.0.area() as f64).collect();
    if let (Probe::FalseLargeArea, Some(f)) = (probe, &false_det) {
        pop.push(f.0.area() as f64);
    }
    // Every ordinary colony must sit inside the narrowest band tried.
    let (lo, hi) = reference_band(&pop, 0.95)?;
    let ordinary = match probe {
        Probe::TrueLargeArea => &truth[..truth.len() - 1],
        _ => &truth[..],
    };
    if !ordinary.iter().all(|t| (t.0.area() as f64) > lo + 1.0 && (t.0.area() as f64) < hi - 1.0) {
        return None;
    }

    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for (mask, label, score) in truth {
        gts.push(instance(ids.gt(), image, label, 1.0, mask.clone(), Origin::GroundTruth));
        preds.push(instance(ids.pred(), image, label, score, mask, Origin::Model));
    }
    if let Some((mask, label, score)) = false_det {
        preds.push(instance(ids.pred(), image, label, score, mask, Origin::Model));
    }
    Some(ProbeImage { gts, preds, dish })
}

/// Eight probe images (alternating train / validation) around the default
/// configuration, with a 3-value grid per parameter.
pub fn search_fixture(seed: u64) -> Result<SearchFixture, SynthError> {
    let size = 256;
    let mut ds = Dataset { id: format!("search-fixture-{seed}"), name: "search fixture".into(), ..Default::default() };
    let mut probes = Vec::new();
    for (k, probe) in Probe::ALL.into_iter().enumerate() {
        let image = ImageId(k as u64 + 1);
        let built = (0..MAX_ATTEMPTS)
            .find_map(|a| probe_image(derive_seed(seed ^ ((k as u64) << 32), a), image, probe, size))
            .ok_or(SynthError::NotPlanted(MAX_ATTEMPTS))?;
        let mut rec = ImageRecord::new(image, size, size);
        rec.dish_ellipse = Some(built.dish);
        rec.ellipse_source = EllipseSource::UserOverride;
        rec.split = if k % 2 == 0 { Split::Train } else { Split::Val };
        ds.images.push(rec);
        ds.ground_truth.extend(built.gts);
        ds.predictions.extend(built.preds);
        probes.push((image, probe));
    }
    Ok(SearchFixture {
        dataset: ds,
        planted: PostProcConfig::default(),
        space: SearchSpace {
            score_threshold: vec![0.6, 0.7, 0.8],
            dup_iou_threshold: vec![0.6, 0.7, 0.8],
            ellipse_shrink: vec![0.96, 0.98, 1.0],
            laplace_ci: vec![0.95, 0.99, 0.999],
        },
        probes,
    })
}
