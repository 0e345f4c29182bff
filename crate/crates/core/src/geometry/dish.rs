//! Dish boundary estimation from pixel data.
//!
//! Sobel gradient magnitude, threshold at the 99th percentile of all
//! gradient values (zero gradients never count as edges), keep the largest
//! 8-connected edge set and fit an ellipse through its pixel centers.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::ellipse::{fit_ellipse, EllipseModel};

const EDGE_PERCENTILE: f64 = 0.99;
/// Minimum major-axis length as a fraction of the image diagonal.
const MIN_DIAGONAL_COVERAGE: f64 = 0.5;
/// Half-extent fraction of the default inscribed ellipse.
const DEFAULT_INSCRIBED: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DishSource {
    Fitted,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DishEstimate {
    pub ellipse: EllipseModel,
    pub source: DishSource,
}

/// Centered ellipse spanning 95% of the image half-extents.
pub fn inscribed_ellipse(width: u32, height: u32) -> EllipseModel {
    let (w, h) = (width as f64, height as f64);
    EllipseModel::new(
        w / 2.0,
        h / 2.0,
        DEFAULT_INSCRIBED * w / 2.0,
        DEFAULT_INSCRIBED * h / 2.0,
        0.0,
    )
    .unwrap_or(EllipseModel { cx: w / 2.0, cy: h / 2.0, a: 1.0, b: 1.0, theta: 0.0 })
}

pub fn estimate_dish_ellipse(image: &GrayImage, fallback: Option<EllipseModel>) -> DishEstimate {
    let (w, h) = image.dimensions();
    let fall_back = || DishEstimate {
        ellipse: fallback.unwrap_or_else(|| inscribed_ellipse(w, h)),
        source: DishSource::Fallback,
    };
    let points = largest_edge_set(image);
    let Ok(ellipse) = fit_ellipse(&points) else {
        return fall_back();
    };
    let diagonal = ((w as f64).powi(2) + (h as f64).powi(2)).sqrt();
    if 2.0 * ellipse.a < MIN_DIAGONAL_COVERAGE * diagonal {
        return fall_back();
    }
    DishEstimate { ellipse, source: DishSource::Fitted }
}

fn gradient_magnitude(image: &GrayImage) -> Vec<f64> {
    let (w, h) = image.dimensions();
    let (w, h) = (w as usize, h as usize);
    let px = |x: usize, y: usize| image.as_raw()[y * w + x] as f64;
    let mut out = vec![0.0; w * h];
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Pixel centers of the largest 8-connected set of strong-gradient pixels.
fn largest_edge_set(image: &GrayImage) -> Vec<(f64, f64)> {
    let (w, h) = image.dimensions();
    let (w, h) = (w as usize, h as usize);
    let grad = gradient_magnitude(image);
    if grad.is_empty() {
        return Vec::new();
    }
    let mut sorted = grad.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * EDGE_PERCENTILE).round() as usize;
    let threshold = sorted[idx];
    let is_edge: Vec<bool> = grad.iter().map(|&g| g > 0.0 && g >= threshold).collect();

    let mut label = vec![usize::MAX; w * h];
    let mut best: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !is_edge[start] || label[start] != usize::MAX {
            continue;
        }
        let mut component = Vec::new();
        label[start] = start;
        stack.push(start);
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if is_edge[j] && label[j] == usize::MAX {
                        label[j] = start;
                        stack.push(j);
                    }
                }
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }
    best.sort_unstable();
    best.into_iter()
        .map(|i| ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))
        .collect()
}
