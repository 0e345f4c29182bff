//! Uncompressed run-length masks.
//!
//! Runs are laid out in column-major scan order (pixel `(x, y)` has linear
//! index `x * height + y`) and alternate background/foreground starting with
//! background. A mask whose first pixel is foreground starts with a zero run.

use serde::{Deserialize, Serialize};

use super::{BBox, GeometryError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Builds a mask from run lengths, checking that they cover the image.
    pub fn new(width: u32, height: u32, counts: Vec<u32>) -> Result<Self, GeometryError> {
        let m = Self { width, height, counts };
        if !m.is_consistent() {
            return Err(GeometryError::RleLength {
                expected: width as u64 * height as u64,
                got: m.counts.iter().map(|&c| c as u64).sum(),
            });
        }
        Ok(m)
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self { width, height, counts: vec![width * height] }
    }

    /// Encodes the mask `f(x, y)` evaluated over every pixel.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..width {
            for y in 0..height {
                let v = f(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self { width, height, counts }
    }

    /// Encodes a dense column-major pixel buffer.
    pub fn from_column_major(width: u32, height: u32, pixels: &[bool]) -> Self {
        let h = height as usize;
        Self::from_fn(width, height, |x, y| pixels[x as usize * h + y as usize])
    }

    /// Decodes to a dense column-major buffer.
    pub fn to_column_major(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        let mut value = false;
        for &c in &self.counts {
            out.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        out
    }

    pub fn is_consistent(&self) -> bool {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        !self.counts.is_empty() && total == self.width as u64 * self.height as u64
    }

    /// Foreground runs as half-open linear index ranges.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as u64;
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    /// Foreground pixel coordinates in scan order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let h = self.height as u64;
        self.foreground_runs()
            .flat_map(move |(s, e)| (s..e).map(move |i| ((i / h) as u32, (i % h) as u32)))
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = x as u64 * self.height as u64 + y as u64;
        self.foreground_runs().any(|(s, e)| s <= idx && idx < e)
    }

    /// Tight box around the foreground, `None` for an empty mask.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let h = self.height as u64;
        if h == 0 {
            return None;
        }
        let mut bounds: Option<(u64, u64, u64, u64)> = None;
        for (s, e) in self.foreground_runs() {
            let (x0, y0) = (s / h, s % h);
            let (x1, y1) = ((e - 1) / h, (e - 1) % h);
            // A run spanning several columns reaches the bottom of its first
            // column and the top of its last one.
            let (ymin, ymax) = if x0 == x1 { (y0, y1) } else { (0, h - 1) };
            bounds = Some(match bounds {
                None => (x0, x1, ymin, ymax),
                Some((a, b, c, d)) => (a.min(x0), b.max(x1), c.min(ymin), d.max(ymax)),
            });
        }
        bounds.map(|(x0, x1, y0, y1)| {
            BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64)
        })
    }

    fn check_same_size(&self, other: &RleMask) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch {
                left: (self.width, self.height),
                right: (other.width, other.height),
            });
        }
        Ok(())
    }

    /// Number of pixels set in both masks, computed by sweeping the run lists.
    pub fn intersection_area(&self, other: &RleMask) -> Result<u64, GeometryError> {
        self.check_same_size(other)?;
        let mut a = self.foreground_runs().peekable();
        let mut b = other.foreground_runs().peekable();
        let mut inter = 0u64;
        while let (Some(&(s1, e1)), Some(&(s2, e2))) = (a.peek(), b.peek()) {
            let lo = s1.max(s2);
            let hi = e1.min(e2);
            if hi > lo {
                inter += hi - lo;
            }
            if e1 <= e2 {
                a.next();
            } else {
                b.next();
            }
        }
        Ok(inter)
    }
}

/// Foreground IoU computed on run lists; 0 when both masks are empty.
pub fn iou_mask(p: &RleMask, q: &RleMask) -> Result<f64, GeometryError> {
    let inter = p.intersection_area(q)?;
    let union = p.area() + q.area() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

pub fn mask_area(m: &RleMask) -> u64 {
    m.area()
}
