//! Petri-dish ellipse: representation, direct least-squares fit, shrink and
//! containment.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Ellipse in center / semi-axes / rotation form.
///
/// `a` is the semi-major axis and lies along direction `theta` (radians from
/// +x towards +y, image coordinates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseModel {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl EllipseModel {
    /// Builds an ellipse in canonical form: axes swapped so that `a >= b`,
    /// `theta` wrapped into `[0, π)`.
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Result<Self, GeometryError> {
        let vals = [cx, cy, a, b, theta];
        if vals.iter().any(|v| !v.is_finite()) || a <= 0.0 || b <= 0.0 {
            return Err(GeometryError::InvalidEllipse);
        }
        let (a, b, theta) = if b > a { (b, a, theta + PI / 2.0) } else { (a, b, theta) };
        let mut theta = theta.rem_euclid(PI);
        if theta >= PI {
            theta = 0.0;
        }
        Ok(Self { cx, cy, a, b, theta })
    }

    pub fn circle(cx: f64, cy: f64, r: f64) -> Result<Self, GeometryError> {
        Self::new(cx, cy, r, r, 0.0)
    }

    /// True when the stored fields satisfy `a >= b > 0`, `theta ∈ [0, π)`.
    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.a, self.b, self.theta].iter().all(|v| v.is_finite())
            && self.b > 0.0
            && self.a >= self.b
            && (0.0..PI).contains(&self.theta)
    }

    /// Left-hand side of the interior inequality `(u/a)² + (v/b)² ≤ 1`, where
    /// `(u, v)` are the point's coordinates in the ellipse frame.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    /// Boundary points count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.value(x, y) <= 1.0
    }

    /// Point on the boundary at parameter `t`.
    pub fn point_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (self.cx + u * c - v * s, self.cy + u * s + v * c)
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    /// Axis-aligned extent `(x_min, y_min, x_max, y_max)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (self.cx - hx, self.cy - hy, self.cx + hx, self.cy + hy)
    }
}

/// Scales both semi-axes by `factor` about the same center and rotation.
pub fn shrink_ellipse(e: &EllipseModel, factor: f64) -> EllipseModel {
    EllipseModel { a: e.a * factor, b: e.b * factor, ..*e }
}

/// Direct least-squares ellipse fit.
///
/// Minimises the algebraic distance of the points to a conic subject to the
/// ellipse constraint `4AC - B² = 1`, using the block-reduced 3×3 form of the
/// generalised eigenproblem. Points are centred and scaled before fitting.
pub fn fit_ellipse(points: &[(f64, f64)]) -> Result<EllipseModel, GeometryError> {
    let n = points.len();
    if n < 6 {
        return Err(GeometryError::TooFewPoints { needed: 6, got: n });
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(GeometryError::DegenerateFit);
    }

    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (mx, my) = (mx / n as f64, my / n as f64);
    let rms = (points
        .iter()
        .map(|(x, y)| (x - mx).powi(2) + (y - my).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    if rms <= f64::EPSILON {
        return Err(GeometryError::DegenerateFit);
    }
    let scale = 1.0 / rms;

    // Scatter blocks of the quadratic (x², xy, y²) and linear (x, y, 1) parts.
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for (px, py) in points {
        let x = (px - mx) * scale;
        let y = (py - my) * scale;
        let q = Vector3::new(x * x, x * y, y * y);
        let l = Vector3::new(x, y, 1.0);
        s1 += q * q.transpose();
        s2 += q * l.transpose();
        s3 += l * l.transpose();
    }

    let s3_inv = s3.try_inverse().ok_or(GeometryError::DegenerateFit)?;
    let t = -(s3_inv * s2.transpose());
    let reduced = s1 + s2 * t;
    // Inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]].
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let system = c1_inv * reduced;

    // Near-exact data can leave a tiny imaginary part on the real roots.
    let eigenvalues = system.complex_eigenvalues();
    let scale_eig = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);

    let mut best: Option<(Vector3<f64>, f64)> = None;
    for z in eigenvalues.iter() {
        if z.im.abs() > 1e-6 * scale_eig || !z.re.is_finite() {
            continue;
        }
        let lambda = z.re;
        let Some(v) = null_vector(&(system - Matrix3::identity() * lambda)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint > 0.0 {
            // Several candidates only appear with numerical noise; keep the
            // one with the smallest non-negative eigenvalue.
            if best.is_none_or(|(_, l)| lambda.abs() < l.abs()) {
                best = Some((v, lambda));
            }
        }
    }
    let (quad, _) = best.ok_or(GeometryError::NotAnEllipse)?;
    let lin = t * quad;
    let conic = [quad[0], quad[1], quad[2], lin[0], lin[1], lin[2]];
    let unit = conic_to_ellipse(&conic)?;
    EllipseModel::new(
        mx + unit.cx / scale,
        my + unit.cy / scale,
        unit.a / scale,
        unit.b / scale,
        unit.theta,
    )
}

/// Null vector of a (numerically) rank-2 3×3 matrix: the largest cross
/// product of two of its rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r0 = m.row(0).transpose();
    let r1 = m.row(1).transpose();
    let r2 = m.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .into_iter()
        .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))?;
    let norm = best.norm();
    (norm > 0.0 && norm.is_finite()).then(|| best / norm)
}

/// Converts `A x² + B xy + C y² + D x + E y + F = 0` to geometric form.
pub fn conic_to_ellipse(c: &[f64; 6]) -> Result<EllipseModel, GeometryError> {
    let [a, b, cc, d, e, f] = *c;
    let det = 4.0 * a * cc - b * b;
    if det <= 0.0 || !det.is_finite() {
        return Err(GeometryError::NotAnEllipse);
    }
    let cx = (b * e - 2.0 * cc * d) / det;
    let cy = (b * d - 2.0 * a * e) / det;
    let f0 = a * cx * cx + b * cx * cy + cc * cy * cy + d * cx + e * cy + f;

    // Eigen-decomposition of the quadratic part [[a, b/2], [b/2, c]].
    let mean = (a + cc) / 2.0;
    let diff = (a - cc) / 2.0;
    let radius = (diff * diff + b * b / 4.0).sqrt();
    let l1 = mean - radius;
    let l2 = mean + radius;
    // Interior requires -f0 / λ > 0 for both eigenvalues.
    let s1 = -f0 / l1;
    let s2 = -f0 / l2;
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(GeometryError::NotAnEllipse);
    }
    // The smaller |λ| gives the longer axis.
    let (major_sq, minor_sq, lambda_major) = if s1 >= s2 { (s1, s2, l1) } else { (s2, s1, l2) };
    let theta = if radius <= f64::EPSILON * mean.abs().max(1.0) {
        0.0
    } else {
        // Eigenvector of [[a, b/2], [b/2, c]] for lambda_major.
        let (vx, vy) = if (a - lambda_major).abs() >= (cc - lambda_major).abs() {
            (-b / 2.0, a - lambda_major)
        } else {
            (cc - lambda_major, -b / 2.0)
        };
        vy.atan2(vx)
    };
    EllipseModel::new(cx, cy, major_sq.sqrt(), minor_sq.sqrt(), theta)
}
