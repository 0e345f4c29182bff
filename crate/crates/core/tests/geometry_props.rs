use std::f64::consts::PI;

use cfu_core::geometry::{fit_ellipse, iou_bbox, iou_mask, shrink_ellipse, EllipseModel, RleMask};
use cfu_core::postproc::{fit_laplace, laplace_quantile, LaplaceParams};
use cfu_core::BBox;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(max: u32) -> impl Strategy<Value = (u32, u32, Vec<bool>)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), proptest::collection::vec(any::<bool>(), (w * h) as usize))
    })
}

fn dense_pair(max: u32) -> impl Strategy<Value = (u32, u32, Vec<bool>, Vec<bool>)> {
    (1..=max, 1..=max, 0.0..1.0f64, 0.0..1.0f64).prop_flat_map(|(w, h, pa, pb)| {
        let n = (w * h) as usize;
        (
            Just(w),
            Just(h),
            proptest::collection::vec(proptest::bool::weighted(pa), n),
            proptest::collection::vec(proptest::bool::weighted(pb), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn rle_round_trip((w, h, px) in dense(64)) {
        let m = RleMask::from_column_major(w, h, &px);
        prop_assert!(m.is_consistent());
        prop_assert_eq!(m.to_column_major(), px.clone());
        prop_assert_eq!(m.area(), px.iter().filter(|&&b| b).count() as u64);
    }

    #[test]
    fn mask_iou_is_exact((w, h, a, b) in dense_pair(64)) {
        let (ma, mb) = (RleMask::from_column_major(w, h, &a), RleMask::from_column_major(w, h, &b));
        let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
        let want = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        let got = iou_mask(&ma, &mb).unwrap();
        prop_assert_eq!(got, want);
        prop_assert_eq!(iou_mask(&mb, &ma).unwrap(), got);
        prop_assert!((0.0..=1.0).contains(&got));
        if ma.area() > 0 {
            prop_assert_eq!(iou_mask(&ma, &ma).unwrap(), 1.0);
        }
    }

    #[test]
    fn box_iou_bounds(a in (0.0..50.0f64, 0.0..50.0f64, 0.1..20.0f64, 0.1..20.0f64),
                      b in (0.0..50.0f64, 0.0..50.0f64, 0.1..20.0f64, 0.1..20.0f64)) {
        let p = BBox::from_xywh(a.0, a.1, a.2, a.3);
        let q = BBox::from_xywh(b.0, b.1, b.2, b.3);
        let v = iou_bbox(&p, &q);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou_bbox(&q, &p));
        prop_assert!((iou_bbox(&p, &p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shrink_keeps_center_rotation_and_aspect(
        cx in -100.0..100.0f64, cy in -100.0..100.0f64,
        a in 1.0..200.0f64, ratio in 0.2..1.0f64, theta in 0.0..PI, s in 0.01..1.0f64,
    ) {
        let e = EllipseModel::new(cx, cy, a, a * ratio, theta).unwrap();
        let r = shrink_ellipse(&e, s);
        prop_assert_eq!((r.cx, r.cy, r.theta), (e.cx, e.cy, e.theta));
        prop_assert!(((r.a / r.b) - (e.a / e.b)).abs() <= 1e-12 * (e.a / e.b));
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[test]
fn noiseless_ellipses_recover_to_1e6() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let a = rng.random_range(20.0..300.0);
        let b = a * rng.random_range(0.3..0.95);
        let e = EllipseModel::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), a, b, rng.random_range(0.0..PI))
            .unwrap();
        let n = rng.random_range(6..80);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| e.point_at(rng.random_range(0.0..2.0 * PI))).collect();
        let f = fit_ellipse(&pts).unwrap();
        assert!((f.cx - e.cx).abs() <= 1e-6 * e.a && (f.cy - e.cy).abs() <= 1e-6 * e.a, "{e:?} {f:?}");
        assert!(rel(f.a, e.a) <= 1e-6 && rel(f.b, e.b) <= 1e-6, "{e:?} {f:?}");
        assert!(angle_diff(f.theta, e.theta) <= 1e-6, "{e:?} {f:?}");
    }
}

#[test]
fn one_percent_noise_keeps_center_within_one_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let a = rng.random_range(50.0..300.0);
        let e = EllipseModel::new(0.0, 0.0, a, a * rng.random_range(0.5..0.95), rng.random_range(0.0..PI)).unwrap();
        let sigma = 0.01 * e.b;
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|k| {
                let (x, y) = e.point_at(2.0 * PI * k as f64 / 200.0);
                // Box-Muller
                let (u1, u2): (f64, f64) = (rng.random_range(1e-12..1.0), rng.random_range(0.0..1.0));
                let r = (-2.0 * u1.ln()).sqrt() * sigma;
                (x + r * (2.0 * PI * u2).cos(), y + r * (2.0 * PI * u2).sin())
            })
            .collect();
        let f = fit_ellipse(&pts).unwrap();
        assert!(f.cx.hypot(f.cy) < 0.01 * e.a, "{e:?} {f:?}");
    }
}

/// Maximises the Laplace log-likelihood by bisection on its (sub)gradients:
/// in `mu` the sign of #(x < mu) - #(x > mu), in `b` the sign of
/// -n/b + S/b².
fn numeric_laplace_mle(xs: &[f64]) -> LaplaceParams {
    let (mut lo, mut hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let below = xs.iter().filter(|&&x| x < mid).count() as i64;
        let above = xs.iter().filter(|&&x| x > mid).count() as i64;
        match below.cmp(&above) {
            std::cmp::Ordering::Less => lo = mid,
            std::cmp::Ordering::Greater => hi = mid,
            std::cmp::Ordering::Equal => {
                lo = mid;
                hi = mid;
            }
        }
    }
    // For odd n the subgradient changes sign at a sample; snap to it.
    let mu = *xs.iter().min_by(|a, b| (*a - lo).abs().total_cmp(&(*b - lo).abs())).unwrap();
    let n = xs.len() as f64;
    let s: f64 = xs.iter().map(|x| (x - mu).abs()).sum();
    let (mut blo, mut bhi) = (1e-12, 1e12);
    for _ in 0..5000 {
        let mid = 0.5 * (blo + bhi);
        if mid <= blo || mid >= bhi {
            break;
        }
        if -n / mid + s / (mid * mid) > 0.0 {
            blo = mid;
        } else {
            bhi = mid;
        }
    }
    LaplaceParams { mu, b: 0.5 * (blo + bhi) }
}

#[test]
fn laplace_mle_matches_numeric_maximisation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..300 {
        let n = 2 * rng.random_range(1..60) + 1;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(10.0..800.0)).collect();
        let fit = fit_laplace(&xs).unwrap();
        let num = numeric_laplace_mle(&xs);
        assert!(rel(fit.mu, num.mu) <= 1e-9, "{fit:?} {num:?}");
        assert!(rel(fit.b, num.b) <= 1e-9, "{fit:?} {num:?}");
    }
}

#[test]
fn laplace_quantile_closed_form() {
    let p = LaplaceParams { mu: 0.0, b: 1.0 };
    assert!((laplace_quantile(&p, 0.995).unwrap() - 100f64.ln()).abs() <= 1e-12);
    assert!((laplace_quantile(&p, 0.005).unwrap() + 100f64.ln()).abs() <= 1e-12);
    assert_eq!(laplace_quantile(&p, 0.5).unwrap(), 0.0);
}
