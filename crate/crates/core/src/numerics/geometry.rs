use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{SignalRng, StreamId};
use super::{NumericsError, SymEigen};

/// A Lebesgue-measure value with its Monte-Carlo standard error. Exact
/// computations carry `standard_error == 0` and `sample_count == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub sample_count: u64,
}

impl VolumeEstimate {
    pub fn exact(value: f64) -> Self {
        VolumeEstimate { value, standard_error: 0.0, sample_count: 0 }
    }

    pub fn is_exact(&self) -> bool {
        self.sample_count == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, NumericsError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(NumericsError::DimensionMismatch(format!(
                "box bounds of length {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l) || !l.is_finite() || !h.is_finite()) {
            return Err(NumericsError::InvalidArgument("box sides must be positive and finite".into()));
        }
        Ok(AxisBox { lo, hi })
    }

    /// The cube `[-r, r]^dim`.
    pub fn centered(dim: usize, half_widths: &[f64]) -> Result<Self, NumericsError> {
        if half_widths.len() != dim {
            return Err(NumericsError::DimensionMismatch("half widths".into()));
        }
        AxisBox::new(half_widths.iter().map(|r| -r).collect(), half_widths.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HullArea {
    pub area: f64,
    /// Fewer than three points, or all of them collinear.
    pub degenerate: bool,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Area of the convex hull (Andrew's monotone chain, then shoelace).
pub fn convex_hull_area_2d(points: &[[f64; 2]]) -> HullArea {
    let degenerate = HullArea { area: 0.0, degenerate: true };
    let mut pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0].is_finite() && p[1].is_finite()).collect();
    if pts.len() < 3 {
        return degenerate;
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return degenerate;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return degenerate;
    }
    let mut twice = 0.0;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        twice += a[0] * b[1] - a[1] * b[0];
    }
    let area = 0.5 * twice.abs();
    HullArea { area, degenerate: area == 0.0 }
}

const MC_CHUNK: u64 = 1 << 15;

/// Hit-rate estimate of the volume of `{x in box : membership(x)}`.
///
/// Samples are split into fixed-size chunks, each drawing from its own
/// stream of `seed`, so the result does not depend on the thread count.
pub fn mc_volume<F>(membership: F, bounds: &AxisBox, samples: u64, seed: u64) -> VolumeEstimate
where
    F: Fn(&[f64]) -> bool + Sync,
{
    let samples = samples.max(1);
    let dim = bounds.dim();
    let chunks = samples.div_ceil(MC_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = SignalRng::new(seed, StreamId::Custom(c));
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut x = vec![0.0; dim];
            let mut h = 0u64;
            for _ in 0..count {
                for (k, xk) in x.iter_mut().enumerate() {
                    *xk = bounds.lo[k] + (bounds.hi[k] - bounds.lo[k]) * rng.uniform();
                }
                if membership(&x) {
                    h += 1;
                }
            }
            h
        })
        .sum();
    let vol = bounds.volume();
    let p = hits as f64 / samples as f64;
    VolumeEstimate {
        value: vol * p,
        standard_error: vol * (p * (1.0 - p) / samples as f64).sqrt(),
        sample_count: samples,
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Perimeter of the ellipse with semi-axes `a`, `b`, by adaptive Simpson
/// quadrature to an absolute tolerance of 1e-9.
pub fn ellipse_perimeter(a: f64, b: f64) -> f64 {
    let (a, b) = (a.abs(), b.abs());
    if a == 0.0 || b == 0.0 {
        return 4.0 * a.max(b);
    }
    let f = move |t: f64| (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
    // Quarter arc times four; the integrand is smooth on [0, π/2].
    let (lo, hi) = (0.0, std::f64::consts::FRAC_PI_2);
    let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
    let whole = simpson(lo, hi, flo, fmid, fhi);
    4.0 * adaptive_simpson(&f, lo, hi, flo, fmid, fhi, whole, 0.25e-9, 40)
}

/// Euclidean distance from `x` to the ellipsoid `{y : yᵀHy ≤ 1}`, given the
/// eigendecomposition of the positive definite `H`.
pub fn ellipsoid_distance(h: &SymEigen, x: &[f64]) -> f64 {
    let dim = h.values.len();
    debug_assert_eq!(dim, x.len());
    // Coordinates in the eigenbasis.
    let p: Vec<f64> = (0..dim)
        .map(|j| (0..dim).map(|i| h.vectors[(i, j)] * x[i]).sum())
        .collect();
    let inside: f64 = p.iter().zip(&h.values).map(|(pi, hi)| hi * pi * pi).sum();
    if inside <= 1.0 {
        return 0.0;
    }
    // Closest point y = (I + tH)^{-1} p with yᵀHy = 1; g is convex and
    // decreasing in t, so Newton from t = 0 converges monotonically.
    let g = |t: f64| -> (f64, f64) {
        let mut val = -1.0;
        let mut der = 0.0;
        for (pi, hi) in p.iter().zip(&h.values) {
            let d = 1.0 + t * hi;
            val += hi * pi * pi / (d * d);
            der += -2.0 * hi * hi * pi * pi / (d * d * d);
        }
        (val, der)
    };
    let mut t = 0.0;
    for _ in 0..100 {
        let (val, der) = g(t);
        if val <= 1e-14 || der == 0.0 {
            break;
        }
        let step = val / der;
        t -= step;
        if step.abs() <= 1e-15 * t.abs().max(1e-300) {
            break;
        }
    }
    p.iter()
        .zip(&h.values)
        .map(|(pi, hi)| {
            let yi = pi / (1.0 + t * hi);
            (pi - yi) * (pi - yi)
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::super::{symmetric_eigen, SymMatrix};
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn hull_trivial_shapes() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(convex_hull_area_2d(&square).area, 1.0);
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(convex_hull_area_2d(&tri).area, 0.5);
    }

    #[test]
    fn hull_degenerate() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let h = convex_hull_area_2d(&line);
        assert!(h.degenerate);
        assert_eq!(h.area, 0.0);
        assert!(convex_hull_area_2d(&[[0.0, 0.0], [1.0, 0.0]]).degenerate);
    }

    #[test]
    fn hull_of_disc_samples() {
        let mut rng = SignalRng::new(5, StreamId::Test);
        let mut pts = Vec::with_capacity(100_000);
        while pts.len() < 100_000 {
            let x = 2.0 * rng.uniform() - 1.0;
            let y = 2.0 * rng.uniform() - 1.0;
            if x * x + y * y <= 1.0 {
                pts.push([x, y]);
            }
        }
        let a = convex_hull_area_2d(&pts).area;
        assert!((a - PI).abs() / PI < 0.02, "{a}");
    }

    #[test]
    fn mc_volume_examples() {
        let unit = AxisBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let all = mc_volume(|_| true, &unit, 100_000, 1);
        assert_eq!(all.value, 1.0);
        assert_eq!(all.standard_error, 0.0);
        assert_eq!(mc_volume(|_| false, &unit, 1000, 1).value, 0.0);

        let b = AxisBox::centered(2, &[1.0, 1.0]).unwrap();
        let disc = mc_volume(|x| x[0] * x[0] + x[1] * x[1] <= 1.0, &b, 1_000_000, 9);
        assert!((disc.value - PI).abs() <= 3.0 * disc.standard_error, "{disc:?}");
    }

    #[test]
    fn mc_volume_is_deterministic() {
        let b = AxisBox::centered(3, &[1.0, 1.0, 1.0]).unwrap();
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() <= 1.0;
        assert_eq!(mc_volume(f, &b, 100_003, 4), mc_volume(f, &b, 100_003, 4));
    }

    #[test]
    fn ellipse_perimeter_values() {
        assert!((ellipse_perimeter(1.0, 1.0) - 2.0 * PI).abs() < 1e-9);
        // Complete elliptic integral oracle: 4·2·E(m = 3/4).
        assert!((ellipse_perimeter(2.0, 1.0) - 9.688448220547675).abs() < 1e-9);
    }

    #[test]
    fn ellipsoid_distance_axis_aligned() {
        let h = symmetric_eigen(&SymMatrix::from_diagonal(&[1.0 / 4.0, 1.0]));
        assert_eq!(ellipsoid_distance(&h, &[1.0, 0.5]), 0.0);
        assert!((ellipsoid_distance(&h, &[5.0, 0.0]) - 3.0).abs() < 1e-12);
        assert!((ellipsoid_distance(&h, &[0.0, -3.0]) - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hull_area_rotation_invariant(
            pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..60),
            theta in 0.0f64..(2.0 * PI),
        ) {
            let p: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let (c, s) = (theta.cos(), theta.sin());
            let q: Vec<[f64; 2]> = p.iter().map(|v| [c * v[0] - s * v[1], s * v[0] + c * v[1]]).collect();
            let a = convex_hull_area_2d(&p).area;
            let b = convex_hull_area_2d(&q).area;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }
    }
}
