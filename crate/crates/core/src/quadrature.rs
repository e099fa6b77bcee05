//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

// Nodes and weights are tabulated beyond f64 precision.
#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5, 7.
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    /// Maximum number of interval bisections.
    pub max_subdivisions: usize,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self { abs: 0.0, rel, max_subdivisions: 2000 }
    }

    pub fn with_abs(mut self, abs: f64) -> Self {
        self.abs = abs;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Interval {}

impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 15-point Kronrod rule on `[a, b]`, with `|K15 − G7|` as error.
fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Interval {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    Interval { a, b, value: k * h, error: ((k - g) * h).abs() }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    integrate_pieces(f, &[a, b], tol)
}

/// Integrates `f` over `[points[0], points[last]]`, never evaluating across an
/// interior point (kinks and jumps belong there).
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], tol: Tolerance) -> Result<Estimate> {
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in points.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod(&mut f, w[0], w[1]));
            evaluations += 15;
        }
    }
    let totals = |heap: &BinaryHeap<Interval>| heap.iter().fold((0.0, 0.0), |(v, e), i| (v + i.value, e + i.error));
    let (mut value, mut error) = totals(&heap);
    let mut splits = 0;
    while error > tol.abs.max(tol.rel * value.abs()) {
        if splits >= tol.max_subdivisions {
            return Err(Error::QuadratureNotConverged { estimate: value, error });
        }
        let worst = heap.pop().expect("at least one interval");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine resolution
            heap.push(Interval { error: 0.0, ..worst });
        } else {
            heap.push(kronrod(&mut f, worst.a, mid));
            heap.push(kronrod(&mut f, mid, worst.b));
            evaluations += 30;
        }
        splits += 1;
        (value, error) = totals(&heap);
    }
    Ok(Estimate { value, error, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomials_are_exact() {
        let e = integrate(|x| x.powi(13) - 3.0 * x * x, 0.0, 2.0, Tolerance::relative(1e-14)).unwrap();
        assert!((e.value - (2f64.powi(14) / 14.0 - 8.0)).abs() < 1e-10);
        assert_eq!(e.evaluations, 15);
    }

    #[test]
    fn oscillatory_and_kinked() {
        let e = integrate(|x| (50.0 * x).sin().powi(2), 0.0, PI, Tolerance::relative(1e-12)).unwrap();
        assert!((e.value - PI / 2.0).abs() < 1e-11);
        let e = integrate_pieces(|x: f64| (x - 0.3).abs(), &[0.0, 0.3, 1.0], Tolerance::relative(1e-14)).unwrap();
        assert!((e.value - (0.045 + 0.245)).abs() < 1e-15);
    }

    #[test]
    fn singular_integrand_reports_failure() {
        let tol = Tolerance { abs: 0.0, rel: 1e-12, max_subdivisions: 50 };
        let r = integrate(|x: f64| 1.0 / x.abs().sqrt().max(1e-300), -1.0, 1.0, tol);
        assert!(matches!(r, Err(Error::QuadratureNotConverged { .. })));
    }
}
