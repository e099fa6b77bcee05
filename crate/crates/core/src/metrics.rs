//! Frobenius-norm quality measure of a pulse and Monte-Carlo statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::{Bloch, Unitary2};

/// Unitarity tolerance accepted by [`frobenius_from_unitary`].
pub const UNITARITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrobeniusSample {
    pub delta_f_squared: f64,
    /// `(Δ_F^(x))², (Δ_F^(y))², (Δ_F^(z))²`.
    pub partials: [f64; 3],
}

impl FrobeniusSample {
    pub fn delta_f(&self) -> f64 {
        self.delta_f_squared.sqrt()
    }
}

/// Partial norms from the density-matrix differences of the three fully
/// polarised inputs, and their average.
///
/// `(Δ_F^(α))² = Tr(ρ₀ − U ρ₀ U†)² = ¼‖σ_α − U σ_α U†‖²`, which is free of
/// the `1 − Tr(…)` cancellation for nearly ideal pulses.
pub fn frobenius_from_unitary(u_correcting: &Unitary2) -> Result<FrobeniusSample> {
    let deviation = u_correcting.unitarity_error();
    if !(deviation <= UNITARITY_TOLERANCE) {
        return Err(Error::NotUnitary { deviation });
    }
    Ok(frobenius_unchecked(u_correcting))
}

pub(crate) fn frobenius_unchecked(u: &Unitary2) -> FrobeniusSample {
    let ud = u.adjoint();
    let mut partials = [0.0; 3];
    for (axis, p) in partials.iter_mut().enumerate() {
        let s = Unitary2::pauli(axis);
        let rotated = *u * s * ud;
        *p = 0.25 * s.sub(&rotated).norm_sqr();
    }
    let total = (partials[0] + partials[1] + partials[2]) / 3.0;
    debug_assert!(
        (total - frobenius_shortcut(u)).abs() < 1e-10,
        "trace formula and rotation-averaged shortcut disagree"
    );
    FrobeniusSample { delta_f_squared: total, partials }
}

/// `1 − (1/6) Σ_α Tr(σ_α U σ_α U†)`.
pub fn frobenius_trace_formula(u: &Unitary2) -> f64 {
    let ud = u.adjoint();
    let sum: f64 = (0..3)
        .map(|a| {
            let s = Unitary2::pauli(a);
            (s * *u * s * ud).trace().re
        })
        .sum();
    1.0 - sum / 6.0
}

/// `(4/3)(1 − |Tr U|²/4)`; for SU(2) this is `(4/3) sin²|μ|`.
pub fn frobenius_shortcut(u: &Unitary2) -> f64 {
    4.0 / 3.0 * (1.0 - u.trace().norm_sqr() / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Polarisation along this axis after an ideal π flip about x.
    pub fn ideal_after_flip(self) -> f64 {
        match self {
            Axis::X => 1.0,
            Axis::Y | Axis::Z => -1.0,
        }
    }

    pub fn unit(self) -> Bloch {
        let mut b = [0.0; 3];
        b[self.index()] = 1.0;
        b
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::InvalidConfig(format!("unknown axis '{s}'"))),
        }
    }
}

/// `|⟨σ_α⟩ − ideal|` for a unit Bloch vector `b`, evaluated as
/// `(b_β² + b_γ²)/(1 + s·b_α)` near the ideal value `s`.
pub fn final_deviation(b: Bloch, axis: Axis) -> f64 {
    let s = axis.ideal_after_flip();
    let a = axis.index();
    let along = s * b[a];
    if along > 0.0 {
        let perp: f64 = (0..3).filter(|&k| k != a).map(|k| b[k] * b[k]).sum();
        perp / (1.0 + along)
    } else {
        1.0 - along
    }
}

/// Final deviation of the polarisation from its ideal value, plus the
/// in-pulse record `(t, ⟨σ_α(t)⟩)`.
pub fn polarization_deviation(trajectory: Option<&[(f64, Bloch)]>, axis: Axis) -> Result<(f64, Vec<(f64, f64)>)> {
    let traj = trajectory.filter(|t| !t.is_empty()).ok_or(Error::MissingTrajectory)?;
    let start = traj[0].1;
    if (start[axis.index()] - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("trajectory does not start polarised along {axis:?}")));
    }
    let path = traj.iter().map(|(t, b)| (*t, b[axis.index()])).collect();
    Ok((final_deviation(traj[traj.len() - 1].1, axis), path))
}

/// Double-double accumulator (error-free `TwoSum` on every addition).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = two_sum(s, self.lo + e);
        self.hi = hi;
        self.lo = lo;
    }

    pub fn merge(&mut self, other: &Self) {
        let (s, e) = two_sum(self.hi, other.hi);
        let (hi, lo) = two_sum(s, e + self.lo + other.lo);
        self.hi = hi;
        self.lo = lo;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }

    /// `sum / n` with one correction step on the quotient.
    pub fn divided_by(&self, n: f64) -> f64 {
        let q = self.hi / n;
        // residual hi − q·n, exact through fma
        let r = (-q).mul_add(n, self.hi) + self.lo;
        q + r / n
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        let mut s = Self::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Chunk length of the deterministic reduction.
pub const REDUCTION_CHUNK: usize = 1024;

impl SampleStats {
    /// Two-pass mean / standard error; partial sums over fixed chunks are
    /// merged left to right.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, count: 0 };
        }
        let chunked = |f: &dyn Fn(f64) -> f64| {
            let mut total = CompensatedSum::default();
            for chunk in values.chunks(REDUCTION_CHUNK) {
                let part: CompensatedSum = chunk.iter().map(|&x| f(x)).collect();
                total.merge(&part);
            }
            total
        };
        let mean = chunked(&|x| x).divided_by(n as f64);
        let stderr = if n > 1 {
            let ss = chunked(&|x| (x - mean) * (x - mean)).value();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, count: n }
    }

    pub fn relative_error(&self) -> f64 {
        self.stderr / self.mean.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean_df2: f64,
    pub stderr_df2: f64,
    /// `√mean_df2`.
    pub mean_df: f64,
    pub realizations: usize,
}

impl From<SampleStats> for MonteCarloEstimate {
    fn from(s: SampleStats) -> Self {
        Self { mean_df2: s.mean, stderr_df2: s.stderr, mean_df: s.mean.sqrt(), realizations: s.count }
    }
}

/// Averages `Δ_F²` over the samples.
pub fn accumulate(samples: &[FrobeniusSample]) -> MonteCarloEstimate {
    let v: Vec<f64> = samples.iter().map(|s| s.delta_f_squared).collect();
    SampleStats::from_values(&v).into()
}
