//! Exact evolution of a spin-½ under `H(t) = η(t)σ_z + v(t)σ_x`.
//!
//! Both the drive and the sampled noise are constant on every grid step, so
//! each step propagator is a closed-form SU(2) exponential. Products are
//! time ordered with the latest step on the left: `U = U_N ⋯ U_2 U_1`.

use std::ops::Mul;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::noise::{NoiseRealization, TimeGrid};
use crate::pulses::PiecewiseConstantPulse;

pub type Bloch = [f64; 3];

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Dense 2×2 complex matrix, row major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unitary2(pub [[Complex64; 2]; 2]);

impl Unitary2 {
    pub const IDENTITY: Self = Self([[ONE, ZERO], [ZERO, ONE]]);

    pub fn pauli(axis: usize) -> Self {
        match axis {
            0 => Self([[ZERO, ONE], [ONE, ZERO]]),
            1 => Self([[ZERO, -I], [I, ZERO]]),
            2 => Self([[ONE, ZERO], [ZERO, -ONE]]),
            _ => panic!("Pauli index {axis} out of range"),
        }
    }

    /// `exp(-i θ n̂·σ)` for a unit vector `n̂`.
    pub fn rotation(theta: f64, axis: Bloch) -> Self {
        let (s, c) = theta.sin_cos();
        let [x, y, z] = axis;
        Self([
            [Complex64::new(c, -s * z), Complex64::new(-s * y, -s * x)],
            [Complex64::new(s * y, -s * x), Complex64::new(c, s * z)],
        ])
    }

    pub fn entry(&self, r: usize, c: usize) -> Complex64 {
        self.0[r][c]
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.0;
        Self([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn scale(&self, k: Complex64) -> Self {
        let m = &self.0;
        Self([[m[0][0] * k, m[0][1] * k], [m[1][0] * k, m[1][1] * k]])
    }

    pub fn sub(&self, other: &Self) -> Self {
        let (a, b) = (&self.0, &other.0);
        Self([[a[0][0] - b[0][0], a[0][1] - b[0][1]], [a[1][0] - b[1][0], a[1][1] - b[1][1]]])
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Squared Frobenius norm.
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    /// `max |U†U − 1|`.
    pub fn unitarity_error(&self) -> f64 {
        (self.adjoint() * *self).sub(&Self::IDENTITY).max_abs()
    }

    /// Bloch vector of `U ρ U†` for the state with Bloch vector `b`.
    pub fn rotate_bloch(&self, b: Bloch) -> Bloch {
        let [x, y, z] = b;
        let s =
            Self([[Complex64::new(z, 0.0), Complex64::new(x, -y)], [Complex64::new(x, y), Complex64::new(-z, 0.0)]]);
        let m = *self * s * self.adjoint();
        [m.0[0][1].re, -m.0[0][1].im, m.0[0][0].re]
    }
}

impl Mul for Unitary2 {
    type Output = Unitary2;

    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (&self.0, &rhs.0);
        Self([
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ])
    }
}

/// SU(2) element `[[α, β], [−β*, α*]]`; the working type of the step loop.
#[derive(Debug, Clone, Copy)]
struct Su2 {
    alpha: Complex64,
    beta: Complex64,
}

impl Su2 {
    const ONE: Self = Self { alpha: ONE, beta: ZERO };

    #[inline]
    fn step(eta: f64, v: f64, dt: f64) -> Self {
        let (c, s) = step_coefficients(eta, v, dt);
        Self { alpha: Complex64::new(c, -s * eta), beta: Complex64::new(0.0, -s * v) }
    }

    // self · rhs
    #[inline]
    fn then_after(self, rhs: Self) -> Self {
        Self {
            alpha: self.alpha * rhs.alpha - self.beta * rhs.beta.conj(),
            beta: self.alpha * rhs.beta + self.beta * rhs.alpha.conj(),
        }
    }

    fn to_matrix(self) -> Unitary2 {
        Unitary2([[self.alpha, self.beta], [-self.beta.conj(), self.alpha.conj()]])
    }
}

/// `(cos θ, sin θ / |h|)` with `θ = |h| dt`, `|h| = √(v² + η²)`.
#[inline]
fn step_coefficients(eta: f64, v: f64, dt: f64) -> (f64, f64) {
    let h = eta.hypot(v);
    let theta = h * dt;
    if theta < 1e-8 {
        let t2 = theta * theta;
        (1.0 - 0.5 * t2 + t2 * t2 / 24.0, dt * (1.0 - t2 / 6.0 + t2 * t2 / 120.0))
    } else {
        (theta.cos(), theta.sin() / h)
    }
}

/// `exp(−i dt (η σ_z + v σ_x))`.
pub fn step_propagator(eta: f64, v: f64, dt: f64) -> Unitary2 {
    Su2::step(eta, v, dt).to_matrix()
}

/// The instantaneous π rotation about x, `exp(−i π/2 σ_x) = −i σ_x`.
pub fn ideal_pulse() -> Unitary2 {
    Unitary2::pauli(0).scale(-I)
}

#[derive(Debug, Clone)]
pub struct UnitaryResult {
    pub u_total: Unitary2,
    /// `P† U_tot`.
    pub u_correcting: Unitary2,
    /// `(t, Bloch vector)` after each step, starting at `t = 0`.
    pub trajectory: Option<Vec<(f64, Bloch)>>,
}

/// A pulse resolved onto a time grid: the drive amplitude of every step.
/// Building it checks that the grid resolves every switching instant.
#[derive(Debug, Clone)]
pub struct PulseDrive {
    widths: Vec<f64>,
    drive: Vec<f64>,
    times: Vec<f64>,
}

impl PulseDrive {
    pub fn new(pulse: &PiecewiseConstantPulse, grid: &TimeGrid) -> Result<Self> {
        if grid.tau_p() != pulse.tau_p() {
            return Err(Error::GridMismatch { instant: pulse.tau_p() });
        }
        for t in pulse.switching_instants() {
            if !grid.contains_instant(t) {
                return Err(Error::GridMismatch { instant: t });
            }
        }
        let tau = pulse.tau_p();
        let drive = grid.midpoints().iter().map(|&m| pulse.drive(pulse.segment_index(m / tau))).collect();
        let widths = (0..grid.steps()).map(|i| grid.step_width(i)).collect();
        Ok(Self { widths, drive, times: grid.boundaries().to_vec() })
    }

    pub fn steps(&self) -> usize {
        self.drive.len()
    }

    pub fn drive(&self) -> &[f64] {
        &self.drive
    }

    /// `U_tot` for the noise values `eta` (one per step).
    pub fn total_unitary(&self, eta: &[f64]) -> Unitary2 {
        self.total_su2(eta, 0..self.steps()).to_matrix()
    }

    /// `U_tot` restricted to steps `range`.
    pub fn partial_unitary(&self, eta: &[f64], range: std::ops::Range<usize>) -> Unitary2 {
        self.total_su2(eta, range).to_matrix()
    }

    fn total_su2(&self, eta: &[f64], range: std::ops::Range<usize>) -> Su2 {
        assert_eq!(eta.len(), self.steps(), "noise length does not match the grid");
        let mut u = Su2::ONE;
        for i in range {
            u = Su2::step(eta[i], self.drive[i], self.widths[i]).then_after(u);
        }
        u
    }

    /// Full evolution; with `track` the spin state starting from that Bloch
    /// vector is recorded after every step.
    pub fn evolve(&self, eta: &[f64], track: Option<Bloch>) -> UnitaryResult {
        let u_total = match track {
            None => self.total_unitary(eta),
            Some(b0) => {
                assert_eq!(eta.len(), self.steps(), "noise length does not match the grid");
                let mut traj = Vec::with_capacity(self.steps() + 1);
                let mut state = spinor_from_bloch(b0);
                traj.push((0.0, bloch_from_spinor(state)));
                let mut u = Su2::ONE;
                for (i, ((&e, &v), &w)) in eta.iter().zip(&self.drive).zip(&self.widths).enumerate() {
                    let step = Su2::step(e, v, w);
                    u = step.then_after(u);
                    let m = step.to_matrix().0;
                    state = [m[0][0] * state[0] + m[0][1] * state[1], m[1][0] * state[0] + m[1][1] * state[1]];
                    traj.push((self.times[i + 1], bloch_from_spinor(state)));
                }
                let u_total = u.to_matrix();
                let u_correcting = ideal_pulse().adjoint() * u_total;
                return UnitaryResult { u_total, u_correcting, trajectory: Some(traj) };
            }
        };
        let u_correcting = ideal_pulse().adjoint() * u_total;
        UnitaryResult { u_total, u_correcting, trajectory: None }
    }
}

/// Evolves `pulse` under one noise realization.
pub fn evolve(
    pulse: &PiecewiseConstantPulse,
    noise: &NoiseRealization,
    track_state: Option<Bloch>,
) -> Result<UnitaryResult> {
    let drive = PulseDrive::new(pulse, noise.grid())?;
    Ok(drive.evolve(noise.values(), track_state))
}

fn spinor_from_bloch(b: Bloch) -> [Complex64; 2] {
    let n = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let [x, y, z] = if n > 0.0 { [b[0] / n, b[1] / n, b[2] / n] } else { [0.0, 0.0, 1.0] };
    if z > -1.0 + 1e-15 {
        let up = ((1.0 + z) / 2.0).sqrt();
        [Complex64::new(up, 0.0), Complex64::new(x, y) / (2.0 * up)]
    } else {
        [ZERO, ONE]
    }
}

fn bloch_from_spinor(s: [Complex64; 2]) -> Bloch {
    let c = s[0].conj() * s[1];
    [2.0 * c.re, 2.0 * c.im, s[0].norm_sqr() - s[1].norm_sqr()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::PulseCatalog;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn close(a: &Unitary2, b: &Unitary2, tol: f64) -> bool {
        a.sub(b).max_abs() < tol
    }

    #[test]
    fn step_examples() {
        assert!(close(&step_propagator(0.0, 0.0, 3.7), &Unitary2::IDENTITY, 1e-15));
        let v = 2.0;
        let u = step_propagator(0.0, v, PI / 2.0 / v);
        assert!(close(&u, &Unitary2::pauli(0).scale(-I), 1e-15));

        // |h| = 5, θ = 0.5
        let u = step_propagator(3.0, 4.0, 0.1);
        let (c, s) = (0.5f64.cos(), 0.5f64.sin());
        let expect = Unitary2([
            [Complex64::new(c, -s * 3.0 / 5.0), Complex64::new(0.0, -s * 4.0 / 5.0)],
            [Complex64::new(0.0, -s * 4.0 / 5.0), Complex64::new(c, s * 3.0 / 5.0)],
        ]);
        assert!(close(&u, &expect, 1e-12));
    }

    #[test]
    fn small_step_branch_is_continuous() {
        let a = step_propagator(1e-9, 2e-9, 1.0);
        let b = step_propagator(1e-7, 2e-7, 1e-2);
        assert!(a.unitarity_error() < 1e-15 && b.unitarity_error() < 1e-15);
        let expect = Unitary2::rotation(1e-9 * 5f64.sqrt(), [2.0 / 5f64.sqrt(), 0.0, 1.0 / 5f64.sqrt()]);
        assert!(close(&a, &expect, 1e-16));
    }

    #[test]
    fn ideal_pulse_flips() {
        let p = ideal_pulse();
        let r = |b| p.rotate_bloch(b);
        let y = r([0.0, 1.0, 0.0]);
        assert_abs_diff_eq!(y[1], -1.0, epsilon = 1e-15);
        let z = r([0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(z[2], -1.0, epsilon = 1e-15);
        let x = r([1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn noiseless_pulses_are_ideal() {
        for p in PulseCatalog::builtin().pulses() {
            let p = p.for_inverse_amplitude(0.05);
            let grid = Arc::new(p.grid(256).unwrap());
            let noise = NoiseRealization::constant(grid, 0.0);
            let r = evolve(&p, &noise, None).unwrap();
            assert!(close(&r.u_total, &ideal_pulse(), 1e-10), "{}", p.name());
            assert!(close(&r.u_correcting, &Unitary2::IDENTITY, 1e-10), "{}", p.name());
        }
    }

    #[test]
    fn pure_dephasing_closed_form() {
        let p = PiecewiseConstantPulse::new(
            "zero",
            0,
            vec![crate::pulses::Segment { start: 0.0, end: 1.0, amplitude: 0.0 }],
        )
        .unwrap()
        .with_duration(2.0);
        let grid = Arc::new(p.grid(64).unwrap());
        let noise = NoiseRealization::constant(grid, 0.3);
        let r = evolve(&p, &noise, None).unwrap();
        assert!(close(&r.u_total, &Unitary2::rotation(0.6, [0.0, 0.0, 1.0]), 1e-13));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let p = PulseCatalog::builtin().get("CORPSE").unwrap().clone();
        let grid = Arc::new(crate::noise::TimeGrid::uniform(1.0, 100).unwrap());
        let noise = NoiseRealization::constant(grid, 0.0);
        assert!(matches!(evolve(&p, &noise, None), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn trajectory_tracks_the_flip() {
        let p = PulseCatalog::builtin().get("SCORPSE").unwrap().clone();
        let grid = Arc::new(p.grid(70).unwrap());
        let noise = NoiseRealization::constant(grid, 0.0);
        let r = evolve(&p, &noise, Some([0.0, 1.0, 0.0])).unwrap();
        let traj = r.trajectory.unwrap();
        assert_eq!(traj.len(), 71);
        assert_abs_diff_eq!(traj[0].1[1], 1.0, epsilon = 1e-15);
        let last = traj.last().unwrap();
        assert_eq!(last.0, 1.0);
        assert_abs_diff_eq!(last.1[1], -1.0, epsilon = 1e-12);
        // matches rotating the initial vector with the total unitary
        let b = r.u_total.rotate_bloch([0.0, 1.0, 0.0]);
        for (x, y) in b.iter().zip(last.1) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rect_constant_noise_matches_first_order_magnus() {
        // μ_y = η S, μ_z = η C and Δ_F² ≈ (4/3)|μ|²
        let p = PulseCatalog::builtin().get("RECT").unwrap().for_inverse_amplitude(0.1);
        let eta = 0.01 * p.peak_amplitude();
        let grid = Arc::new(p.grid(128).unwrap());
        let r = evolve(&p, &NoiseRealization::constant(grid, eta), None).unwrap();
        let (s, c) = p.first_order_integrals();
        let mu2 = eta * eta * (s * s + c * c);
        let tr = r.u_correcting.trace().re / 2.0;
        let df2 = 4.0 / 3.0 * (1.0 - tr * tr);
        let scale = eta * p.tau_p();
        assert!((df2 - 4.0 / 3.0 * mu2).abs() < 4.0 * scale.powi(3) * 4.0 / 3.0, "{df2} vs {}", 4.0 / 3.0 * mu2);
    }
}
