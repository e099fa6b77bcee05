//! Magnus-expansion quantities of a pulse: the first-order vector, the
//! noise-averaged integrals `I₁` and `I₃⁄₂`, the second-order `μ_x`, the
//! operator form of the positivity argument for `I₃⁄₂`, and a constrained
//! search for pulse shapes with small `I₃⁄₂`.

use std::cell::Cell;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{AutocorrelationModel, CorrelationKind, NoiseRealization, TimeGrid};
use crate::propagator::PulseDrive;
use crate::pulses::{trig_integrals, PiecewiseConstantPulse, PulseRecord, Segment, FIRST_ORDER_TOLERANCE};
use crate::quadrature::{integrate_pieces, Tolerance};

/// Relative accuracy of [`evaluate_i32`].
pub const I32_TOLERANCE: f64 = 1e-10;

/// First-order Magnus vector `(μ_y, μ_z)`; `μ_x` vanishes at this order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnusFirstOrder {
    pub mu_y: f64,
    pub mu_z: f64,
}

impl MagnusFirstOrder {
    /// Leading-order `Δ_F² ≈ (4/3)|μ|²`.
    pub fn delta_f_squared(&self) -> f64 {
        4.0 / 3.0 * (self.mu_y * self.mu_y + self.mu_z * self.mu_z)
    }
}

/// `ψ` at the start of every grid step and its slope on that step.
fn step_angles(pulse: &PiecewiseConstantPulse, grid: &TimeGrid) -> Vec<(f64, f64)> {
    let tau = pulse.tau_p();
    let b = grid.boundaries();
    grid.midpoints()
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let k = pulse.segment_index(m / tau);
            (pulse.angle_on_segment(k, b[i] / tau), 2.0 * pulse.drive(k))
        })
        .collect()
}

/// `μ_y = ∫ η sin ψ`, `μ_z = ∫ η cos ψ` for one realization; each step is
/// integrated exactly since `η` is constant and `ψ` linear on it.
pub fn first_order_magnus(pulse: &PiecewiseConstantPulse, noise: &NoiseRealization) -> Result<MagnusFirstOrder> {
    let grid = noise.grid();
    PulseDrive::new(pulse, grid)?;
    let (mut mu_y, mut mu_z) = (0.0, 0.0);
    for (i, (phi, slope)) in step_angles(pulse, grid).into_iter().enumerate() {
        let (s, c) = trig_integrals(phi, slope, grid.step_width(i));
        mu_y += noise.values()[i] * s;
        mu_z += noise.values()[i] * c;
    }
    Ok(MagnusFirstOrder { mu_y, mu_z })
}

/// `μ_x⁽²⁾ = ∫dt₁ ∫_{t₂<t₁} dt₂ η(t₁)η(t₂) sin[ψ(t₁) − ψ(t₂)]` by the
/// midpoint rule on the noise grid.
pub fn evaluate_mu2x(pulse: &PiecewiseConstantPulse, noise: &NoiseRealization) -> Result<f64> {
    let grid = noise.grid();
    PulseDrive::new(pulse, grid)?;
    let tau = pulse.tau_p();
    let eta = noise.values();
    let w: Vec<f64> = (0..grid.steps()).map(|i| grid.step_width(i) * eta[i]).collect();
    let psi: Vec<f64> =
        grid.midpoints().iter().map(|&m| pulse.angle_on_segment(pulse.segment_index(m / tau), m / tau)).collect();
    // Σ_{j<i} w_j sin(ψ_i − ψ_j) = sin ψ_i Σ w_j cos ψ_j − cos ψ_i Σ w_j sin ψ_j
    let (mut acc_c, mut acc_s, mut total) = (0.0, 0.0, 0.0);
    for i in 0..w.len() {
        let (s, c) = psi[i].sin_cos();
        total += w[i] * (s * acc_c - c * acc_s);
        acc_c += w[i] * c;
        acc_s += w[i] * s;
    }
    Ok(total)
}

/// `I₁ = g0² (S² + C²)`.
pub fn evaluate_i1(pulse: &PiecewiseConstantPulse, g0: f64) -> f64 {
    let (s, c) = pulse.first_order_integrals();
    g0 * g0 * (s * s + c * c)
}

/// `I₃⁄₂ = −a ∫∫ |t₁ − t₂| cos[ψ(t₁) − ψ(t₂)]` with the model's cusp
/// coefficient `a`, to relative accuracy [`I32_TOLERANCE`].
pub fn evaluate_i32(pulse: &PiecewiseConstantPulse, model: &AutocorrelationModel) -> Result<f64> {
    evaluate_i32_with(pulse, model, I32_TOLERANCE)
}

pub fn evaluate_i32_with(pulse: &PiecewiseConstantPulse, model: &AutocorrelationModel, rel: f64) -> Result<f64> {
    let a = model.cusp_coefficient();
    if a == 0.0 {
        return Ok(0.0);
    }
    let tau = pulse.tau_p();
    Ok(-2.0 * a * tau.powi(3) * reduced_kink_integral(pulse, rel)?)
}

/// `∫₀¹dx₁ ∫₀^{x₁}dx₂ (x₁ − x₂) cos[ψ(x₁) − ψ(x₂)]` in reduced time.
///
/// The outer integral is split at the switching instants, the inner one at
/// the switching instants below `x₁`, so every piece is analytic.
fn reduced_kink_integral(pulse: &PiecewiseConstantPulse, rel: f64) -> Result<f64> {
    let ends: Vec<f64> = pulse.segments().iter().map(|s| s.end).collect();
    let psi = |x: f64| pulse.angle_on_segment(pulse.segment_index(x), x);
    let failure: Cell<Option<Error>> = Cell::new(None);
    let inner_tol = Tolerance::relative(1e-3 * rel).with_abs(1e-16);

    let outer = |x1: f64| {
        let p1 = psi(x1);
        let mut pts = vec![0.0];
        pts.extend(ends.iter().copied().filter(|&e| e < x1));
        pts.push(x1);
        match integrate_pieces(|x2| (x1 - x2) * (p1 - psi(x2)).cos(), &pts, inner_tol) {
            Ok(e) => e.value,
            Err(err) => {
                failure.set(Some(err));
                0.0
            }
        }
    };
    let mut pts = vec![0.0];
    pts.extend_from_slice(&ends);
    let est = integrate_pieces(outer, &pts, Tolerance::relative(rel).with_abs(1e-15))?;
    match failure.into_inner() {
        Some(err) => Err(err),
        None => Ok(est.value),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalousIntegrals {
    pub i1: f64,
    pub i32: f64,
    /// Cusp coefficient `a`.
    pub a: f64,
}

impl AnomalousIntegrals {
    /// Leading noise-averaged `Δ_F² ≈ (4/3)(I₁ + I₃⁄₂)`.
    pub fn delta_f_squared(&self) -> f64 {
        4.0 / 3.0 * (self.i1 + self.i32)
    }
}

pub fn anomalous_integrals(pulse: &PiecewiseConstantPulse, model: &AutocorrelationModel) -> Result<AnomalousIntegrals> {
    Ok(AnomalousIntegrals {
        i1: evaluate_i1(pulse, model.g0),
        i32: evaluate_i32(pulse, model)?,
        a: model.cusp_coefficient(),
    })
}

/// Closed-form averaged `Δ_F²` of CORPSE (`4π aτ³`-type law) and SCORPSE
/// under exponential noise, as a function of `1/v`. `None` for other pulses
/// or models.
pub fn closed_form_df2(name: &str, model: &AutocorrelationModel, inv_v: f64) -> Option<f64> {
    if model.kind != CorrelationKind::Exponential {
        return None;
    }
    let k = match name.to_ascii_uppercase().as_str() {
        "CORPSE" => 4.0 * PI,
        "SCORPSE" => 8.0 * PI / 3.0,
        _ => return None,
    };
    Some(k * model.g0 * model.g0 * model.gamma * inv_v.powi(3))
}

/// Discretised operator form of `I₃⁄₂` on a midpoint grid.
///
/// With weights `w_j` the operators act as `(A f)_i = Σ_j |t_i − t_j| w_j f_j`,
/// `(B f)_i = Σ_j sgn(t_i − t_j) w_j f_j` and `(C f)_i = τ_p Σ_j w_j f_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoGoReport {
    pub grid_n: usize,
    pub max_step: f64,
    /// `⟨cos ψ|A|cos ψ⟩`.
    pub quad_a_cos: f64,
    /// `⟨sin ψ|A|sin ψ⟩`.
    pub quad_a_sin: f64,
    /// `‖B cos ψ‖²`.
    pub b_norm_cos: f64,
    /// `‖B sin ψ‖²`.
    pub b_norm_sin: f64,
    /// `⟨cos ψ|C|cos ψ⟩ + ⟨sin ψ|C|sin ψ⟩`, zero up to discretisation for
    /// first-order pulses.
    pub c_form: f64,
    /// Largest kernel deviation of `A` from `½(C − B†B)`.
    pub identity_residual: f64,
    pub cusp: f64,
    /// `−a (⟨cos|A|cos⟩ + ⟨sin|A|sin⟩)`.
    pub i32_quadratic: f64,
    /// `(a/2)(‖B cos ψ‖² + ‖B sin ψ‖²)`.
    pub i32_b_form: f64,
}

impl NoGoReport {
    pub fn positive(&self) -> bool {
        self.i32_b_form > 0.0 && self.b_norm_cos > 0.0 && self.b_norm_sin > 0.0
    }
}

/// Evaluates the operator identity behind the positivity of `I₃⁄₂` on a
/// grid of `grid_n` steps aligned with the pulse.
pub fn verify_nogo(pulse: &PiecewiseConstantPulse, model: &AutocorrelationModel, grid_n: usize) -> Result<NoGoReport> {
    let tau = pulse.tau_p();
    let (s, c) = pulse.first_order_integrals();
    if s.abs() > FIRST_ORDER_TOLERANCE * tau || c.abs() > FIRST_ORDER_TOLERANCE * tau {
        return Err(Error::NotFirstOrder { s, c });
    }
    let grid = pulse.grid(grid_n)?;
    let n = grid.steps();
    let t = grid.midpoints();
    let w: Vec<f64> = (0..n).map(|i| grid.step_width(i)).collect();
    let (sin_psi, cos_psi): (Vec<f64>, Vec<f64>) =
        t.iter().map(|&m| pulse.angle_on_segment(pulse.segment_index(m / tau), m / tau).sin_cos()).unzip();

    let quad_a = |f: &[f64]| {
        let mut total = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| (t[i] - t[j]).abs() * w[j] * f[j]).sum();
            total += w[i] * f[i] * row;
        }
        total
    };
    let b_norm = |f: &[f64]| {
        let all: f64 = (0..n).map(|j| w[j] * f[j]).sum();
        let mut below = 0.0;
        let mut total = 0.0;
        for i in 0..n {
            let here = w[i] * f[i];
            let above = all - below - here;
            let bf = below - above;
            total += w[i] * bf * bf;
            below += here;
        }
        total
    };
    let c_form = |f: &[f64]| {
        let m: f64 = (0..n).map(|j| w[j] * f[j]).sum();
        tau * m * m
    };

    // Kernel of B†B: Σ_k w_k sgn(t_k − t_i) sgn(t_k − t_j). Steps strictly
    // between i and j contribute −w_k, all others except i and j +w_k.
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + w[i];
    }
    let total_w = prefix[n];
    let mut residual: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let btb = if i == j {
                total_w - w[i]
            } else {
                let between = prefix[j] - prefix[i + 1];
                total_w - w[i] - w[j] - 2.0 * between
            };
            let a_ij = (t[i] - t[j]).abs();
            residual = residual.max((a_ij - 0.5 * (tau - btb)).abs());
        }
    }

    let a = model.cusp_coefficient();
    let quad_a_cos = quad_a(&cos_psi);
    let quad_a_sin = quad_a(&sin_psi);
    let b_norm_cos = b_norm(&cos_psi);
    let b_norm_sin = b_norm(&sin_psi);
    Ok(NoGoReport {
        grid_n: n,
        max_step: w.iter().copied().fold(0.0, f64::max),
        quad_a_cos,
        quad_a_sin,
        b_norm_cos,
        b_norm_sin,
        c_form: c_form(&cos_psi) + c_form(&sin_psi),
        identity_residual: residual,
        cusp: a,
        i32_quadratic: -a * (quad_a_cos + quad_a_sin),
        i32_b_form: 0.5 * a * (b_norm_cos + b_norm_sin),
    })
}

/// Settings of [`minimize_i32`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignConfig {
    pub n_segments: usize,
    /// Amplitude bound `|v(t)| ≤ v_max`.
    pub v_max: f64,
    pub restarts: usize,
    /// Pattern-search iterations per restart.
    pub iterations: usize,
    pub initial_penalty: f64,
    pub seed: u64,
    /// Relative accuracy of the `I₃⁄₂` quadrature inside the search.
    pub quadrature_rel: f64,
    /// Only evaluate the starting pulse.
    pub fixed: bool,
    pub name: String,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            n_segments: 3,
            v_max: 1.0,
            restarts: 10,
            iterations: 200,
            initial_penalty: 10.0,
            seed: 1,
            quadrature_rel: 1e-9,
            fixed: false,
            name: "DESIGN".into(),
        }
    }
}

/// Constraint tolerance of a feasible design.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub pulse: PiecewiseConstantPulse,
    pub i32_min: f64,
    /// `max(|ψ(τ_p) − π|, |S|/τ_p, |C|/τ_p)`.
    pub violation: f64,
    pub evaluations: usize,
    /// Best feasible `I₃⁄₂` after each restart.
    pub history: Vec<f64>,
}

impl DesignResult {
    pub fn record(&self) -> PulseRecord {
        PulseRecord::from_pulse(&self.pulse)
    }
}

/// Parameter vector: `n` durations followed by `n` amplitudes.
struct Design<'a> {
    n: usize,
    v_max: f64,
    name: &'a str,
}

impl Design<'_> {
    fn pulse(&self, x: &[f64]) -> Result<PiecewiseConstantPulse> {
        let (d, u) = x.split_at(self.n);
        let tau: f64 = d.iter().sum();
        let mut segments = Vec::with_capacity(self.n);
        let mut acc = 0.0;
        let mut start = 0.0;
        for k in 0..self.n {
            acc += d[k];
            let end = if k + 1 == self.n { 1.0 } else { acc / tau };
            segments.push(Segment { start, end, amplitude: u[k] * tau });
            start = end;
        }
        Ok(PiecewiseConstantPulse::new(self.name, 1, segments)?.with_duration(tau))
    }

    /// `(ψ(τ_p) − π, S/τ_p, C/τ_p)` in closed form.
    fn residuals(&self, x: &[f64]) -> [f64; 3] {
        let (d, u) = x.split_at(self.n);
        let tau: f64 = d.iter().sum();
        let (mut phi, mut s, mut c) = (0.0, 0.0, 0.0);
        for k in 0..self.n {
            let (ds, dc) = trig_integrals(phi, 2.0 * u[k], d[k]);
            s += ds;
            c += dc;
            phi += 2.0 * u[k] * d[k];
        }
        [phi - PI, s / tau, c / tau]
    }

    fn clamp(&self, x: &mut [f64]) {
        let floor = 1e-6 / self.v_max;
        for v in &mut x[..self.n] {
            *v = v.max(floor);
        }
        for v in &mut x[self.n..] {
            *v = v.clamp(-self.v_max, self.v_max);
        }
    }

    /// Gauss–Newton steps onto the constraint manifold (minimum-norm updates).
    fn polish(&self, x: &mut [f64]) {
        let m = 2 * self.n;
        for _ in 0..50 {
            let r = self.residuals(x);
            if r.iter().all(|v| v.abs() < 1e-13) {
                return;
            }
            let mut jac = nalgebra::DMatrix::<f64>::zeros(3, m);
            for p in 0..m {
                let h = 1e-7 * x[p].abs().max(1.0 / self.v_max);
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[p] += h;
                xm[p] -= h;
                let (rp, rm) = (self.residuals(&xp), self.residuals(&xm));
                for q in 0..3 {
                    jac[(q, p)] = (rp[q] - rm[q]) / (2.0 * h);
                }
            }
            let jjt = &jac * jac.transpose();
            let Some(sol) = jjt.lu().solve(&nalgebra::DVector::from_row_slice(&r)) else {
                return;
            };
            let step = jac.transpose() * sol;
            for p in 0..m {
                x[p] -= step[p];
            }
            self.clamp(x);
        }
    }

    fn violation(&self, x: &[f64]) -> f64 {
        self.residuals(x).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Searches `n_segments`-segment π pulses with `|v| ≤ v_max` for a small
/// `I₃⁄₂` under `model`, subject to `ψ(τ_p) = π` and `S = C = 0`.
///
/// Each restart runs a compass search on `I₃⁄₂/I_ref + w·|residual|²`, with
/// the penalty weight `w` growing tenfold per restart, and then projects the
/// result onto the constraints. Every restart after the first starts from a
/// random perturbation of the best feasible point so far. The best feasible
/// pulse seen is returned,
/// including the start pulse `start`, which is split into equal halves
/// until it has `n_segments` segments.
pub fn minimize_i32(
    start: &PiecewiseConstantPulse,
    model: &AutocorrelationModel,
    config: &DesignConfig,
) -> Result<DesignResult> {
    let n = config.n_segments;
    if n < 3 {
        return Err(Error::InvalidConfig("a design needs at least three segments".into()));
    }
    if start.segments().len() > n {
        return Err(Error::InvalidConfig(format!("start pulse {} has more than {n} segments", start.name())));
    }
    if !(config.v_max > 0.0) {
        return Err(Error::InvalidConfig("v_max must be positive".into()));
    }
    let design = Design { n, v_max: config.v_max, name: &config.name };
    let mut x = initial_point(start, n, config.v_max);
    design.clamp(&mut x);

    let evaluations = Cell::new(0usize);
    let i32_of = |x: &[f64]| -> Result<f64> {
        evaluations.set(evaluations.get() + 1);
        evaluate_i32_with(&design.pulse(x)?, model, config.quadrature_rel)
    };
    // reference scale: SCORPSE at the same amplitude bound
    let i_ref = (2.0 * PI * model.cusp_coefficient() / config.v_max.powi(3)).max(f64::MIN_POSITIVE);

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::new();
    let consider = |x: &[f64], best: &mut Option<(Vec<f64>, f64)>| -> Result<()> {
        if design.violation(x) <= FEASIBILITY_TOLERANCE {
            let value = i32_of(x)?;
            if best.as_ref().is_none_or(|(_, b)| value < *b) {
                *best = Some((x.to_vec(), value));
            }
        }
        Ok(())
    };

    let mut polished = x.clone();
    design.polish(&mut polished);
    consider(&polished, &mut best)?;
    history.push(best.as_ref().map_or(f64::NAN, |b| b.1));

    if !config.fixed {
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let mut weight = config.initial_penalty;
        for restart in 0..config.restarts {
            if restart > 0 {
                if let Some((bx, _)) = &best {
                    x.clone_from(bx);
                }
                for v in x.iter_mut() {
                    *v *= 1.0 + 0.4 * (rng.random::<f64>() - 0.5);
                }
                design.clamp(&mut x);
            }
            let objective = |x: &[f64]| -> Result<f64> {
                let r = design.residuals(x);
                let pen = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                Ok(i32_of(x)? / i_ref + weight * pen)
            };
            x = pattern_search(&design, x, objective, config.iterations)?;
            let mut candidate = x.clone();
            design.polish(&mut candidate);
            consider(&candidate, &mut best)?;
            history.push(best.as_ref().map_or(f64::NAN, |b| b.1));
            weight *= 10.0;
        }
    }

    let (x, i32_min) = best.ok_or(Error::NoFeasiblePoint)?;
    Ok(DesignResult {
        pulse: design.pulse(&x)?,
        i32_min,
        violation: design.violation(&x),
        evaluations: evaluations.get(),
        history,
    })
}

fn initial_point(start: &PiecewiseConstantPulse, n: usize, v_max: f64) -> Vec<f64> {
    let p = start.for_inverse_amplitude(1.0 / v_max);
    let tau = p.tau_p();
    let mut pieces: Vec<(f64, f64)> = p.segments().iter().map(|s| (s.width() * tau, s.amplitude / tau)).collect();
    while pieces.len() < n {
        let (k, _) =
            pieces.iter().enumerate().fold((0, 0.0), |(bk, bw), (k, &(w, _))| if w > bw { (k, w) } else { (bk, bw) });
        let (w, u) = pieces[k];
        pieces[k] = (0.5 * w, u);
        pieces.insert(k + 1, (0.5 * w, u));
    }
    let (d, u): (Vec<f64>, Vec<f64>) = pieces.into_iter().unzip();
    d.into_iter().chain(u).collect()
}

/// Compass search: poll ± each coordinate, halve the step when no move helps.
fn pattern_search<F>(design: &Design, mut x: Vec<f64>, f: F, iterations: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let scale = 1.0 / design.v_max;
    let mut step: Vec<f64> =
        (0..x.len()).map(|p| if p < design.n { 0.1 * scale } else { 0.1 * design.v_max }).collect();
    let mut fx = f(&x)?;
    for _ in 0..iterations {
        let mut moved = false;
        for p in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[p] += sign * step[p];
                design.clamp(&mut y);
                if y[p] == x[p] {
                    continue;
                }
                let fy = f(&y)?;
                if fy < fx {
                    x = y;
                    fx = fy;
                    moved = true;
                    break;
                }
            }
        }
        if !moved {
            for s in &mut step {
                *s *= 0.5;
            }
            if step.iter().all(|&s| s < 1e-10 * scale.max(design.v_max)) {
                break;
            }
        }
    }
    Ok(x)
}
