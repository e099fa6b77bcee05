//! Piecewise-constant π-pulses about the x axis and their rotation angle
//! `ψ(t) = 2∫₀ᵗ v(t′) dt′`.
//!
//! Shapes are stored in reduced units: segment boundaries as fractions of
//! the duration `τ_p`, amplitudes as the dimensionless product `v·τ_p`. One
//! shape therefore serves every peak amplitude through
//! [`PiecewiseConstantPulse::for_inverse_amplitude`].

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::TimeGrid;

/// Tolerance on `ψ(τ_p) = π`.
pub const ANGLE_TOLERANCE: f64 = 1e-9;
/// Tolerance on the first-order integrals, relative to `τ_p`.
pub const FIRST_ORDER_TOLERANCE: f64 = 1e-9;

const DEFAULT_CATALOG: &str = include_str!("../data/catalog.json");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// `v·τ_p` on this segment.
    pub amplitude: f64,
}

impl Segment {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseConstantPulse {
    name: String,
    order: u32,
    tau_p: f64,
    segments: Vec<Segment>,
    // ψ at the start of every segment plus the final angle
    nodes: Vec<f64>,
}

impl PiecewiseConstantPulse {
    /// Builds a pulse of unit duration. Segments must tile `[0, 1]` with
    /// bit-identical shared endpoints.
    pub fn new(name: impl Into<String>, order: u32, segments: Vec<Segment>) -> Result<Self> {
        let name = name.into();
        let bad = |msg: &str| Error::InvalidConfig(format!("pulse {name}: {msg}"));
        if segments.is_empty() {
            return Err(bad("no segments"));
        }
        if segments[0].start != 0.0 || segments[segments.len() - 1].end != 1.0 {
            return Err(bad("segments must cover [0, 1]"));
        }
        for s in &segments {
            if !(s.end > s.start) || !s.amplitude.is_finite() {
                return Err(bad("segment with non-positive width or non-finite amplitude"));
            }
        }
        if segments.windows(2).any(|w| w[0].end != w[1].start) {
            return Err(bad("segments leave a gap or overlap"));
        }
        let mut nodes = Vec::with_capacity(segments.len() + 1);
        let mut psi = 0.0;
        nodes.push(psi);
        for s in &segments {
            psi += 2.0 * s.amplitude * s.width();
            nodes.push(psi);
        }
        Ok(Self { name, order, tau_p: 1.0, segments, nodes })
    }

    /// Constant-amplitude π-pulse.
    pub fn rectangular() -> Self {
        Self::new("RECT", 0, vec![Segment { start: 0.0, end: 1.0, amplitude: PI / 2.0 }]).unwrap()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn tau_p(&self) -> f64 {
        self.tau_p
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn with_duration(mut self, tau_p: f64) -> Self {
        assert!(tau_p > 0.0, "pulse duration must be positive");
        self.tau_p = tau_p;
        self
    }

    /// Same shape rescaled so that its peak amplitude is `1/inv_v`.
    pub fn for_inverse_amplitude(&self, inv_v: f64) -> Self {
        self.clone().with_duration(self.peak_amplitude_taup() * inv_v)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// `max |v|·τ_p`.
    pub fn peak_amplitude_taup(&self) -> f64 {
        self.segments.iter().map(|s| s.amplitude.abs()).fold(0.0, f64::max)
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.peak_amplitude_taup() / self.tau_p
    }

    /// Drive amplitude `v` on segment `k` in absolute units.
    pub fn drive(&self, k: usize) -> f64 {
        self.segments[k].amplitude / self.tau_p
    }

    /// Absolute switching instants, ending with `τ_p`.
    pub fn switching_instants(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.end * self.tau_p).collect()
    }

    /// Grid of `steps` steps aligned with the switching instants.
    pub fn grid(&self, steps: usize) -> Result<TimeGrid> {
        TimeGrid::aligned(self.tau_p, &self.switching_instants(), steps)
    }

    pub fn total_angle(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// `ψ` at the start of each segment, followed by `ψ(τ_p)`.
    pub fn angle_nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Index of the segment containing the reduced time `x ∈ [0, 1]`
    /// (the left segment at a switching instant).
    pub fn segment_index(&self, x: f64) -> usize {
        self.segments.iter().position(|s| x <= s.end).unwrap_or(self.segments.len() - 1)
    }

    /// `ψ` on segment `k` at reduced time `x`.
    #[inline]
    pub fn angle_on_segment(&self, k: usize, x: f64) -> f64 {
        let s = &self.segments[k];
        self.nodes[k] + 2.0 * s.amplitude * (x - s.start)
    }

    /// `ψ(t)` for `0 ≤ t ≤ τ_p`.
    pub fn angle_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.tau_p).contains(&t) {
            return Err(Error::OutOfRange { t, tau_p: self.tau_p });
        }
        let x = t / self.tau_p;
        Ok(self.angle_on_segment(self.segment_index(x), x))
    }

    /// `(S, C) = (∫ sin ψ dt, ∫ cos ψ dt)` over the pulse, in closed form.
    pub fn first_order_integrals(&self) -> (f64, f64) {
        let (mut s, mut c) = (0.0, 0.0);
        for (k, seg) in self.segments.iter().enumerate() {
            let (ds, dc) = trig_integrals(self.nodes[k], 2.0 * seg.amplitude, seg.width());
            s += ds;
            c += dc;
        }
        (s * self.tau_p, c * self.tau_p)
    }
}

/// Free-function form of [`PiecewiseConstantPulse::angle_at`].
pub fn angle_at(pulse: &PiecewiseConstantPulse, t: f64) -> Result<f64> {
    pulse.angle_at(t)
}

/// Free-function form of [`PiecewiseConstantPulse::first_order_integrals`].
pub fn first_order_integrals(pulse: &PiecewiseConstantPulse) -> (f64, f64) {
    pulse.first_order_integrals()
}

/// `(∫₀ᴸ sin(φ + k x) dx, ∫₀ᴸ cos(φ + k x) dx)`.
pub(crate) fn trig_integrals(phi: f64, k: f64, len: f64) -> (f64, f64) {
    let half = 0.5 * k * len;
    // L·sin(h/2)/(h/2), free of cancellation
    let weight = if half.abs() < 1e-8 { len } else { len * half.sin() / half };
    let (sm, cm) = (phi + half).sin_cos();
    (weight * sm, weight * cm)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start: String,
    pub end: String,
    pub amplitude_taup: String,
}

/// One catalog entry as stored on disk, decimals kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub name: String,
    pub order: u32,
    pub segments: Vec<SegmentRecord>,
}

impl PulseRecord {
    pub fn to_pulse(&self) -> Result<PiecewiseConstantPulse> {
        let segments = self
            .segments
            .iter()
            .map(|s| {
                Ok(Segment {
                    start: parse_decimal(&s.start)?,
                    end: parse_decimal(&s.end)?,
                    amplitude: parse_decimal(&s.amplitude_taup)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PiecewiseConstantPulse::new(self.name.clone(), self.order, segments)
    }

    /// Record of a unit-duration pulse, floats written as shortest
    /// round-trip decimals.
    pub fn from_pulse(p: &PiecewiseConstantPulse) -> Self {
        Self {
            name: p.name().to_string(),
            order: p.order(),
            segments: p
                .segments()
                .iter()
                .map(|s| SegmentRecord {
                    start: format!("{}", s.start),
                    end: format!("{}", s.end),
                    amplitude_taup: format!("{}", s.amplitude),
                })
                .collect(),
        }
    }

    /// Drops every digit beyond `decimals` places after the point.
    pub fn truncated(&self, decimals: usize) -> Self {
        let t = |s: &str| truncate_decimal(s, decimals);
        Self {
            name: self.name.clone(),
            order: self.order,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentRecord { start: t(&s.start), end: t(&s.end), amplitude_taup: t(&s.amplitude_taup) })
                .collect(),
        }
    }
}

/// Parses a catalog decimal string (plain or exponent notation).
pub fn parse_decimal(s: &str) -> Result<f64> {
    let s = s.trim();
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::BadDecimal(s.to_string())),
    }
}

fn truncate_decimal(s: &str, decimals: usize) -> String {
    match s.split_once('.') {
        Some((int, frac)) if frac.len() > decimals => {
            if decimals == 0 {
                int.to_string()
            } else {
                format!("{int}.{}", &frac[..decimals])
            }
        }
        _ => s.to_string(),
    }
}

/// Named collection of pulses, kept in file order.
#[derive(Debug, Clone)]
pub struct PulseCatalog {
    records: Vec<PulseRecord>,
    pulses: Vec<PiecewiseConstantPulse>,
}

impl PulseCatalog {
    pub fn from_records(records: Vec<PulseRecord>) -> Result<Self> {
        let pulses = records.iter().map(PulseRecord::to_pulse).collect::<Result<Vec<_>>>()?;
        Ok(Self { records, pulses })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_records(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The six shapes shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("shipped catalog parses")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records).expect("records serialize")
    }

    pub fn records(&self) -> &[PulseRecord] {
        &self.records
    }

    pub fn pulses(&self) -> &[PiecewiseConstantPulse] {
        &self.pulses
    }

    pub fn names(&self) -> Vec<&str> {
        self.pulses.iter().map(|p| p.name()).collect()
    }

    /// Case-insensitive lookup.
    pub fn get(&self, name: &str) -> Result<&PiecewiseConstantPulse> {
        self.pulses
            .iter()
            .find(|p| p.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownPulse(name.to_string()))
    }

    /// Catalog with every decimal cut to `decimals` places.
    pub fn truncated(&self, decimals: usize) -> Result<Self> {
        Self::from_records(self.records.iter().map(|r| r.truncated(decimals)).collect())
    }

    pub fn push(&mut self, pulse: &PiecewiseConstantPulse) {
        self.records.push(PulseRecord::from_pulse(pulse));
        self.pulses.push(pulse.clone().with_duration(1.0));
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PulseCheck {
    pub name: String,
    pub order: u32,
    pub angle_error: f64,
    pub angle_ok: bool,
    pub s: f64,
    pub c: f64,
    /// `None` for zeroth-order pulses, which carry no first-order claim.
    pub first_order_ok: Option<bool>,
}

impl PulseCheck {
    pub fn passed(&self) -> bool {
        self.angle_ok && self.first_order_ok.unwrap_or(true)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<PulseCheck>,
}

impl ValidationReport {
    pub fn check(catalog: &PulseCatalog) -> Self {
        let checks = catalog
            .pulses()
            .iter()
            .map(|p| {
                let angle_error = p.total_angle() - PI;
                let (s, c) = p.first_order_integrals();
                let tol = FIRST_ORDER_TOLERANCE * p.tau_p();
                PulseCheck {
                    name: p.name().to_string(),
                    order: p.order(),
                    angle_error,
                    angle_ok: angle_error.abs() <= ANGLE_TOLERANCE,
                    s,
                    c,
                    first_order_ok: (p.order() >= 1).then(|| s.abs() <= tol && c.abs() <= tol),
                }
            })
            .collect();
        Self { checks }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(PulseCheck::passed)
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.checks {
            if !c.angle_ok {
                out.push(format!("{}: total angle off π by {:e}", c.name, c.angle_error));
            }
            if c.first_order_ok == Some(false) {
                out.push(format!("{}: first-order integrals S = {:e}, C = {:e}", c.name, c.s, c.c));
            }
        }
        out
    }
}

/// Checks every entry; fails with all violations collected.
pub fn validate_catalog(catalog: &PulseCatalog) -> Result<ValidationReport> {
    let report = ValidationReport::check(catalog);
    if report.passed() {
        Ok(report)
    } else {
        Err(Error::CatalogInvalid(report.failures()))
    }
}
