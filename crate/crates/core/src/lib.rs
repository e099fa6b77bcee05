//! Shaped spin-flip pulses under classical dephasing noise.
//!
//! A spin-½ driven by a piecewise-constant π pulse `v(t)σ_x` is exposed to a
//! stationary Gaussian field `η(t)σ_z`. The crate synthesises correlated noise,
//! propagates the spin exactly, measures the pulse error with the
//! polarisation-averaged Frobenius norm and fits how it scales with the pulse
//! duration. Magnus-expansion integrals give the analytic counterpart.

// `!(x > 0.0)` checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod harness;
pub mod magnus;
pub mod metrics;
pub mod noise;
pub mod propagator;
pub mod pulses;
pub mod quadrature;

pub use error::{Error, Result};
pub use harness::{run_scaling, ScalingExperimentConfig, ScalingResult};
pub use metrics::{frobenius_from_unitary, FrobeniusSample, MonteCarloEstimate};
pub use noise::{AutocorrelationModel, CorrelationKind, NoiseRealization, NoiseSampler, TimeGrid};
pub use propagator::{evolve, Unitary2, UnitaryResult};
pub use pulses::{PiecewiseConstantPulse, PulseCatalog};
