//! Evolves a spin through one SCORPSE pulse under one noise realization and
//! follows the polarization along y.

use std::sync::Arc;

use pulselab::metrics::{polarization_deviation, Axis};
use pulselab::{evolve, frobenius_from_unitary, AutocorrelationModel, NoiseSampler, PulseCatalog};

fn main() -> pulselab::Result<()> {
    let catalog = PulseCatalog::builtin();
    let pulse = catalog.get("SCORPSE")?.for_inverse_amplitude(0.02);
    let grid = Arc::new(pulse.grid(512)?);
    let model = AutocorrelationModel::exponential(1.0, 0.01)?;
    let sampler = NoiseSampler::new(&model, grid, 7)?;
    let noise = sampler.sample(&mut sampler.stream(0));

    let result = evolve(&pulse, &noise, Some(Axis::Y.unit()))?;
    let f = frobenius_from_unitary(&result.u_correcting)?;
    println!("τ_p = {:.5}, Δ_F = {:.3e}", pulse.tau_p(), f.delta_f());
    println!("partials x, y, z = {:.3e}, {:.3e}, {:.3e}", f.partials[0], f.partials[1], f.partials[2]);

    let (last, curve) = polarization_deviation(result.trajectory.as_deref(), Axis::Y)?;
    for (t, d) in curve.iter().step_by(128) {
        println!("t = {t:.5}  ⟨σ^y⟩ = {d:+.4}");
    }
    println!("final deviation {last:.3e}");
    Ok(())
}
