//! A reduced scaling sweep: RECT and SCORPSE under exponential noise.
//! Writes CSV, `.dat` and a JSON summary to `results/example_sweep`.

use pulselab::{run_scaling, AutocorrelationModel, PulseCatalog, ScalingExperimentConfig};

fn main() -> pulselab::Result<()> {
    let model = AutocorrelationModel::exponential(1.0, 0.01)?;
    let mut config = ScalingExperimentConfig::desk(model, &["RECT", "SCORPSE"]);
    config.realizations = 4_000;
    config.steps_per_pulse = 256;

    let result = run_scaling(&config, &PulseCatalog::builtin())?;
    for fit in &result.fits {
        println!("{:<8} Δ_F ∝ (1/v)^{:.3} ± {:.3}", fit.pulse, fit.total.slope, fit.total.slope_err);
    }
    print!("{}", result.to_csv("SCORPSE"));
    result.write(std::path::Path::new("results/example_sweep"))?;
    Ok(())
}
