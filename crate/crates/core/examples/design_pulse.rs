//! Searches four-segment first-order π pulses for a small cusp integral at a
//! fixed amplitude bound, starting from SCORPSE.

use pulselab::magnus::{evaluate_i32, minimize_i32, DesignConfig};
use pulselab::{AutocorrelationModel, PulseCatalog};

fn main() -> pulselab::Result<()> {
    let catalog = PulseCatalog::builtin();
    let model = AutocorrelationModel::exponential(1.0, 0.01)?;
    let start = catalog.get("SCORPSE")?;
    let reference = evaluate_i32(&start.for_inverse_amplitude(1.0), &model)?;

    let config = DesignConfig { n_segments: 4, restarts: 4, ..Default::default() };
    let r = minimize_i32(start, &model, &config)?;
    println!("SCORPSE I3/2 = {reference:.6e}");
    println!("design  I3/2 = {:.6e} (ratio {:.4}), violation {:.1e}", r.i32_min, r.i32_min / reference, r.violation);
    let history: Vec<String> = r.history.iter().map(|v| format!("{v:.6e}")).collect();
    println!("best after each restart: {}", history.join(" "));
    println!("{}", serde_json::to_string_pretty(&r.record()).expect("record serializes"));
    Ok(())
}
