//! Cusp integral of every catalog pulse under exponential noise, next to the
//! closed forms available for CORPSE and SCORPSE.

use pulselab::magnus::{anomalous_integrals, closed_form_df2};
use pulselab::{AutocorrelationModel, PulseCatalog};

fn main() -> pulselab::Result<()> {
    let model = AutocorrelationModel::exponential(1.0, 0.01)?;
    let inv_v = 1e-2;
    println!("{:<9} {:>12} {:>12} {:>14} {:>14}", "pulse", "I1", "I3/2", "4/3 (I1+I3/2)", "closed form");
    for p in PulseCatalog::builtin().pulses() {
        let ints = anomalous_integrals(&p.for_inverse_amplitude(inv_v), &model)?;
        let closed = closed_form_df2(p.name(), &model, inv_v).map_or("-".to_string(), |v| format!("{v:.6e}"));
        println!(
            "{:<9} {:>12.4e} {:>12.4e} {:>14.6e} {:>14}",
            p.name(),
            ints.i1,
            ints.i32,
            ints.delta_f_squared(),
            closed
        );
    }
    Ok(())
}
