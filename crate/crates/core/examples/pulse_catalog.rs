//! Lists the built-in pulses, validates them and shows what truncating the
//! catalog to a few decimals does to the constraints.

use pulselab::pulses::ValidationReport;
use pulselab::PulseCatalog;

fn main() -> pulselab::Result<()> {
    let catalog = PulseCatalog::builtin();
    for p in catalog.pulses() {
        let (s, c) = p.first_order_integrals();
        println!(
            "{:<9} order {}  segments {}  peak amplitude·τ_p {:>8.4}  S {:+.1e}  C {:+.1e}",
            p.name(),
            p.order(),
            p.segments().len(),
            p.peak_amplitude_taup(),
            s,
            c
        );
    }
    println!("full precision passes: {}", ValidationReport::check(&catalog).passed());

    let cut = catalog.truncated(3)?;
    for check in ValidationReport::check(&cut).checks {
        println!(
            "3 decimals {:<9} angle error {:+.2e}  S {:+.2e}  C {:+.2e}",
            check.name, check.angle_error, check.s, check.c
        );
    }
    Ok(())
}
