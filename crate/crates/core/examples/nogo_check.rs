//! Discretized operator form of the cusp integral for each shaped pulse,
//! with the identity residual on successively finer grids.

use pulselab::magnus::verify_nogo;
use pulselab::{AutocorrelationModel, PulseCatalog};

fn main() -> pulselab::Result<()> {
    let model = AutocorrelationModel::exponential(1.0, 0.01)?;
    for p in PulseCatalog::builtin().pulses().iter().filter(|p| p.order() >= 1) {
        println!("{}", p.name());
        for n in [256, 1024, 4096] {
            let r = verify_nogo(p, &model, n)?;
            println!(
                "  N = {n:<5} I3/2 quadratic {:.6e}  B form {:.6e}  residual {:.2e}  positive {}",
                r.i32_quadratic,
                r.i32_b_form,
                r.identity_residual,
                r.positive()
            );
        }
    }
    Ok(())
}
