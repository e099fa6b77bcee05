//! Measured ⟨Δ_F²⟩ of CORPSE under exponential noise against the leading
//! cusp term.

use pulselab::harness::{run_prefactor_check, CheckConfig};
use pulselab::{AutocorrelationModel, PulseCatalog};

fn main() -> pulselab::Result<()> {
    let catalog = PulseCatalog::builtin();
    let model = AutocorrelationModel::exponential(1.0, 0.1)?;
    let config = CheckConfig { realizations: 5_000, ..Default::default() };
    for row in run_prefactor_check(catalog.get("CORPSE")?, &model, &[3e-3, 1e-2], &config)? {
        println!(
            "1/v = {:<6} measured {:.4e} ± {:.1e}  predicted {:.4e}  ({:+.1}σ)",
            row.inv_v,
            row.measured,
            row.stderr,
            row.predicted,
            row.deviation_sigmas()
        );
    }
    Ok(())
}
