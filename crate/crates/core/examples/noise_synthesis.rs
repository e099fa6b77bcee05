//! Draws correlated noise for both autocorrelation models and compares the
//! sample covariance with the model.

use std::sync::Arc;

use pulselab::noise::check_covariance;
use pulselab::{AutocorrelationModel, NoiseSampler, TimeGrid};

fn main() -> pulselab::Result<()> {
    let grid = Arc::new(TimeGrid::uniform(2.0, 16)?);
    for model in [AutocorrelationModel::gaussian(1.0, 1.0)?, AutocorrelationModel::exponential(1.0, 1.0)?] {
        let sampler = NoiseSampler::new(&model, grid.clone(), 42)?;
        let first = sampler.sample(&mut sampler.stream(0));
        println!("{:?}: first realization starts {:.4?}", model.kind, &first.values()[..4]);

        let check = check_covariance(&sampler, 50_000);
        println!("  lag      g(lag)    sample     z");
        for e in check.entries.iter().filter(|e| e.i == 0).take(6) {
            println!("  {:<8.4} {:<9.5} {:<9.5} {:+.2}", e.lag, e.expected, e.sample, e.z());
        }
        println!("  max |z| = {:.2}, passed = {}", check.max_covariance_z(), check.passed());
    }
    Ok(())
}
