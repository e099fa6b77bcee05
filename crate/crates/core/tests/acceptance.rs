//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! `PASS`/`FAIL` line per criterion and exits non-zero if any of them fails.
//!
//! `ACCEPTANCE_ONLY=1,7` restricts the run to a subset of criteria.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use pulselab::harness::{log_grid, run_plateau, run_prefactor_check, CheckConfig, PulseFit};
use pulselab::magnus::{closed_form_df2, evaluate_i32, minimize_i32, verify_nogo, DesignConfig, FEASIBILITY_TOLERANCE};
use pulselab::metrics::{frobenius_shortcut, frobenius_trace_formula};
use pulselab::noise::check_covariance;
use pulselab::{
    frobenius_from_unitary, run_scaling, AutocorrelationModel, NoiseSampler, PulseCatalog, ScalingExperimentConfig,
    ScalingResult, TimeGrid, Unitary2,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

const SHAPED: [&str; 5] = ["CORPSE", "SCORPSE", "CLASS2ND", "SYM2ND", "ASYM2ND"];
const ALL: [&str; 6] = ["RECT", "CORPSE", "SCORPSE", "CLASS2ND", "SYM2ND", "ASYM2ND"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Scaling sweeps shared between criteria 1, 2, 8 and 9.
struct Sweeps {
    catalog: PulseCatalog,
    gaussian: Option<ScalingResult>,
    exponential: Option<ScalingResult>,
}

impl Sweeps {
    fn sweep(&self, model: AutocorrelationModel) -> ScalingResult {
        let mut cfg = ScalingExperimentConfig::desk(model, &ALL);
        cfg.track_polarization = true;
        run_scaling(&cfg, &self.catalog).expect("scaling sweep")
    }

    fn gaussian(&mut self) -> &ScalingResult {
        if self.gaussian.is_none() {
            self.gaussian = Some(self.sweep(AutocorrelationModel::gaussian(1.0, 0.1).unwrap()));
        }
        self.gaussian.as_ref().unwrap()
    }

    fn exponential(&mut self) -> &ScalingResult {
        if self.exponential.is_none() {
            self.exponential = Some(self.sweep(AutocorrelationModel::exponential(1.0, 0.01).unwrap()));
        }
        self.exponential.as_ref().unwrap()
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn slopes(result: &ScalingResult, targets: &[(&str, f64, f64)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(name, target, tol) in targets {
        let f = &result.fit(name).expect("pulse in sweep").total;
        let ok = within(f.slope, target, tol);
        pass &= ok;
        parts.push(format!("{name} {:.3}±{:.3}{}", f.slope, f.slope_err, if ok { "" } else { " ✗" }));
    }
    outcome(pass, parts.join(", "))
}

fn criterion_1(s: &mut Sweeps) -> Outcome {
    let mut targets = vec![("RECT", 1.0, 0.1), ("CORPSE", 2.0, 0.15), ("SCORPSE", 2.0, 0.15)];
    targets.extend(["CLASS2ND", "SYM2ND", "ASYM2ND"].map(|n| (n, 3.0, 0.2)));
    slopes(s.gaussian(), &targets)
}

fn criterion_2(s: &mut Sweeps) -> Outcome {
    let mut targets = vec![("RECT", 1.0, 0.1)];
    targets.extend(SHAPED.map(|n| (n, 1.5, 0.1)));
    slopes(s.exponential(), &targets)
}

fn criterion_3() -> Outcome {
    let catalog = PulseCatalog::builtin();
    let mut pass = true;
    let mut parts = Vec::new();
    for gamma in [0.01, 0.1] {
        let model = AutocorrelationModel::exponential(1.0, gamma).unwrap();
        for name in ["CORPSE", "SCORPSE"] {
            let rows = run_prefactor_check(catalog.get(name).unwrap(), &model, &[3e-3, 1e-2], &CheckConfig::default())
                .expect("prefactor check");
            for r in rows {
                let z = r.deviation_sigmas();
                let ok = z.abs() <= 3.0;
                pass &= ok;
                parts.push(format!(
                    "{name} γ={gamma} 1/v={}: ratio {:.3}±{:.3} ({z:+.1}σ){}",
                    r.inv_v,
                    r.ratio,
                    r.ratio_err,
                    if ok { "" } else { " ✗" }
                ));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let catalog = PulseCatalog::builtin();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["CORPSE", "SCORPSE"] {
        for (gamma, inv_v) in [(0.01, 1e-2), (0.1, 3e-3), (1.0, 1.0)] {
            let model = AutocorrelationModel::exponential(1.0, gamma).unwrap();
            let pulse = catalog.get(name).unwrap().for_inverse_amplitude(inv_v);
            let started = Instant::now();
            let value = evaluate_i32(&pulse, &model).expect("quadrature");
            let secs = started.elapsed().as_secs_f64();
            let expected = closed_form_df2(name, &model, inv_v).unwrap() * 0.75;
            let rel = (value / expected - 1.0).abs();
            let ok = rel <= 1e-6 && secs < 1.0;
            pass &= ok;
            parts.push(format!("{name} γ={gamma}: rel {rel:.1e} in {secs:.3}s{}", if ok { "" } else { " ✗" }));
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let catalog = PulseCatalog::builtin();
    let model = AutocorrelationModel::exponential(1.0, 0.01).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let grids = [256, 512, 1024, 2048, 4096];
    for pulse in catalog.pulses().iter().filter(|p| p.order() >= 1) {
        let reports: Vec<_> = grids.iter().map(|&n| verify_nogo(pulse, &model, n).expect("no-go check")).collect();
        let positive = reports.iter().all(|r| r.positive() && r.i32_b_form > 0.0);
        let bounded = reports.iter().all(|r| r.identity_residual <= r.max_step);
        let order = reports
            .windows(2)
            .map(|w| (w[0].identity_residual / w[1].identity_residual).log2())
            .fold(f64::INFINITY, f64::min);
        let ok = positive && bounded && order >= 0.9;
        pass &= ok;
        parts.push(format!(
            "{} I32={:.4e} order {order:.3}{}",
            pulse.name(),
            reports[reports.len() - 1].i32_b_form,
            if ok { "" } else { " ✗" }
        ));
    }
    let reference = evaluate_i32(&catalog.get("SCORPSE").unwrap().for_inverse_amplitude(1.0), &model).unwrap();
    for start in ["SCORPSE", "CORPSE"] {
        for n in 3..=5 {
            let cfg = DesignConfig { n_segments: n, v_max: 1.0, restarts: 10, ..Default::default() };
            match minimize_i32(catalog.get(start).unwrap(), &model, &cfg) {
                Ok(r) => {
                    let feasible = r.violation <= FEASIBILITY_TOLERANCE;
                    let ok = !(feasible && r.i32_min <= 1e-3 * reference);
                    pass &= ok;
                    parts.push(format!(
                        "design {start}/{n}: I32/I32_SCORPSE {:.4}{}",
                        r.i32_min / reference,
                        if ok { "" } else { " ✗" }
                    ));
                }
                Err(e) => parts.push(format!("design {start}/{n}: no feasible point ({e})")),
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let catalog = PulseCatalog::builtin();
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for tau in [1.0, 1e-3, 0.37, 20.0] {
        for name in ["CORPSE", "SCORPSE"] {
            let (s, c) = catalog.get(name).unwrap().clone().with_duration(tau).first_order_integrals();
            worst = worst.max(s.abs().max(c.abs()) / tau);
        }
        let (s, c) = catalog.get("RECT").unwrap().clone().with_duration(tau).first_order_integrals();
        let rect = (s - 2.0 * tau / PI).abs().max(c.abs());
        pass &= rect <= 1e-12;
        worst = worst.max(rect / tau);
    }
    pass &= worst <= 1e-12;
    outcome(pass, format!("max |deviation|/τ_p = {worst:.1e}"))
}

fn random_su2(rng: &mut ChaCha12Rng) -> Unitary2 {
    let mut q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= n);
    let a = Complex64::new(q[0], q[1]);
    let b = Complex64::new(q[2], q[3]);
    Unitary2([[a, -b.conj()], [b, a.conj()]])
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut max_gap: f64 = 0.0;
    let mut in_range = true;
    for _ in 0..100_000 {
        let u = random_su2(&mut rng);
        let trace = frobenius_trace_formula(&u);
        let short = frobenius_shortcut(&u);
        let partials = frobenius_from_unitary(&u).unwrap().delta_f_squared;
        max_gap = max_gap.max((trace - short).abs()).max((trace - partials).abs());
        in_range &= [trace, short, partials].iter().all(|v| (0.0..=4.0 / 3.0).contains(v));
    }
    let catalog = PulseCatalog::builtin();
    let mut worst_noiseless: f64 = 0.0;
    for pulse in catalog.pulses() {
        for steps in [8, 512] {
            worst_noiseless = worst_noiseless.max(pulselab::harness::noiseless_delta_f(pulse, steps).unwrap());
        }
    }
    let pass = max_gap <= 1e-12 && in_range && worst_noiseless < 1e-10;
    outcome(
        pass,
        format!("max formula gap {max_gap:.1e}, range ok {in_range}, max noiseless Δ_F {worst_noiseless:.1e}"),
    )
}

fn polarization_fit(result: &ScalingResult) -> (f64, f64) {
    let f: &PulseFit = result.fit("SCORPSE").unwrap();
    let p = f.polarization.as_ref().expect("polarization tracked");
    (p.slope, p.slope_err)
}

fn criterion_8(s: &mut Sweeps) -> Outcome {
    let (g, ge) = polarization_fit(s.gaussian());
    let (e, ee) = polarization_fit(s.exponential());
    let pass = within(g, 4.0, 0.3) && within(e, 3.0, 0.3);
    outcome(pass, format!("SCORPSE Gaussian {g:.3}±{ge:.3}, exponential {e:.3}±{ee:.3}"))
}

fn partial_agreement(label: &str, result: &ScalingResult) -> (bool, String) {
    let f = result.fit("SCORPSE").unwrap();
    let mut ok = true;
    let mut parts = vec![format!("total {:.3}", f.total.slope)];
    for (a, axis) in ["x", "y", "z"].iter().enumerate() {
        match &f.partials[a] {
            Some(p) => {
                ok &= (p.slope - f.total.slope).abs() <= 0.1;
                parts.push(format!("{axis} {:.3}", p.slope));
            }
            None => {
                ok = false;
                parts.push(format!("{axis} unfitted"));
            }
        }
    }
    (ok, format!("{label}: {}", parts.join(" ")))
}

fn criterion_9(s: &mut Sweeps) -> Outcome {
    let (g, gd) = partial_agreement("Gaussian", s.gaussian());
    let (e, ed) = partial_agreement("exponential", s.exponential());
    outcome(g && e, format!("{gd}; {ed}"))
}

fn criterion_10() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for model in
        [AutocorrelationModel::gaussian(1.0, 1.0).unwrap(), AutocorrelationModel::exponential(1.0, 1.0).unwrap()]
    {
        let grid = Arc::new(TimeGrid::uniform(2.0, 16).unwrap());
        let sampler = NoiseSampler::new(&model, grid.clone(), 11).unwrap();
        let check = check_covariance(&sampler, 200_000);
        let z = check.max_covariance_z();
        let twin = NoiseSampler::new(&model, grid, 11).unwrap();
        let same = (0..4)
            .all(|k| sampler.sample_block(&mut sampler.stream(k), 300) == twin.sample_block(&mut twin.stream(k), 300));
        let ok = z <= 5.0 && same;
        pass &= ok;
        parts.push(format!("{:?}: max |z| {z:.2}, reproducible {same}", model.kind));
    }
    let catalog = PulseCatalog::builtin();
    let model = AutocorrelationModel::exponential(1.0, 0.01).unwrap();
    let mut cfg = ScalingExperimentConfig::desk(model, &["SCORPSE"]);
    cfg.inv_v_grid = vec![1e-3, 3e-3, 1e-2];
    cfg.fit_window = (1e-3, 1e-2);
    cfg.realizations = 4096;
    cfg.workers = 1;
    let one = run_scaling(&cfg, &catalog).unwrap();
    cfg.workers = 3;
    let three = run_scaling(&cfg, &catalog).unwrap();
    let same = one.cells == three.cells;
    pass &= same;
    parts.push(format!("sweep identical across thread counts {same}"));
    outcome(pass, parts.join("; "))
}

fn criterion_11() -> Outcome {
    let model = AutocorrelationModel::gaussian(1.0, 0.1).unwrap();
    let report =
        run_plateau(&PulseCatalog::builtin(), "SYM2ND", 3, &model, &log_grid(1e-3, 1e-1, 8), &CheckConfig::default())
            .expect("plateau sweep");
    let pass = report.plateau >= 1e-3 / 3.0 && report.plateau <= 3e-3;
    outcome(pass, format!("plateau Δ_F {:.3e}, noiseless Δ_F {:.3e}", report.plateau, report.noiseless))
}

fn main() {
    let only: Option<BTreeSet<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let selected = |k: usize| only.as_ref().is_none_or(|set| set.contains(&k));

    let mut sweeps = Sweeps { catalog: PulseCatalog::builtin(), gaussian: None, exponential: None };
    let mut failed = Vec::new();
    for k in 1..=11 {
        if !selected(k) {
            continue;
        }
        let started = Instant::now();
        let o = match k {
            1 => criterion_1(&mut sweeps),
            2 => criterion_2(&mut sweeps),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(&mut sweeps),
            9 => criterion_9(&mut sweeps),
            10 => criterion_10(),
            _ => criterion_11(),
        };
        println!(
            "criterion {k:>2}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed.push(k);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
