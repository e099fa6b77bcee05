//! Command-line front end.
//!
//! Every option can come from a flat JSON config file (`--config`); a flag
//! given on the command line wins over the file. The seed falls back to the
//! `PULSELAB_SEED` environment variable, then to 1. Outputs go to `--out`.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration or I/O error,
//! 3 numerical failure (including a failed check).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{self, csv_to_dat, default_window, log_grid, CheckConfig, Estimator, ScalingExperimentConfig};
use crate::magnus::{self, DesignConfig};
use crate::noise::{self, AutocorrelationModel, CorrelationKind, NoiseSampler, TimeGrid};
use crate::pulses::{validate_catalog, PulseCatalog, PulseRecord, ValidationReport};

pub const SEED_ENV: &str = "PULSELAB_SEED";

#[derive(Debug, Parser)]
#[command(name = "pulselab", version, about = "Shaped spin-flip pulses under classical dephasing noise")]
pub struct Cli {
    /// JSON file with default values for any option.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the effective configuration of this run to a JSON file.
    #[arg(long, global = true)]
    pub write_config: Option<PathBuf>,
    /// Pulse catalog (defaults to the built-in one).
    #[arg(long, global = true)]
    pub catalog: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Δ_F against 1/v for a set of pulses, with fitted exponents.
    Scaling(ScalingArgs),
    /// Measured ⟨Δ_F²⟩ of CORPSE or SCORPSE against the closed form.
    Prefactor(PrefactorArgs),
    /// Operator form of the positivity of the cusp integral.
    Nogo(NogoArgs),
    /// Search a pulse shape with small cusp integral.
    Design(DesignArgs),
    /// Sample covariance of synthesised noise against the model.
    NoiseValidate(NoiseArgs),
    /// Check total angle and first-order conditions of the catalog.
    CatalogValidate,
    /// Repeat one cell on several step counts.
    Convergence(ConvergenceArgs),
    /// Sweep a pulse whose catalog entry is cut to a few decimals.
    Plateau(PlateauArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// gaussian or exponential
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub g0: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eta0: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct McArgs {
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Time steps per pulse.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub mc: McArgs,
    /// Comma-separated pulse names.
    #[arg(long, value_delimiter = ',')]
    pub pulses: Option<Vec<String>>,
    #[arg(long)]
    pub inv_v_min: Option<f64>,
    #[arg(long)]
    pub inv_v_max: Option<f64>,
    /// Number of log-spaced 1/v points.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub fit_min: Option<f64>,
    #[arg(long)]
    pub fit_max: Option<f64>,
    /// mean_df2 or mean_df
    #[arg(long)]
    pub estimator: Option<String>,
    /// Record the spin state and report |⟨σ^y⟩ + 1|.
    #[arg(long)]
    pub track_polarization: bool,
}

#[derive(Debug, Args)]
pub struct PrefactorArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub mc: McArgs,
    #[arg(long)]
    pub pulse: Option<String>,
    /// Comma-separated 1/v values.
    #[arg(long, value_delimiter = ',')]
    pub inv_v: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct NogoArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub pulse: Option<String>,
    /// Number of grid steps.
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub v_max: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Catalog pulse to start from.
    #[arg(long)]
    pub start: Option<String>,
    /// Name of the designed pulse.
    #[arg(long)]
    pub name: Option<String>,
    /// Only evaluate the start pulse.
    #[arg(long)]
    pub fixed: bool,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Number of grid steps.
    #[arg(long)]
    pub noise_points: Option<usize>,
    /// Length of the sampled interval.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub pulse: Option<String>,
    #[arg(long)]
    pub inv_v: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub step_counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct PlateauArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub mc: McArgs,
    #[arg(long)]
    pub pulse: Option<String>,
    #[arg(long)]
    pub decimals: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub inv_v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Task {
    Scaling,
    Prefactor,
    Nogo,
    Design,
    NoiseValidate,
    CatalogValidate,
    Convergence,
    Plateau,
}

/// Flat configuration; every key is optional and mirrors a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulses: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inv_v_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inv_v_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inv_v: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub track_polarization: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decimals: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?)
    }
}

/// Overwrites `slot` with a command-line value when one was given.
fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn set_flag(slot: &mut Option<bool>, flag: bool) {
    if flag {
        *slot = Some(true);
    }
}

impl ModelArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.model, self.model);
        set(&mut c.g0, self.g0);
        set(&mut c.gamma, self.gamma);
        set(&mut c.eta0, self.eta0);
    }
}

impl McArgs {
    fn apply(self, c: &mut RunConfig) {
        set(&mut c.realizations, self.realizations);
        set(&mut c.steps, self.steps);
    }
}

/// Merges the config file (if any) with the command line.
fn effective_config(cli: Cli) -> Result<(RunConfig, Task)> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut c.seed, cli.seed);
    set(&mut c.workers, cli.workers);
    set(&mut c.catalog, cli.catalog);
    set(&mut c.out, cli.out);
    if c.seed.is_none() {
        if let Ok(s) = std::env::var(SEED_ENV) {
            let seed = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV} is not an unsigned integer: '{s}'")))?;
            c.seed = Some(seed);
        }
    }
    let task = match cli.command {
        Command::Scaling(a) => {
            let ScalingArgs {
                model,
                mc,
                pulses,
                inv_v_min,
                inv_v_max,
                points,
                fit_min,
                fit_max,
                estimator,
                track_polarization,
            } = a;
            model.apply(&mut c);
            mc.apply(&mut c);
            set(&mut c.pulses, pulses);
            set(&mut c.inv_v_min, inv_v_min);
            set(&mut c.inv_v_max, inv_v_max);
            set(&mut c.points, points);
            set(&mut c.fit_min, fit_min);
            set(&mut c.fit_max, fit_max);
            set(&mut c.estimator, estimator);
            set_flag(&mut c.track_polarization, track_polarization);
            Task::Scaling
        }
        Command::Prefactor(a) => {
            a.model.apply(&mut c);
            a.mc.apply(&mut c);
            set(&mut c.pulse, a.pulse);
            set(&mut c.inv_v, a.inv_v);
            Task::Prefactor
        }
        Command::Nogo(a) => {
            a.model.apply(&mut c);
            set(&mut c.pulse, a.pulse);
            set(&mut c.grid, a.grid);
            Task::Nogo
        }
        Command::Design(a) => {
            a.model.apply(&mut c);
            set(&mut c.segments, a.segments);
            set(&mut c.v_max, a.v_max);
            set(&mut c.restarts, a.restarts);
            set(&mut c.iterations, a.iterations);
            set(&mut c.start, a.start);
            set(&mut c.name, a.name);
            set_flag(&mut c.fixed, a.fixed);
            Task::Design
        }
        Command::NoiseValidate(a) => {
            a.model.apply(&mut c);
            set(&mut c.realizations, a.realizations);
            set(&mut c.noise_points, a.noise_points);
            set(&mut c.tau, a.tau);
            Task::NoiseValidate
        }
        Command::Convergence(a) => {
            a.model.apply(&mut c);
            set(&mut c.realizations, a.realizations);
            set(&mut c.pulse, a.pulse);
            set(&mut c.inv_v, a.inv_v.map(|x| vec![x]));
            set(&mut c.step_counts, a.step_counts);
            Task::Convergence
        }
        Command::Plateau(a) => {
            a.model.apply(&mut c);
            a.mc.apply(&mut c);
            set(&mut c.pulse, a.pulse);
            set(&mut c.decimals, a.decimals);
            set(&mut c.inv_v, a.inv_v);
            Task::Plateau
        }
        Command::CatalogValidate => Task::CatalogValidate,
    };
    Ok((c, task))
}

impl RunConfig {
    fn model(&self, default_kind: CorrelationKind, default_gamma: f64) -> Result<AutocorrelationModel> {
        let kind = match &self.model {
            Some(m) => m.parse()?,
            None => default_kind,
        };
        let gamma = self.gamma.unwrap_or(default_gamma);
        let m = AutocorrelationModel::new(kind, self.g0.unwrap_or(1.0), gamma)?;
        Ok(m.with_offset(self.eta0.unwrap_or(0.0)))
    }

    fn catalog(&self) -> Result<PulseCatalog> {
        match &self.catalog {
            Some(p) => PulseCatalog::load(p),
            None => Ok(PulseCatalog::builtin()),
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    fn check(&self) -> CheckConfig {
        let d = CheckConfig::default();
        CheckConfig {
            realizations: self.realizations.unwrap_or(d.realizations),
            steps_per_pulse: self.steps.unwrap_or(d.steps_per_pulse),
            seed: self.seed(),
            workers: self.workers.unwrap_or(0),
        }
    }

    /// Scaling experiment described by this configuration.
    pub fn scaling(&self) -> Result<ScalingExperimentConfig> {
        let model = self.model(CorrelationKind::Exponential, 0.01)?;
        let pulses = self.pulses.clone().unwrap_or_else(|| {
            ["RECT", "CORPSE", "SCORPSE", "CLASS2ND", "SYM2ND", "ASYM2ND"].map(String::from).to_vec()
        });
        let (wlo, whi) = default_window(model.kind);
        let lo = self.inv_v_min.unwrap_or(wlo);
        let hi = self.inv_v_max.unwrap_or(whi);
        let mut cfg = ScalingExperimentConfig::desk(model, &[]);
        cfg.pulses = pulses;
        cfg.inv_v_grid = log_grid(lo, hi, self.points.unwrap_or(8));
        cfg.realizations = self.realizations.unwrap_or(cfg.realizations);
        cfg.steps_per_pulse = self.steps.unwrap_or(cfg.steps_per_pulse);
        cfg.seed = self.seed();
        cfg.fit_window = (self.fit_min.unwrap_or(lo.max(wlo)), self.fit_max.unwrap_or(hi.min(whi)));
        cfg.estimator = match &self.estimator {
            Some(e) => e.parse()?,
            None => Estimator::MeanDf2,
        };
        cfg.track_polarization = self.track_polarization.unwrap_or(false);
        cfg.workers = self.workers.unwrap_or(0);
        Ok(cfg)
    }
}

fn write_table(dir: &Path, stem: &str, csv: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    std::fs::write(dir.join(format!("{stem}.dat")), csv_to_dat(csv))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Outcome of a subcommand: `Ok(false)` is a check that ran but failed.
type Outcome = Result<bool>;

fn execute(c: &RunConfig, task: Task, out: &mut dyn Write) -> Outcome {
    let dir = c.out_dir();
    match task {
        Task::Scaling => {
            let cfg = c.scaling()?;
            let result = harness::run_scaling(&cfg, &c.catalog()?)?;
            result.write(&dir)?;
            writeln!(out, "{:<10} {:>8} {:>8} {:>6}", "pulse", "slope", "error", "used")?;
            for f in &result.fits {
                writeln!(
                    out,
                    "{:<10} {:>8.4} {:>8.4} {:>6}",
                    f.pulse,
                    f.total.slope,
                    f.total.slope_err,
                    f.total.used.len()
                )?;
            }
            Ok(true)
        }
        Task::Prefactor => {
            let model = c.model(CorrelationKind::Exponential, 0.01)?;
            let name = c.pulse.clone().unwrap_or_else(|| "CORPSE".into());
            let catalog = c.catalog()?;
            let pulse = catalog.get(&name)?;
            let inv_v = c.inv_v.clone().unwrap_or_else(|| vec![3e-3, 1e-2]);
            let rows = harness::run_prefactor_check(pulse, &model, &inv_v, &c.check())?;
            let mut csv = String::from("inv_v,measured,stderr,predicted,ratio,ratio_err\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                    r.inv_v, r.measured, r.stderr, r.predicted, r.ratio, r.ratio_err
                ));
                writeln!(out, "1/v = {:<8} ratio = {:.4} ± {:.4}", r.inv_v, r.ratio, r.ratio_err)?;
            }
            write_table(&dir, &format!("prefactor_{}", pulse.name().to_ascii_lowercase()), &csv)?;
            Ok(true)
        }
        Task::Nogo => {
            let model = c.model(CorrelationKind::Exponential, 0.01)?;
            let name = c.pulse.clone().unwrap_or_else(|| "SCORPSE".into());
            let catalog = c.catalog()?;
            let pulse = catalog.get(&name)?;
            let report = magnus::verify_nogo(pulse, &model, c.grid.unwrap_or(2048))?;
            let exact = magnus::evaluate_i32(pulse, &model)?;
            #[derive(Serialize)]
            struct NogoOut<'a> {
                pulse: &'a str,
                i32_quadrature: f64,
                #[serde(flatten)]
                report: &'a magnus::NoGoReport,
            }
            write_json(
                &dir,
                &format!("nogo_{}.json", pulse.name().to_ascii_lowercase()),
                &NogoOut { pulse: pulse.name(), i32_quadrature: exact, report: &report },
            )?;
            writeln!(out, "I32 (operator form)   {:e}", report.i32_b_form)?;
            writeln!(out, "I32 (quadrature)      {exact:e}")?;
            writeln!(out, "identity residual     {:e} (max step {:e})", report.identity_residual, report.max_step)?;
            Ok(report.positive())
        }
        Task::Design => {
            let model = c.model(CorrelationKind::Exponential, 1.0)?;
            let d = DesignConfig::default();
            let cfg = DesignConfig {
                n_segments: c.segments.unwrap_or(d.n_segments),
                v_max: c.v_max.unwrap_or(d.v_max),
                restarts: c.restarts.unwrap_or(d.restarts),
                iterations: c.iterations.unwrap_or(d.iterations),
                seed: c.seed(),
                fixed: c.fixed.unwrap_or(false),
                name: c.name.clone().unwrap_or(d.name.clone()),
                ..d
            };
            let catalog = c.catalog()?;
            let start = catalog.get(c.start.as_deref().unwrap_or("SCORPSE"))?;
            let r = magnus::minimize_i32(start, &model, &cfg)?;
            let records: Vec<PulseRecord> = vec![r.record()];
            write_json(&dir, "design.json", &records)?;
            writeln!(out, "I32 = {:e}  violation = {:e}  evaluations = {}", r.i32_min, r.violation, r.evaluations)?;
            Ok(true)
        }
        Task::NoiseValidate => {
            let model = c.model(CorrelationKind::Exponential, 1.0)?;
            let n = c.noise_points.unwrap_or(16);
            let grid = TimeGrid::uniform(c.tau.unwrap_or(1.0), n)?;
            let sampler = NoiseSampler::new(&model, grid.into(), c.seed())?;
            let check = noise::check_covariance(&sampler, c.realizations.unwrap_or(200_000));
            let mut csv = String::from("i,j,lag,expected,sample,stderr,z\n");
            for e in &check.entries {
                csv.push_str(&format!(
                    "{},{},{:e},{:e},{:e},{:e},{:e}\n",
                    e.i,
                    e.j,
                    e.lag,
                    e.expected,
                    e.sample,
                    e.stderr,
                    e.z()
                ));
            }
            write_table(&dir, "noise_covariance", &csv)?;
            writeln!(
                out,
                "max |z| covariance {:.3}, mean {:.3}: {}",
                check.max_covariance_z(),
                check.max_mean_z,
                if check.passed() { "pass" } else { "FAIL" }
            )?;
            Ok(check.passed())
        }
        Task::CatalogValidate => {
            let catalog = c.catalog()?;
            let report = ValidationReport::check(&catalog);
            for p in &report.checks {
                writeln!(
                    out,
                    "{:<10} order {}  angle error {:.2e}  S {:.2e}  C {:.2e}  {}",
                    p.name,
                    p.order,
                    p.angle_error,
                    p.s,
                    p.c,
                    if p.passed() { "ok" } else { "FAIL" }
                )?;
            }
            validate_catalog(&catalog)?;
            Ok(true)
        }
        Task::Convergence => {
            let model = c.model(CorrelationKind::Exponential, 0.01)?;
            let catalog = c.catalog()?;
            let pulse = catalog.get(c.pulse.as_deref().unwrap_or("SCORPSE"))?;
            let inv_v = c.inv_v.as_ref().and_then(|v| v.first().copied()).unwrap_or(1e-2);
            let steps = c.step_counts.clone().unwrap_or_else(|| vec![256, 512, 1024]);
            let report = harness::run_convergence_check(pulse, &model, inv_v, &steps, &c.check())?;
            let mut csv = String::from("steps,mean_df2,stderr_df2,drift\n");
            for r in &report.rows {
                let drift = r.drift.map_or(String::new(), |d| format!("{d:e}"));
                csv.push_str(&format!("{},{:e},{:e},{}\n", r.steps, r.mean_df2, r.stderr_df2, drift));
                writeln!(out, "N = {:<6} ⟨Δ_F²⟩ = {:e}  drift = {drift}", r.steps, r.mean_df2)?;
            }
            write_table(&dir, &format!("convergence_{}", pulse.name().to_ascii_lowercase()), &csv)?;
            Ok(report.passed)
        }
        Task::Plateau => {
            let model = c.model(CorrelationKind::Gaussian, 0.1)?;
            let name = c.pulse.clone().unwrap_or_else(|| "SYM2ND".into());
            let inv_v = c.inv_v.clone().unwrap_or_else(|| log_grid(1e-3, 1e-1, 8));
            let report =
                harness::run_plateau(&c.catalog()?, &name, c.decimals.unwrap_or(3), &model, &inv_v, &c.check())?;
            let mut csv = String::from("inv_v,mean_df2,stderr_df2,mean_df\n");
            for cell in &report.cells {
                csv.push_str(&format!(
                    "{:e},{:e},{:e},{:e}\n",
                    cell.inv_v,
                    cell.df2.mean,
                    cell.df2.stderr,
                    cell.mean_df()
                ));
            }
            write_table(&dir, &format!("plateau_{}", name.to_ascii_lowercase()), &csv)?;
            writeln!(out, "plateau Δ_F = {:e}, noiseless Δ_F = {:e}", report.plateau, report.noiseless)?;
            Ok(true)
        }
    }
}

/// Exit code for an error: 2 for configuration and I/O, 3 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn report_error(err: &mut dyn Write, kind: &str, message: &str, code: i32) {
    let v = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
    let _ = writeln!(err, "{v}");
}

/// Runs the command line `args` (program name first) and returns the exit
/// code; normal output goes to `out`, errors as one JSON line to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            report_error(err, "usage", &e.to_string(), 1);
            return 1;
        }
    };
    let write_config = cli.write_config.clone();
    let result = effective_config(cli).and_then(|(cfg, task)| {
        if let Some(p) = &write_config {
            cfg.save(p)?;
        }
        execute(&cfg, task, out)
    });
    match result {
        Ok(true) => 0,
        Ok(false) => {
            report_error(err, "check_failed", "the check ran but did not pass", 3);
            3
        }
        Err(e) => {
            let code = exit_code(&e);
            report_error(err, if code == 2 { "config" } else { "numerical" }, &e.to_string(), code);
            code
        }
    }
}
