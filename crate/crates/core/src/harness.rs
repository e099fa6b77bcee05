//! Monte-Carlo scaling experiments: sweeps of the pulse amplitude, power-law
//! fits, prefactor and discretisation checks, and tabular output.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnus::closed_form_df2;
use crate::metrics::{final_deviation, frobenius_from_unitary, Axis, SampleStats};
use crate::noise::{AutocorrelationModel, CorrelationKind, NoiseSampler, NoiseStream, DEFAULT_EIGEN_CLIP};
use crate::propagator::PulseDrive;
use crate::pulses::{PiecewiseConstantPulse, PulseCatalog};

/// Realizations per random stream; the unit of parallel work.
pub const CHUNK: usize = 256;

/// Points whose relative standard error exceeds this are left out of fits.
pub const MAX_RELATIVE_ERROR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `√⟨Δ_F²⟩`.
    #[default]
    MeanDf2,
    /// `⟨Δ_F⟩`.
    MeanDf,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_df2" => Ok(Self::MeanDf2),
            "mean_df" => Ok(Self::MeanDf),
            _ => Err(Error::InvalidConfig(format!("unknown estimator '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingExperimentConfig {
    pub pulses: Vec<String>,
    pub model: AutocorrelationModel,
    pub inv_v_grid: Vec<f64>,
    pub realizations: usize,
    pub steps_per_pulse: usize,
    pub seed: u64,
    pub fit_window: (f64, f64),
    pub estimator: Estimator,
    pub track_polarization: bool,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

/// `n` points spaced evenly in `log(1/v)` between `lo` and `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            let mut g: Vec<f64> = (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect();
            g[0] = lo;
            g[n - 1] = hi;
            g
        }
    }
}

/// Fit window of the standard experiments for each noise model.
pub fn default_window(kind: CorrelationKind) -> (f64, f64) {
    match kind {
        CorrelationKind::Gaussian => (1e-3, 1e-1),
        CorrelationKind::Exponential => (1e-3, 3e-2),
    }
}

impl ScalingExperimentConfig {
    /// 8 points across the model's default window, `M = 2·10⁴`, `N = 512`.
    pub fn desk(model: AutocorrelationModel, pulses: &[&str]) -> Self {
        let fit_window = default_window(model.kind);
        Self {
            pulses: pulses.iter().map(|s| s.to_string()).collect(),
            model,
            inv_v_grid: log_grid(fit_window.0, fit_window.1, 8),
            realizations: 20_000,
            steps_per_pulse: 512,
            seed: 1,
            fit_window,
            estimator: Estimator::MeanDf2,
            track_polarization: false,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.inv_v_grid;
        if g.is_empty() || g.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidConfig("1/v grid must be non-empty and positive".into()));
        }
        if g.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("1/v grid must be strictly increasing".into()));
        }
        let (lo, hi) = self.fit_window;
        if !(lo <= hi) || lo < g[0] * (1.0 - 1e-12) || hi > g[g.len() - 1] * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "fit window [{lo}, {hi}] must lie inside the 1/v grid [{}, {}]",
                g[0],
                g[g.len() - 1]
            )));
        }
        if self.realizations < 2 {
            return Err(Error::InvalidConfig("need at least two realizations".into()));
        }
        if self.steps_per_pulse == 0 {
            return Err(Error::InvalidConfig("need at least one time step".into()));
        }
        if self.pulses.is_empty() {
            return Err(Error::InvalidConfig("no pulses selected".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo summary of one `(pulse, 1/v)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub pulse: String,
    pub inv_v: f64,
    /// Statistics of `Δ_F²`.
    pub df2: SampleStats,
    /// Statistics of `Δ_F`.
    pub df: SampleStats,
    /// Statistics of `(Δ_F^(x))², (Δ_F^(y))², (Δ_F^(z))²`.
    pub partials: [SampleStats; 3],
    /// Statistics of `|⟨σ^y(τ_p)⟩ + 1|` from the tracked state.
    pub polarization: Option<SampleStats>,
}

impl CellEstimate {
    pub fn mean_df2(&self) -> f64 {
        self.df2.mean
    }

    pub fn mean_df(&self) -> f64 {
        self.df2.mean.sqrt()
    }
}

/// Settings of a single Monte-Carlo cell.
#[derive(Debug, Clone, Copy)]
pub struct CellSpec<'a> {
    pub pulse: &'a PiecewiseConstantPulse,
    pub model: &'a AutocorrelationModel,
    pub inv_v: f64,
    pub realizations: usize,
    pub steps: usize,
    pub seed: u64,
    /// Distinguishes the random streams of different cells sharing a seed.
    pub cell_id: u32,
    pub track_polarization: bool,
}

#[derive(Default)]
struct ChunkValues {
    df2: Vec<f64>,
    df: Vec<f64>,
    partials: [Vec<f64>; 3],
    polarization: Vec<f64>,
}

fn stream_id(cell_id: u32, chunk: usize) -> u64 {
    ((cell_id as u64) << 32) | chunk as u64
}

/// Runs `M` realizations of one cell. Chunk `c` draws from stream
/// `(cell_id << 32) | c` and results are reduced in chunk order, so the
/// outcome does not depend on the number of threads.
pub fn run_cell(spec: &CellSpec) -> Result<CellEstimate> {
    let pulse = spec.pulse.for_inverse_amplitude(spec.inv_v);
    let grid = Arc::new(pulse.grid(spec.steps)?);
    let drive = PulseDrive::new(&pulse, &grid)?;
    let sampler = NoiseSampler::new(spec.model, grid, spec.seed)?;
    let chunks = spec.realizations.div_ceil(CHUNK);
    let track = spec.track_polarization.then(|| Axis::Y.unit());

    let parts: Vec<ChunkValues> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<ChunkValues> {
            let count = CHUNK.min(spec.realizations - c * CHUNK);
            let mut stream = sampler.stream(stream_id(spec.cell_id, c));
            let block = sampler.sample_block(&mut stream, count);
            let n = sampler.len();
            let mut out = ChunkValues::default();
            for eta in block.as_slice().chunks_exact(n) {
                let r = drive.evolve(eta, track);
                let f = frobenius_from_unitary(&r.u_correcting)?;
                out.df2.push(f.delta_f_squared);
                out.df.push(f.delta_f_squared.sqrt());
                for a in 0..3 {
                    out.partials[a].push(f.partials[a]);
                }
                if let Some(traj) = &r.trajectory {
                    out.polarization.push(final_deviation(traj[traj.len() - 1].1, Axis::Y));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let gather = |f: &dyn Fn(&ChunkValues) -> &Vec<f64>| -> Vec<f64> {
        parts.iter().flat_map(|p| f(p).iter().copied()).collect()
    };
    let stats = |f: &dyn Fn(&ChunkValues) -> &Vec<f64>| SampleStats::from_values(&gather(f));
    Ok(CellEstimate {
        pulse: spec.pulse.name().to_string(),
        inv_v: spec.inv_v,
        df2: stats(&|p| &p.df2),
        df: stats(&|p| &p.df),
        partials: [stats(&|p| &p.partials[0]), stats(&|p| &p.partials[1]), stats(&|p| &p.partials[2])],
        polarization: spec.track_polarization.then(|| stats(&|p| &p.polarization)),
    })
}

/// Weighted least-squares line through `(log₁₀ x, log₁₀ y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub slope_err: f64,
    /// `log₁₀` of the prefactor.
    pub intercept: f64,
    pub intercept_err: f64,
    pub used: Vec<f64>,
    /// `(x, reason)` of points inside the window that were left out.
    pub excluded: Vec<(f64, String)>,
}

/// A point `(x, mean, stderr)` of a positive quantity.
pub type FitPoint = (f64, f64, f64);

/// Fits `log₁₀ y = intercept + slope·log₁₀ x` over `window` with weights
/// `1/σ²`, `σ = stderr/(y ln 10)`. Points with relative error above
/// [`MAX_RELATIVE_ERROR`] or a non-positive mean are excluded. Parameter
/// errors are scaled by the reduced χ², so exact data give zero error.
pub fn fit_loglog(points: &[FitPoint], window: (f64, f64)) -> Result<PowerLawFit> {
    let tol = 1e-12;
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    let mut rows = Vec::new();
    for &(x, y, se) in points {
        if x < window.0 * (1.0 - tol) || x > window.1 * (1.0 + tol) {
            continue;
        }
        if !(y > 0.0) || !y.is_finite() {
            excluded.push((x, "non-positive mean".to_string()));
        } else if !(se / y <= MAX_RELATIVE_ERROR) {
            excluded.push((x, format!("relative error {:.3} above {MAX_RELATIVE_ERROR}", se / y)));
        } else {
            rows.push((x.log10(), y.log10(), se / (y * std::f64::consts::LN_10)));
            used.push(x);
        }
    }
    if rows.len() < 3 {
        return Err(Error::InsufficientPoints { usable: rows.len() });
    }
    // a point without error makes the weighting meaningless: fit unweighted
    let exact = rows.iter().any(|r| r.2 == 0.0);
    for r in &mut rows {
        r.2 = if exact { 1.0 } else { 1.0 / (r.2 * r.2) };
    }
    let sw: f64 = rows.iter().map(|r| r.2).sum();
    let mx = rows.iter().map(|r| r.2 * r.0).sum::<f64>() / sw;
    let my = rows.iter().map(|r| r.2 * r.1).sum::<f64>() / sw;
    let sxx: f64 = rows.iter().map(|r| r.2 * (r.0 - mx).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| r.2 * (r.0 - mx) * (r.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientPoints { usable: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2: f64 = rows.iter().map(|r| r.2 * (r.1 - intercept - slope * r.0).powi(2)).sum();
    let s2 = chi2 / (rows.len() - 2) as f64;
    let slope_err = (s2 / sxx).sqrt();
    let intercept_err = (s2 * (1.0 / sw + mx * mx / sxx)).sqrt();
    Ok(PowerLawFit { slope, slope_err, intercept, intercept_err, used, excluded })
}

/// Exponent of `Δ_F` from points `(1/v, ⟨Δ_F²⟩, stderr)`; the returned slope
/// and intercept refer to `Δ_F = √⟨Δ_F²⟩`.
pub fn fit_exponent(points: &[FitPoint], window: (f64, f64)) -> Result<PowerLawFit> {
    let mut f = fit_loglog(points, window)?;
    f.slope *= 0.5;
    f.slope_err *= 0.5;
    f.intercept *= 0.5;
    f.intercept_err *= 0.5;
    Ok(f)
}

/// Fits of one pulse's sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseFit {
    pub pulse: String,
    /// Exponent of `Δ_F` with the configured estimator.
    pub total: PowerLawFit,
    /// Exponents of `Δ_F^(x,y,z)`; `None` if too few usable points.
    pub partials: [Option<PowerLawFit>; 3],
    /// Exponent of `|⟨σ^y⟩ + 1|`.
    pub polarization: Option<PowerLawFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub config: ScalingExperimentConfig,
    pub cells: Vec<CellEstimate>,
    pub fits: Vec<PulseFit>,
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Sweeps every configured pulse over the `1/v` grid and fits exponents.
pub fn run_scaling(config: &ScalingExperimentConfig, catalog: &PulseCatalog) -> Result<ScalingResult> {
    config.validate()?;
    let pulses = config.pulses.iter().map(|n| catalog.get(n)).collect::<Result<Vec<_>>>()?;
    with_pool(config.workers, || {
        let mut cells = Vec::new();
        let mut fits = Vec::new();
        for (pi, pulse) in pulses.iter().enumerate() {
            let mut row = Vec::new();
            for (xi, &inv_v) in config.inv_v_grid.iter().enumerate() {
                row.push(run_cell(&CellSpec {
                    pulse,
                    model: &config.model,
                    inv_v,
                    realizations: config.realizations,
                    steps: config.steps_per_pulse,
                    seed: config.seed,
                    cell_id: ((pi as u32) << 16) | xi as u32,
                    track_polarization: config.track_polarization,
                })?);
            }
            fits.push(fit_pulse(pulse.name(), &row, config)?);
            cells.extend(row);
        }
        Ok(ScalingResult { config: config.clone(), cells, fits })
    })?
}

fn fit_pulse(name: &str, row: &[CellEstimate], config: &ScalingExperimentConfig) -> Result<PulseFit> {
    let w = config.fit_window;
    let total = match config.estimator {
        Estimator::MeanDf2 => {
            fit_exponent(&row.iter().map(|c| (c.inv_v, c.df2.mean, c.df2.stderr)).collect::<Vec<_>>(), w)?
        }
        Estimator::MeanDf => fit_loglog(&row.iter().map(|c| (c.inv_v, c.df.mean, c.df.stderr)).collect::<Vec<_>>(), w)?,
    };
    let partial = |a: usize| {
        fit_exponent(&row.iter().map(|c| (c.inv_v, c.partials[a].mean, c.partials[a].stderr)).collect::<Vec<_>>(), w)
            .ok()
    };
    let polarization = if config.track_polarization {
        let pts: Vec<FitPoint> =
            row.iter().filter_map(|c| c.polarization.map(|p| (c.inv_v, p.mean, p.stderr))).collect();
        fit_loglog(&pts, w).ok()
    } else {
        None
    };
    Ok(PulseFit { pulse: name.to_string(), total, partials: [partial(0), partial(1), partial(2)], polarization })
}

pub const CSV_HEADER: &str =
    "pulse,inv_v,mean_df2,stderr_df2,mean_df,partial_x,partial_y,partial_z,polarization_dev,realizations";

impl ScalingResult {
    pub fn fit(&self, pulse: &str) -> Option<&PulseFit> {
        self.fits.iter().find(|f| f.pulse.eq_ignore_ascii_case(pulse))
    }

    pub fn cells_of<'a>(&'a self, pulse: &'a str) -> impl Iterator<Item = &'a CellEstimate> + 'a {
        self.cells.iter().filter(move |c| c.pulse.eq_ignore_ascii_case(pulse))
    }

    /// CSV rows of one pulse. The partial columns are `⟨(Δ_F^(α))²⟩`; the
    /// polarisation column equals `⟨(Δ_F^(y))²⟩` when the state was not
    /// tracked, which is the same quantity for an initial `+y` state.
    pub fn to_csv(&self, pulse: &str) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for c in self.cells_of(pulse) {
            let pol = c.polarization.map_or(c.partials[1].mean, |p| p.mean);
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                c.pulse,
                c.inv_v,
                c.df2.mean,
                c.df2.stderr,
                c.mean_df(),
                c.partials[0].mean,
                c.partials[1].mean,
                c.partials[2].mean,
                pol,
                c.df2.count
            );
        }
        s
    }

    /// Whitespace-separated twin of [`Self::to_csv`] for plotting tools.
    pub fn to_dat(&self, pulse: &str) -> String {
        csv_to_dat(&self.to_csv(pulse))
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            model: &'a AutocorrelationModel,
            realizations: usize,
            steps_per_pulse: usize,
            seed: u64,
            fit_window: (f64, f64),
            estimator: Estimator,
            fits: &'a [PulseFit],
        }
        let c = &self.config;
        Ok(serde_json::to_string_pretty(&Summary {
            model: &c.model,
            realizations: c.realizations,
            steps_per_pulse: c.steps_per_pulse,
            seed: c.seed,
            fit_window: c.fit_window,
            estimator: c.estimator,
            fits: &self.fits,
        })?)
    }

    /// Writes `<pulse>.csv`, `<pulse>.dat` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for f in &self.fits {
            let name = f.pulse.to_ascii_lowercase();
            std::fs::write(dir.join(format!("{name}.csv")), self.to_csv(&f.pulse))?;
            std::fs::write(dir.join(format!("{name}.dat")), self.to_dat(&f.pulse))?;
        }
        std::fs::write(dir.join("summary.json"), self.summary_json()?)?;
        Ok(())
    }
}

/// Header line prefixed with `#`, commas replaced by spaces.
pub fn csv_to_dat(csv: &str) -> String {
    let mut out = String::new();
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            out.push_str("# ");
        }
        out.push_str(&line.replace(',', " "));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefactorRow {
    pub inv_v: f64,
    pub measured: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub ratio: f64,
    pub ratio_err: f64,
}

impl PrefactorRow {
    /// `|measured − predicted|` in units of the Monte-Carlo error.
    pub fn deviation_sigmas(&self) -> f64 {
        (self.measured - self.predicted).abs() / self.stderr
    }
}

/// Settings shared by the single-pulse checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub realizations: usize,
    pub steps_per_pulse: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { realizations: 20_000, steps_per_pulse: 512, seed: 1, workers: 0 }
    }
}

/// Compares the measured `⟨Δ_F²⟩` of CORPSE or SCORPSE under exponential
/// noise with the closed-form leading term.
pub fn run_prefactor_check(
    pulse: &PiecewiseConstantPulse,
    model: &AutocorrelationModel,
    inv_v: &[f64],
    config: &CheckConfig,
) -> Result<Vec<PrefactorRow>> {
    if model.kind != CorrelationKind::Exponential {
        return Err(Error::InvalidConfig("the prefactor check needs exponential noise".into()));
    }
    if closed_form_df2(pulse.name(), model, 1.0).is_none() {
        return Err(Error::InvalidConfig(format!("no closed form for pulse {}", pulse.name())));
    }
    with_pool(config.workers, || {
        inv_v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cell = run_cell(&CellSpec {
                    pulse,
                    model,
                    inv_v: x,
                    realizations: config.realizations,
                    steps: config.steps_per_pulse,
                    seed: config.seed,
                    cell_id: i as u32,
                    track_polarization: false,
                })?;
                let predicted = closed_form_df2(pulse.name(), model, x).expect("checked above");
                Ok(PrefactorRow {
                    inv_v: x,
                    measured: cell.df2.mean,
                    stderr: cell.df2.stderr,
                    predicted,
                    ratio: cell.df2.mean / predicted,
                    ratio_err: cell.df2.stderr / predicted,
                })
            })
            .collect()
    })?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub steps: usize,
    pub mean_df2: f64,
    pub stderr_df2: f64,
    /// Relative change from the previous (coarser) row.
    pub drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Drift between the two finest grids below [`CONVERGENCE_TOLERANCE`].
    pub passed: bool,
}

pub const CONVERGENCE_TOLERANCE: f64 = 0.005;

/// Repeats one cell on several step counts. All grids see the same noise
/// paths: one sampler covers the union of their midpoints, so differences
/// reflect the discretisation rather than sampling noise.
pub fn run_convergence_check(
    pulse: &PiecewiseConstantPulse,
    model: &AutocorrelationModel,
    inv_v: f64,
    step_counts: &[usize],
    config: &CheckConfig,
) -> Result<ConvergenceReport> {
    if step_counts.len() < 2 {
        return Err(Error::InvalidConfig("need at least two step counts".into()));
    }
    let p = pulse.for_inverse_amplitude(inv_v);
    let grids = step_counts.iter().map(|&n| p.grid(n)).collect::<Result<Vec<_>>>()?;
    let drives = grids.iter().map(|g| PulseDrive::new(&p, g)).collect::<Result<Vec<_>>>()?;
    let mut times = Vec::new();
    let mut offsets = vec![0];
    for g in &grids {
        times.extend_from_slice(g.midpoints());
        offsets.push(times.len());
    }
    let sampler = NoiseSampler::at_times(model, times, config.seed, DEFAULT_EIGEN_CLIP)?;
    let m = config.realizations;
    let chunks = m.div_ceil(CHUNK);

    let per_chunk: Vec<Vec<Vec<f64>>> = with_pool(config.workers, || {
        (0..chunks)
            .into_par_iter()
            .map(|c| -> Result<Vec<Vec<f64>>> {
                let count = CHUNK.min(m - c * CHUNK);
                let mut stream: NoiseStream = sampler.stream(c as u64);
                let block = sampler.sample_block(&mut stream, count);
                let mut out = vec![Vec::with_capacity(count); grids.len()];
                for eta in block.as_slice().chunks_exact(sampler.len()) {
                    for (k, d) in drives.iter().enumerate() {
                        let u = d.total_unitary(&eta[offsets[k]..offsets[k + 1]]);
                        let uc = crate::propagator::ideal_pulse().adjoint() * u;
                        out[k].push(frobenius_from_unitary(&uc)?.delta_f_squared);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()
    })??;

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for (k, &steps) in step_counts.iter().enumerate() {
        let values: Vec<f64> = per_chunk.iter().flat_map(|c| c[k].iter().copied()).collect();
        let s = SampleStats::from_values(&values);
        let drift = rows.last().map(|prev| (s.mean - prev.mean_df2).abs() / prev.mean_df2.abs());
        rows.push(ConvergenceRow { steps, mean_df2: s.mean, stderr_df2: s.stderr, drift });
    }
    let last = rows.last().and_then(|r| r.drift).unwrap_or(f64::INFINITY);
    Ok(ConvergenceReport { passed: last < CONVERGENCE_TOLERANCE, rows })
}

/// Noise-free `Δ_F` of a pulse: the accuracy limit of its realisation.
pub fn noiseless_delta_f(pulse: &PiecewiseConstantPulse, steps: usize) -> Result<f64> {
    let grid = pulse.grid(steps)?;
    let drive = PulseDrive::new(pulse, &grid)?;
    let r = drive.evolve(&vec![0.0; grid.steps()], None);
    Ok(frobenius_from_unitary(&r.u_correcting)?.delta_f())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauReport {
    pub pulse: String,
    pub decimals: usize,
    /// `√⟨Δ_F²⟩` at the smallest `1/v`.
    pub plateau: f64,
    /// `Δ_F` of the truncated pulse without noise.
    pub noiseless: f64,
    pub cells: Vec<CellEstimate>,
}

/// Sweeps a pulse whose catalog entry is cut to `decimals` decimal places.
pub fn run_plateau(
    catalog: &PulseCatalog,
    pulse: &str,
    decimals: usize,
    model: &AutocorrelationModel,
    inv_v: &[f64],
    config: &CheckConfig,
) -> Result<PlateauReport> {
    let truncated = catalog.truncated(decimals)?;
    let p = truncated.get(pulse)?;
    let cells = with_pool(config.workers, || {
        inv_v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                run_cell(&CellSpec {
                    pulse: p,
                    model,
                    inv_v: x,
                    realizations: config.realizations,
                    steps: config.steps_per_pulse,
                    seed: config.seed,
                    cell_id: i as u32,
                    track_polarization: false,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let plateau = cells.iter().min_by(|a, b| a.inv_v.total_cmp(&b.inv_v)).map_or(f64::NAN, |c| c.mean_df());
    Ok(PlateauReport {
        pulse: p.name().to_string(),
        decimals,
        plateau,
        noiseless: noiseless_delta_f(p, config.steps_per_pulse)?,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn power_points(k: f64, c: f64, noise: impl Fn(usize) -> f64) -> Vec<FitPoint> {
        log_grid(1e-3, 1e-1, 8)
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                let y = c * x.powf(k) * noise(i);
                (x, y * y, 0.01 * y * y)
            })
            .collect()
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<FitPoint> = log_grid(1e-3, 1e-1, 8).into_iter().map(|x| (x, 4.0 * x.powi(4), 0.0)).collect();
        let f = fit_exponent(&pts, (1e-3, 1e-1)).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.slope_err < 1e-12);
        assert!((f.intercept - 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn noisy_three_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let jitter: Vec<f64> = (0..8).map(|_| 1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0) * 1.7).collect();
        let f = fit_exponent(&power_points(1.5, 0.3, |i| jitter[i]), (1e-3, 1e-1)).unwrap();
        assert!((f.slope - 1.5).abs() < 0.03, "{f:?}");
    }

    #[test]
    fn noisy_point_is_excluded() {
        let clean = power_points(2.0, 1.0, |i| 1.0 + 0.003 * ((i * 7 % 5) as f64 - 2.0));
        let reference = fit_exponent(&clean, (1e-3, 1e-1)).unwrap();
        let mut dirty = clean.clone();
        dirty[3].1 *= 1.8;
        dirty[3].2 = 0.5 * dirty[3].1;
        let f = fit_exponent(&dirty, (1e-3, 1e-1)).unwrap();
        assert_eq!(f.excluded.len(), 1);
        assert!((f.slope - reference.slope).abs() < 5e-4);
    }

    #[test]
    fn too_few_points() {
        let pts = vec![(1e-3, 1.0, 0.0), (1e-2, 2.0, 0.0)];
        assert!(matches!(fit_loglog(&pts, (1e-3, 1e-2)), Err(Error::InsufficientPoints { usable: 2 })));
    }

    #[test]
    fn window_must_fit_grid() {
        let model = AutocorrelationModel::gaussian(1.0, 0.1).unwrap();
        let mut cfg = ScalingExperimentConfig::desk(model, &["RECT"]);
        assert!(cfg.validate().is_ok());
        cfg.fit_window = (1e-4, 1e-1);
        assert!(cfg.validate().is_err());
        cfg.fit_window = (1e-3, 1e-1);
        cfg.inv_v_grid.swap(0, 1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cell_is_independent_of_thread_count() {
        let catalog = PulseCatalog::builtin();
        let model = AutocorrelationModel::exponential(1.0, 0.1).unwrap();
        let spec = CellSpec {
            pulse: catalog.get("SCORPSE").unwrap(),
            model: &model,
            inv_v: 0.05,
            realizations: 600,
            steps: 64,
            seed: 9,
            cell_id: 3,
            track_polarization: true,
        };
        let one = with_pool(1, || run_cell(&spec)).unwrap().unwrap();
        let three = with_pool(3, || run_cell(&spec)).unwrap().unwrap();
        assert_eq!(one, three);
        // tracked deviation agrees with the y partial
        let p = one.polarization.unwrap();
        assert!((p.mean / one.partials[1].mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn constant_noise_is_grid_independent() {
        let catalog = PulseCatalog::builtin();
        let model = AutocorrelationModel::gaussian(1.0, 0.0).unwrap();
        let cfg = CheckConfig { realizations: 300, steps_per_pulse: 0, seed: 4, workers: 1 };
        let r = run_convergence_check(catalog.get("SCORPSE").unwrap(), &model, 0.1, &[16, 32, 64], &cfg).unwrap();
        for row in &r.rows[1..] {
            assert!(row.drift.unwrap() < 1e-10, "{r:?}");
        }
        assert!(r.passed);
    }

    #[test]
    fn csv_shape() {
        let catalog = PulseCatalog::builtin();
        let model = AutocorrelationModel::gaussian(1.0, 0.1).unwrap();
        let mut cfg = ScalingExperimentConfig::desk(model, &["RECT"]);
        cfg.inv_v_grid = log_grid(1e-2, 1e-1, 3);
        cfg.fit_window = (1e-2, 1e-1);
        cfg.realizations = 2048;
        cfg.steps_per_pulse = 16;
        cfg.workers = 1;
        let r = run_scaling(&cfg, &catalog).unwrap();
        let csv = r.to_csv("RECT");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        for l in &lines[1..] {
            let fields: Vec<&str> = l.split(',').collect();
            assert_eq!(fields.len(), 10);
            assert!(fields[1..].iter().all(|f| f.parse::<f64>().unwrap().is_finite()));
        }
        assert!(r.to_dat("RECT").starts_with("# pulse inv_v"));
    }
}
