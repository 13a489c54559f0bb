//! Monte Carlo experiment driver.
//!
//! Every path owns an [`RngStream`] keyed by `(base_seed, path_index)`;
//! studies that compare discretisations draw the path once at the finest step
//! and sum increments for coarser steps, so all runs of a path see the same
//! Brownian motion. Aggregates are reduced in path order, which makes every
//! study output independent of the thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forcing::{coarsen_path, sample_increment, step_ratio, NoiseIncrement, RngStream};
use crate::reference::{continuous_energy, implicit_euler_step, standard_sav_step, ImplicitSolverSpec};
use crate::spectral::{Grid, GridRef, GridSpec, NodalField, SpectralField};
use crate::stepper::{modified_energy, noise_trace_parts, step, SchemeParams, SchemeState};

pub mod level_set;

pub use level_set::{extract_zero_level_set, LevelSet, Polyline};

/// Diagnostics gate: SAV identity (relative).
pub const MAX_SAV_RESIDUAL: f64 = 1e-8;
/// Diagnostics gate: energy identity (relative).
pub const MAX_ENERGY_RESIDUAL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ssav,
    StandardSav,
    Implicit,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Ssav => "ssav",
            Scheme::StandardSav => "standard_sav",
            Scheme::Implicit => "implicit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ssav" => Some(Scheme::Ssav),
            "standard_sav" => Some(Scheme::StandardSav),
            "implicit" => Some(Scheme::Implicit),
            _ => None,
        }
    }
}

/// Initial data catalog.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum InitialCondition {
    Zero,
    /// `0.6 sin(πx₁)sin(πx₂) + 0.4 sin(2πx₁)sin(3πx₂)`
    TwoMode,
    /// `tanh((R - radius)/(√2 ε))`, `R = |x - (½, ½)|`, sampled and projected.
    TanhDisk { epsilon: f64, radius: f64 },
    /// Explicit coefficients against the orthonormal modes.
    Modes { modes: Vec<(Vec<usize>, f64)> },
}

impl InitialCondition {
    pub fn project(&self, grid: &GridRef) -> Result<SpectralField> {
        match self {
            InitialCondition::Zero => Ok(SpectralField::zeros(grid)),
            InitialCondition::TwoMode => {
                if grid.dim() != 2 || grid.modes() < 3 {
                    return Err(Error::Config("two_mode needs d = 2 and M >= 3".into()));
                }
                // sin·sin = e/2 for the orthonormal modes
                SpectralField::mode(grid, &[1, 1], 0.3)?.add(&SpectralField::mode(grid, &[2, 3], 0.2)?)
            }
            InitialCondition::TanhDisk { epsilon, radius } => {
                if grid.dim() != 2 {
                    return Err(Error::Config("tanh_disk needs d = 2".into()));
                }
                if !(*epsilon > 0.0) {
                    return Err(Error::Config("tanh_disk epsilon must be positive".into()));
                }
                let (eps, rad) = (*epsilon, *radius);
                let n = NodalField::from_fn(grid, |x| {
                    let r = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
                    ((r - rad) / (std::f64::consts::SQRT_2 * eps)).tanh()
                })?;
                Ok(n.to_spectral())
            }
            InitialCondition::Modes { modes } => {
                let mut f = SpectralField::zeros(grid);
                for (j, c) in modes {
                    if j.len() != grid.dim() || j.iter().any(|&k| k == 0) {
                        return Err(Error::Config(format!("mode {j:?} is invalid for d = {}", grid.dim())));
                    }
                    // modes above M are truncated like any other projection
                    if j.iter().all(|&k| k <= grid.modes()) {
                        f = f.add(&SpectralField::mode(grid, j, *c)?)?;
                    }
                }
                Ok(f)
            }
        }
    }
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: SchemeParams,
    pub final_time: f64,
    pub paths: usize,
    pub base_seed: u64,
    pub scheme: Scheme,
    pub initial: InitialCondition,
    /// Times at which states are kept.
    pub output_times: Vec<f64>,
    pub solver: ImplicitSolverSpec,
}

impl RunConfig {
    /// `N = T/τ`.
    pub fn num_steps(&self) -> Result<usize> {
        steps_for(self.final_time, self.params.tau())
    }

    pub fn validate(&self) -> Result<()> {
        self.num_steps()?;
        if self.paths == 0 {
            return Err(Error::Config("at least one path is required".into()));
        }
        for &t in &self.output_times {
            output_step(t, self.params.tau(), self.final_time)?;
        }
        Ok(())
    }
}

fn steps_for(final_time: f64, tau: f64) -> Result<usize> {
    if !(final_time > 0.0) {
        return Err(Error::Config(format!("final time must be positive, got {final_time}")));
    }
    step_ratio(final_time, tau)
        .map_err(|_| Error::Config(format!("T = {final_time} is not an integer multiple of tau = {tau}")))
}

fn output_step(t: f64, tau: f64, final_time: f64) -> Result<usize> {
    if t == 0.0 {
        return Ok(0);
    }
    if !(t > 0.0 && t <= final_time * (1.0 + 1e-12)) {
        return Err(Error::Config(format!("output time {t} is outside [0, {final_time}]")));
    }
    step_ratio(t, tau).map_err(|_| Error::Config(format!("output time {t} is not on the step grid")))
}

/// Per-step terms of the averaged energy law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LawTerms {
    /// `½‖(I-S²(τ))^{½}(κ(-A))^{-½}μ̃ⁿ‖²`
    pub dissipation: f64,
    /// `½τ Σ_k ⟨(κ(-A) + F''(Xⁿ)) g(Xⁿ)Q^{½}e_k, g(Xⁿ)Q^{½}e_k⟩`
    pub trace: f64,
    /// `⟨κ(-A)Xⁿ + rⁿF'(Xⁿ)/√E_p, g(Xⁿ)δWⁿ⟩`
    pub martingale: f64,
    /// `½‖(κ(-A))^{½}g(Xⁿ)δWⁿ‖² - ½τ Σ_k ‖(κ(-A))^{½}g(Xⁿ)Q^{½}e_k‖²`
    pub noise_fluctuation: f64,
}

/// What a path run keeps.
#[derive(Debug, Clone, Default)]
pub struct RecordOptions {
    /// Step indices whose states are stored.
    pub snapshot_steps: Vec<usize>,
    /// Energy is stored every `energy_stride` steps (0 disables).
    pub energy_stride: usize,
    pub energy_law: bool,
}

/// Outcome of one path.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub path_index: usize,
    pub scheme: Scheme,
    pub tau: f64,
    pub snapshots: Vec<(f64, SpectralField)>,
    /// `(time, energy)`: `E_mod` for SAV schemes, `E + Θ` for the implicit scheme.
    pub energies: Vec<(f64, f64)>,
    pub max_sav_residual: f64,
    pub max_energy_residual: f64,
    pub max_solve_residual: f64,
    pub law: Vec<LawTerms>,
    pub final_state: SpectralField,
    pub final_r: Option<f64>,
}

/// Draws `steps` increments of length `tau` for one path.
pub fn path_increments(params: &SchemeParams, seed: u64, path: usize, steps: usize, tau: f64) -> Result<Vec<NoiseIncrement>> {
    let mut rng = RngStream::new(seed, path as u64);
    (0..steps).map(|_| sample_increment(&mut rng, params.noise(), tau)).collect()
}

/// Runs one scheme over a prescribed increment path.
pub fn run_with_increments(
    params: &SchemeParams,
    scheme: Scheme,
    x0: SpectralField,
    increments: &[NoiseIncrement],
    solver: &ImplicitSolverSpec,
    record: &RecordOptions,
    path_index: usize,
) -> Result<PathRecord> {
    let tau = params.tau();
    let wrap = |e: Error| Error::Path { path: path_index, source: Box::new(e) };
    let mut out = PathRecord {
        path_index,
        scheme,
        tau,
        snapshots: Vec::new(),
        energies: Vec::new(),
        max_sav_residual: 0.0,
        max_energy_residual: 0.0,
        max_solve_residual: 0.0,
        law: Vec::new(),
        final_state: x0.clone(),
        final_r: None,
    };
    let keep = |n: usize| record.snapshot_steps.contains(&n);
    let log_energy = |n: usize| record.energy_stride > 0 && n % record.energy_stride == 0;

    match scheme {
        Scheme::Ssav | Scheme::StandardSav => {
            let mut state = SchemeState::initial(x0, params).map_err(wrap)?;
            if keep(0) {
                out.snapshots.push((0.0, state.x.clone()));
            }
            if log_energy(0) {
                out.energies.push((0.0, modified_energy(&state, params)));
            }
            for (n, dw) in increments.iter().enumerate() {
                let (stiff, pot) = if record.energy_law {
                    noise_trace_parts(&state.x, params).map_err(wrap)?
                } else {
                    (0.0, 0.0)
                };
                let (next, diag) = if scheme == Scheme::Ssav {
                    step(&state, dw, params)
                } else {
                    standard_sav_step(&state, dw, params)
                }
                .map_err(wrap)?;
                out.max_sav_residual = out.max_sav_residual.max(diag.relative_sav_residual());
                out.max_energy_residual = out.max_energy_residual.max(diag.relative_energy_residual());
                out.max_solve_residual = out.max_solve_residual.max(diag.solve_residual);
                if record.energy_law {
                    out.law.push(LawTerms {
                        dissipation: diag.balance.dissipation,
                        trace: 0.5 * tau * (stiff + pot),
                        martingale: diag.martingale,
                        noise_fluctuation: diag.balance.noise_energy - 0.5 * tau * stiff,
                    });
                }
                state = next;
                let k = n + 1;
                if keep(k) {
                    out.snapshots.push((k as f64 * tau, state.x.clone()));
                }
                if log_energy(k) {
                    out.energies.push((k as f64 * tau, modified_energy(&state, params)));
                }
            }
            out.final_r = Some(state.r);
            out.final_state = state.x;
        }
        Scheme::Implicit => {
            let theta = params.potential().theta();
            let mut x = x0;
            if keep(0) {
                out.snapshots.push((0.0, x.clone()));
            }
            if log_energy(0) {
                out.energies.push((0.0, continuous_energy(&x, params) + theta));
            }
            for (n, dw) in increments.iter().enumerate() {
                let res = implicit_euler_step(&x, dw, params, solver).map_err(|e| match e {
                    Error::BlowUp { what, .. } => wrap(Error::BlowUp { step: n, what }),
                    e => wrap(e),
                })?;
                out.max_solve_residual = out.max_solve_residual.max(res.fixed_point_residual);
                x = res.x;
                let k = n + 1;
                if keep(k) {
                    out.snapshots.push((k as f64 * tau, x.clone()));
                }
                if log_energy(k) {
                    out.energies.push((k as f64 * tau, continuous_energy(&x, params) + theta));
                }
            }
            out.final_state = x;
        }
    }
    Ok(out)
}

fn gate(rec: &PathRecord) -> Result<()> {
    if rec.scheme == Scheme::Implicit {
        return Ok(());
    }
    if !(rec.max_sav_residual <= MAX_SAV_RESIDUAL) {
        return Err(Error::Gate {
            path: rec.path_index,
            what: format!("SAV identity residual {:e} exceeds {MAX_SAV_RESIDUAL:e}", rec.max_sav_residual),
        });
    }
    if !(rec.max_energy_residual <= MAX_ENERGY_RESIDUAL) {
        return Err(Error::Gate {
            path: rec.path_index,
            what: format!("energy identity residual {:e} exceeds {MAX_ENERGY_RESIDUAL:e}", rec.max_energy_residual),
        });
    }
    Ok(())
}

/// Runs one path of `config` with its own increments at the configured step.
pub fn simulate_path(config: &RunConfig, path_index: usize) -> Result<PathRecord> {
    simulate_path_with(config, path_index, &RecordOptions {
        snapshot_steps: snapshot_steps(config)?,
        energy_stride: 1,
        energy_law: false,
    })
}

pub fn simulate_path_with(config: &RunConfig, path_index: usize, record: &RecordOptions) -> Result<PathRecord> {
    config.validate()?;
    let steps = config.num_steps()?;
    let tau = config.params.tau();
    let incs = path_increments(&config.params, config.base_seed, path_index, steps, tau)?;
    let x0 = config.initial.project(config.params.grid())?;
    let rec = run_with_increments(&config.params, config.scheme, x0, &incs, &config.solver, record, path_index)?;
    gate(&rec)?;
    Ok(rec)
}

fn snapshot_steps(config: &RunConfig) -> Result<Vec<usize>> {
    config
        .output_times
        .iter()
        .map(|&t| output_step(t, config.params.tau(), config.final_time))
        .collect()
}

/// Runs every path of `config`, in path order.
pub fn simulate_all(config: &RunConfig, record: &RecordOptions) -> Result<Vec<PathRecord>> {
    config.validate()?;
    (0..config.paths)
        .into_par_iter()
        .map(|p| simulate_path_with(config, p, record))
        .collect()
}

/// Strong errors at the final time for a grid of step sizes or mode counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorTable {
    /// `tau` values or mode counts.
    pub params: Vec<f64>,
    /// `sqrt(E‖X - X_ref‖²)`
    pub error_rms: Vec<f64>,
    /// `E‖X - X_ref‖²`
    pub error_ms: Vec<f64>,
    /// Orders from the RMS column between consecutive rows.
    pub orders: Vec<Option<f64>>,
    /// Least-squares slope of log error against log parameter.
    pub slope: Option<f64>,
}

impl ErrorTable {
    fn from_squares(params: Vec<f64>, squares: &[Vec<f64>], log_params: &[f64]) -> Self {
        let rows = params.len();
        let p = squares.len() as f64;
        let mut error_ms = vec![0.0; rows];
        for path in squares {
            for (acc, v) in error_ms.iter_mut().zip(path) {
                *acc += v;
            }
        }
        for v in &mut error_ms {
            *v /= p;
        }
        let error_rms: Vec<f64> = error_ms.iter().map(|v| v.sqrt()).collect();
        let est = estimate_order_with(&error_rms, log_params);
        let (orders, slope) = match est {
            Ok(e) => (
                std::iter::once(None).chain(e.orders.into_iter()).collect(),
                e.slope,
            ),
            Err(_) => (vec![None; rows], None),
        };
        Self { params, error_rms, error_ms, orders, slope }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,error_rms,error_ms,order\n");
        for i in 0..self.params.len() {
            let order = self.orders[i].map(|o| format!("{o:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{:.10e},{:.10e},{}\n", self.params[i], self.error_rms[i], self.error_ms[i], order));
        }
        s
    }
}

/// Output of [`estimate_order`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderEstimate {
    /// `log(e_i/e_{i+1}) / log(p_i/p_{i+1})`; `None` where a row has zero error.
    pub orders: Vec<Option<f64>>,
    /// Least-squares slope over the rows with positive error.
    pub slope: Option<f64>,
    /// Set when zero-error rows were excluded.
    pub excluded_zero_rows: bool,
}

/// Convergence orders of `errors` against the discretisation parameters `params`.
pub fn estimate_order(errors: &[f64], params: &[f64]) -> Result<OrderEstimate> {
    if params.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Config("order estimation needs positive parameters".into()));
    }
    let logs: Vec<f64> = params.iter().map(|p| p.ln()).collect();
    estimate_order_with(errors, &logs)
}

fn estimate_order_with(errors: &[f64], log_params: &[f64]) -> Result<OrderEstimate> {
    if errors.len() != log_params.len() || errors.len() < 2 {
        return Err(Error::Config("order estimation needs at least two matching rows".into()));
    }
    if errors.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::Config("errors must be nonnegative".into()));
    }
    let orders = errors
        .windows(2)
        .zip(log_params.windows(2))
        .map(|(e, p)| {
            if e[0] > 0.0 && e[1] > 0.0 {
                Some((e[0] / e[1]).ln() / (p[0] - p[1]))
            } else {
                None
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .zip(log_params)
        .filter(|(e, _)| **e > 0.0)
        .map(|(e, p)| (*p, e.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 { Some(sxy / sxx) } else { None }
    } else {
        None
    };
    Ok(OrderEstimate { orders, slope, excluded_zero_rows: pts.len() < errors.len() })
}

/// Temporal strong errors against a reference run at `tau_ref` on the same paths.
pub fn strong_error_study(config: &RunConfig, tau_grid: &[f64], tau_ref: f64) -> Result<ErrorTable> {
    config.validate()?;
    if tau_grid.is_empty() {
        return Err(Error::Config("tau grid is empty".into()));
    }
    let ratios: Vec<usize> = tau_grid.iter().map(|&t| step_ratio(t, tau_ref)).collect::<Result<_>>()?;
    let n_ref = steps_for(config.final_time, tau_ref)?;
    for &t in tau_grid {
        steps_for(config.final_time, t)?;
    }
    let ref_params = config.params.with_tau(tau_ref)?;
    let coarse_params: Vec<SchemeParams> = tau_grid.iter().map(|&t| config.params.with_tau(t)).collect::<Result<_>>()?;
    let x0 = config.initial.project(config.params.grid())?;
    let record = RecordOptions::default();

    let squares: Vec<Vec<f64>> = (0..config.paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let fine = path_increments(&config.params, config.base_seed, p, n_ref, tau_ref)?;
            let reference = run_with_increments(&ref_params, config.scheme, x0.clone(), &fine, &config.solver, &record, p)?;
            gate(&reference)?;
            ratios
                .iter()
                .zip(&coarse_params)
                .map(|(&k, prm)| {
                    let coarse = coarsen_path(&fine, k)?;
                    let rec = run_with_increments(prm, config.scheme, x0.clone(), &coarse, &config.solver, &record, p)?;
                    gate(&rec)?;
                    Ok(rec.final_state.sub(&reference.final_state)?.l2_norm().powi(2))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let logs: Vec<f64> = tau_grid.iter().map(|t| t.ln()).collect();
    Ok(ErrorTable::from_squares(tau_grid.to_vec(), &squares, &logs))
}

/// Spatial strong errors against a reference run with `m_ref` modes on the same paths.
///
/// Every run keeps the configured ratio `N_q / M`.
pub fn spatial_error_study(config: &RunConfig, m_grid: &[usize], m_ref: usize) -> Result<ErrorTable> {
    config.validate()?;
    if m_grid.is_empty() {
        return Err(Error::Config("mode grid is empty".into()));
    }
    let base = config.params.grid().spec();
    if m_grid.iter().any(|&m| m > m_ref) {
        return Err(Error::Config(format!("every M must not exceed M_ref = {m_ref}")));
    }
    let j = config.params.noise().modes();
    let m_min = *m_grid.iter().min().expect("nonempty");
    if j > m_min {
        return Err(Error::Config(format!("noise modes J = {j} exceed the smallest M = {m_min}")));
    }
    let ratio = base.nodes() as f64 / base.modes() as f64;
    let make = |m: usize| -> Result<SchemeParams> {
        let nodes = (ratio * m as f64).round() as usize;
        config.params.with_grid(Grid::new(GridSpec::new(base.dim(), m, nodes)?))
    };
    let ref_params = make(m_ref)?;
    let params: Vec<SchemeParams> = m_grid.iter().map(|&m| make(m)).collect::<Result<_>>()?;
    let steps = config.num_steps()?;
    let tau = config.params.tau();
    let record = RecordOptions::default();
    let ref_x0 = config.initial.project(ref_params.grid())?;
    let x0s: Vec<SpectralField> = params.iter().map(|p| config.initial.project(p.grid())).collect::<Result<_>>()?;

    let squares: Vec<Vec<f64>> = (0..config.paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let incs = path_increments(&config.params, config.base_seed, p, steps, tau)?;
            let reference = run_with_increments(&ref_params, config.scheme, ref_x0.clone(), &incs, &config.solver, &record, p)?;
            gate(&reference)?;
            params
                .iter()
                .zip(&x0s)
                .map(|(prm, x0)| {
                    let rec = run_with_increments(prm, config.scheme, x0.clone(), &incs, &config.solver, &record, p)?;
                    gate(&rec)?;
                    let lifted = rec.final_state.resample(ref_params.grid())?;
                    Ok(lifted.sub(&reference.final_state)?.l2_norm().powi(2))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let logs: Vec<f64> = m_grid.iter().map(|&m| -(m as f64).ln()).collect();
    Ok(ErrorTable::from_squares(m_grid.iter().map(|&m| m as f64).collect(), &squares, &logs))
}

/// Mean energy trajectory of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergySeries {
    pub scheme: Scheme,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Averaged energies of several schemes on common noise paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub series: Vec<EnergySeries>,
}

impl EnergyTrace {
    pub fn get(&self, scheme: Scheme) -> Option<&EnergySeries> {
        self.series.iter().find(|s| s.scheme == scheme)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,scheme,mean_energy,stderr\n");
        for series in &self.series {
            for (i, t) in self.times.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{:.12e},{:.6e}\n",
                    fmt_time(*t),
                    series.scheme.name(),
                    series.mean[i],
                    series.stderr[i]
                ));
            }
        }
        s
    }
}

pub(crate) fn fmt_time(t: f64) -> String {
    let r = (t * 1e12).round() / 1e12;
    format!("{r}")
}

/// Mean and standard error over paths for each column.
pub(crate) fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let p = rows.len() as f64;
    let len = rows[0].len();
    let mut mean = vec![0.0; len];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= p);
    let mut var = vec![0.0; len];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let stderr = var
        .iter()
        .map(|s| if rows.len() > 1 { (s / (p - 1.0) / p).sqrt() } else { 0.0 })
        .collect();
    (mean, stderr)
}

/// Averaged energies of `schemes`. SAV schemes run at the configured step;
/// the implicit scheme runs at `τ / implicit_refinement` on the same paths and
/// is sampled at the coarse times.
pub fn averaged_energy_study(config: &RunConfig, schemes: &[Scheme], implicit_refinement: usize) -> Result<EnergyTrace> {
    config.validate()?;
    if schemes.is_empty() {
        return Err(Error::Config("no schemes requested".into()));
    }
    if implicit_refinement == 0 {
        return Err(Error::Config("implicit refinement must be positive".into()));
    }
    let steps = config.num_steps()?;
    let tau = config.params.tau();
    let k = if schemes.contains(&Scheme::Implicit) { implicit_refinement } else { 1 };
    let fine_tau = tau / k as f64;
    let fine_params = config.params.with_tau(fine_tau)?;
    let x0 = config.initial.project(config.params.grid())?;

    let per_path: Vec<Vec<Vec<f64>>> = (0..config.paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<Vec<f64>>> {
            let fine = path_increments(&config.params, config.base_seed, p, steps * k, fine_tau)?;
            let coarse = coarsen_path(&fine, k)?;
            schemes
                .iter()
                .map(|&s| {
                    let rec = if s == Scheme::Implicit {
                        let opts = RecordOptions { energy_stride: implicit_refinement, ..Default::default() };
                        run_with_increments(&fine_params, s, x0.clone(), &fine, &config.solver, &opts, p)?
                    } else {
                        let opts = RecordOptions { energy_stride: 1, ..Default::default() };
                        run_with_increments(&config.params, s, x0.clone(), &coarse, &config.solver, &opts, p)?
                    };
                    gate(&rec)?;
                    Ok(rec.energies.iter().map(|e| e.1).collect())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let times: Vec<f64> = (0..=steps).map(|n| n as f64 * tau).collect();
    let series = schemes
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let rows: Vec<Vec<f64>> = per_path.iter().map(|p| p[i].clone()).collect();
            let (mean, stderr) = column_stats(&rows);
            EnergySeries { scheme: s, mean, stderr }
        })
        .collect();
    Ok(EnergyTrace { times, series })
}

/// Path-averaged partial sums of the discrete energy law
/// `E[E_mod^m] = E_mod^0 - Σ E[dissipation] + Σ E[trace] + R_m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyLawDecomposition {
    pub times: Vec<f64>,
    pub e_mod0: f64,
    pub mean_e_mod: Vec<f64>,
    pub dissipation: Vec<f64>,
    pub trace: Vec<f64>,
    /// `E[E_mod^m] - E_mod^0 + Σ dissipation - Σ trace`.
    pub remainder: Vec<f64>,
    /// Same expectation estimated with the conditionally mean-zero noise
    /// terms (martingale increments and noise-energy fluctuations) removed
    /// path by path, which leaves a much smaller variance.
    pub remainder_cv: Vec<f64>,
    pub remainder_stderr: Vec<f64>,
    pub remainder_cv_stderr: Vec<f64>,
}

impl EnergyLawDecomposition {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mean_e_mod,dissipation,trace,remainder,remainder_stderr,remainder_cv,remainder_cv_stderr\n");
        for i in 0..self.times.len() {
            s.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.6e},{:.3e},{:.6e},{:.3e}\n",
                fmt_time(self.times[i]),
                self.mean_e_mod[i],
                self.dissipation[i],
                self.trace[i],
                self.remainder[i],
                self.remainder_stderr[i],
                self.remainder_cv[i],
                self.remainder_cv_stderr[i]
            ));
        }
        s
    }
}

/// Aggregates SAV path records run with `energy_law` and `energy_stride = 1`.
pub fn energy_law_decomposition(records: &[PathRecord]) -> Result<EnergyLawDecomposition> {
    let first = records.first().ok_or_else(|| Error::Config("no trajectories".into()))?;
    let steps = first.law.len();
    for r in records {
        if r.scheme == Scheme::Implicit {
            return Err(Error::Config("the implicit scheme has no SAV energy law".into()));
        }
        if r.law.len() != steps || r.energies.len() != steps + 1 {
            return Err(Error::Config("trajectories must carry per-step energies and law terms".into()));
        }
    }
    let e_mod0 = first.energies[0].1;
    let mut energy_rows = Vec::with_capacity(records.len());
    let mut diss_rows = Vec::with_capacity(records.len());
    let mut trace_rows = Vec::with_capacity(records.len());
    let mut raw_rows = Vec::with_capacity(records.len());
    let mut cv_rows = Vec::with_capacity(records.len());
    for r in records {
        let (mut d, mut t, mut m) = (0.0, 0.0, 0.0);
        let mut e = vec![r.energies[0].1];
        let mut dr = vec![0.0];
        let mut tr = vec![0.0];
        let mut raw = vec![r.energies[0].1 - e_mod0];
        let mut cv = raw.clone();
        for n in 0..steps {
            d += r.law[n].dissipation;
            t += r.law[n].trace;
            m += r.law[n].martingale + r.law[n].noise_fluctuation;
            let en = r.energies[n + 1].1;
            e.push(en);
            dr.push(d);
            tr.push(t);
            raw.push(en - e_mod0 + d - t);
            cv.push(en - e_mod0 + d - t - m);
        }
        energy_rows.push(e);
        diss_rows.push(dr);
        trace_rows.push(tr);
        raw_rows.push(raw);
        cv_rows.push(cv);
    }
    let (mean_e_mod, _) = column_stats(&energy_rows);
    let (dissipation, _) = column_stats(&diss_rows);
    let (trace, _) = column_stats(&trace_rows);
    let (remainder, remainder_stderr) = column_stats(&raw_rows);
    let (remainder_cv, remainder_cv_stderr) = column_stats(&cv_rows);
    Ok(EnergyLawDecomposition {
        times: first.energies.iter().map(|e| e.0).collect(),
        e_mod0,
        mean_e_mod,
        dissipation,
        trace,
        remainder,
        remainder_stderr,
        remainder_cv,
        remainder_cv_stderr,
    })
}

/// Energy-law decompositions of the SSAV scheme for several step sizes on
/// common paths drawn at the smallest step.
pub fn energy_law_study(config: &RunConfig, taus: &[f64]) -> Result<Vec<(f64, EnergyLawDecomposition)>> {
    config.validate()?;
    let tau_min = taus.iter().cloned().fold(f64::INFINITY, f64::min);
    if !tau_min.is_finite() {
        return Err(Error::Config("tau grid is empty".into()));
    }
    let ratios: Vec<usize> = taus.iter().map(|&t| step_ratio(t, tau_min)).collect::<Result<_>>()?;
    let n_fine = steps_for(config.final_time, tau_min)?;
    let params: Vec<SchemeParams> = taus.iter().map(|&t| config.params.with_tau(t)).collect::<Result<_>>()?;
    let x0 = config.initial.project(config.params.grid())?;
    let opts = RecordOptions { energy_stride: 1, energy_law: true, ..Default::default() };
    let scheme = if config.scheme == Scheme::Implicit { Scheme::Ssav } else { config.scheme };

    let per_path: Vec<Vec<PathRecord>> = (0..config.paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<PathRecord>> {
            let fine = path_increments(&config.params, config.base_seed, p, n_fine, tau_min)?;
            ratios
                .iter()
                .zip(&params)
                .map(|(&k, prm)| {
                    let incs = coarsen_path(&fine, k)?;
                    let rec = run_with_increments(prm, scheme, x0.clone(), &incs, &config.solver, &opts, p)?;
                    gate(&rec)?;
                    Ok(rec)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    taus.iter()
        .enumerate()
        .map(|(i, &t)| {
            let recs: Vec<PathRecord> = per_path.iter().map(|p| p[i].clone()).collect();
            Ok((t, energy_law_decomposition(&recs)?))
        })
        .collect()
}
