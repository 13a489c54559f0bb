//! Baselines: the standard SAV exponential Euler step (no Itô correction)
//! and a fully implicit Euler step solved by fixed-point iteration.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forcing::{self, NoiseIncrement};
use crate::spectral::{dot, weighted_sq, SpectralField};
use crate::stepper::{advance, SavVariant, SchemeParams, SchemeState, StepDiagnostics};

/// Standard SAV step: `bⁿ = F'(Xⁿ)/√E_p(Xⁿ)`, same rank-one solve.
pub fn standard_sav_step(
    state: &SchemeState,
    dw: &NoiseIncrement,
    params: &SchemeParams,
) -> Result<(SchemeState, StepDiagnostics)> {
    advance(state, dw, params, SavVariant::Standard)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImplicitSolverSpec {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for ImplicitSolverSpec {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 200 }
    }
}

impl ImplicitSolverSpec {
    pub fn new(tolerance: f64, max_iterations: usize) -> Result<Self> {
        if !(tolerance > 0.0) || !tolerance.is_finite() {
            return Err(Error::Config(format!("solver tolerance must be positive, got {tolerance}")));
        }
        if max_iterations == 0 {
            return Err(Error::Config("solver needs at least one iteration".into()));
        }
        Ok(Self { tolerance, max_iterations })
    }
}

/// Result of one implicit step.
#[derive(Debug, Clone)]
pub struct ImplicitStep {
    pub x: SpectralField,
    pub iterations: usize,
    /// `‖X - T(X)‖` at the accepted iterate, where `T` is the resolvent map.
    pub fixed_point_residual: f64,
}

/// `Xⁿ⁺¹ = Xⁿ + τ(-κA²Xⁿ⁺¹ + A F'(Xⁿ⁺¹)) + g(Xⁿ)δWⁿ`.
///
/// Iterates `X ← (I + τκA²)⁻¹(Xⁿ - τ(-A)F'(X) + g(Xⁿ)δWⁿ)` from `Xⁿ` until
/// consecutive iterates differ by at most the tolerance in L².
pub fn implicit_euler_step(
    x: &SpectralField,
    dw: &NoiseIncrement,
    params: &SchemeParams,
    solver: &ImplicitSolverSpec,
) -> Result<ImplicitStep> {
    let grid = params.grid();
    if x.grid().spec() != grid.spec() {
        return Err(Error::Dimension("state is not on the scheme grid".into()));
    }
    if (dw.tau() - params.tau()).abs() > 1e-12 * params.tau() {
        return Err(Error::Config(format!(
            "increment covers {} but the step is {}",
            dw.tau(),
            params.tau()
        )));
    }
    let tau = params.tau();
    let kappa = params.surf_scale();
    let lam = grid.eigenvalues();
    let resolvent = lam.mapv(|l| 1.0 / (1.0 + tau * kappa * l * l));
    let tau_lam = lam.mapv(|l| tau * l);

    let nodal = x.to_nodal();
    let sigma = forcing::sigma_nodal(&nodal, params.noise());
    let g_dw = forcing::multiply_project(grid, &sigma, &dw.embed(grid));
    let base = x.coeffs() + g_dw.coeffs();

    let p = params.potential();
    let map = |iterate: &Array2<f64>| -> Array2<f64> {
        let v = grid.synthesize(iterate).mapv(|u| p.df(u));
        let fp = grid.analyze(&v);
        &resolvent * &(&base - &(&tau_lam * &fp))
    };

    let mut current = x.coeffs().clone();
    let mut last = f64::INFINITY;
    for it in 1..=solver.max_iterations {
        let next = map(&current);
        let diff = &next - &current;
        last = dot(&diff, &diff).sqrt();
        if !last.is_finite() {
            return Err(Error::BlowUp { step: 0, what: "implicit iteration diverged".into() });
        }
        current = next;
        if last <= solver.tolerance {
            let check = &map(&current) - &current;
            return Ok(ImplicitStep {
                x: SpectralField::from_raw(grid, current),
                iterations: it,
                fixed_point_residual: dot(&check, &check).sqrt(),
            });
        }
    }
    Err(Error::NonConvergence { iterations: solver.max_iterations, residual: last })
}

/// Residual of the implicit Euler equation, `(I + τκA²)X' - Xⁿ + τ(-A)F'(X') - g(Xⁿ)δWⁿ`,
/// before and after applying the resolvent: `(raw, preconditioned)` L² norms.
pub fn implicit_residual(
    x_new: &SpectralField,
    x_old: &SpectralField,
    dw: &NoiseIncrement,
    params: &SchemeParams,
) -> Result<(f64, f64)> {
    let grid = params.grid();
    let tau = params.tau();
    let kappa = params.surf_scale();
    let g_dw = forcing::apply_diffusion(x_old, dw, params.noise())?;
    let fp = grid.analyze(&grid.synthesize(x_new.coeffs()).mapv(|u| params.potential().df(u)));
    let lam = grid.eigenvalues();
    let mut raw = x_new.coeffs() * &lam.mapv(|l| 1.0 + tau * kappa * l * l);
    raw -= x_old.coeffs();
    raw += &(&lam.mapv(|l| tau * l) * &fp);
    raw -= g_dw.coeffs();
    let pre = &raw * &lam.mapv(|l| 1.0 / (1.0 + tau * kappa * l * l));
    Ok((dot(&raw, &raw).sqrt(), dot(&pre, &pre).sqrt()))
}

/// `E(X) = ½κ‖∇X‖² + ∫ κ_pot f(X) dx`, without `Θ`.
pub fn continuous_energy(x: &SpectralField, params: &SchemeParams) -> f64 {
    let p = params.potential();
    0.5 * params.surf_scale() * weighted_sq(x.coeffs(), x.grid().eigenvalues())
        + x.to_nodal().integrate(|v| p.f(v))
}
