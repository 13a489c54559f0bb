//! Exponential Euler step with the stochastic scalar auxiliary variable.
//!
//! One step maps `(Xⁿ, rⁿ)` to `(Xⁿ⁺¹, rⁿ⁺¹)` through
//!
//! ```text
//! Xⁿ⁺¹ = S(τ)Xⁿ + (I - S(τ))(κA)⁻¹ f̃ⁿ + S(τ) g(Xⁿ)δWⁿ,   f̃ⁿ = rⁿ⁺¹ bⁿ,
//! rⁿ⁺¹ = rⁿ + ½⟨bⁿ, Xⁿ⁺¹ - Xⁿ⟩,
//! ```
//!
//! with `S(τ) = exp(-κ τ A²)`. Since `f̃ⁿ` is linear in `Xⁿ⁺¹` through a
//! rank-one term, the update is solved in closed form by first computing
//! `⟨bⁿ, Xⁿ⁺¹⟩`.
//!
//! All operators are written in terms of the positive operator `-A` with
//! eigenvalues `λ_j`; `(I - S(τ))(κA)⁻¹` therefore acts as `-φ_j` with
//! `φ_j = (1 - e^{-κλ_j²τ}) / (κλ_j) > 0`.

use ndarray::{Array2, Zip};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forcing::{self, NoiseIncrement, NoiseSpec};
use crate::spectral::{dot, weighted_sq, GridRef, NodalField, SpectralField};

/// Polynomial potential `κ_pot (c1 ξ⁴ + c2 ξ³ + c3 ξ²)` plus the offset `Θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialSpec {
    c1: f64,
    c2: f64,
    c3: f64,
    theta: f64,
    scale: f64,
}

impl PotentialSpec {
    pub fn new(c1: f64, c2: f64, c3: f64, theta: f64, scale: f64) -> Result<Self> {
        if !(c1 > 0.0) || !c1.is_finite() {
            return Err(Error::Config(format!("quartic coefficient c1 must be positive, got {c1}")));
        }
        if !(c2.is_finite() && c3.is_finite()) {
            return Err(Error::Config("potential coefficients must be finite".into()));
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::Config(format!("theta must be positive, got {theta}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("potential scale must be positive, got {scale}")));
        }
        let p = Self { c1, c2, c3, theta, scale };
        let floor = p.min_density();
        if !(floor + theta > 0.0) {
            return Err(Error::Config(format!(
                "potential is not coercive: min κ f = {floor}, theta = {theta}"
            )));
        }
        Ok(p)
    }

    /// `f(ξ) = ¼ξ⁴ - ½ξ²`, i.e. `¼(ξ² - 1)²` without its constant.
    pub fn double_well(theta: f64) -> Result<Self> {
        Self::new(0.25, 0.0, -0.5, theta, 1.0)
    }

    /// Potential with `f ≡ 0`; only meant for checking the linear part of a scheme.
    #[doc(hidden)]
    pub fn linear_test(theta: f64) -> Self {
        Self { c1: 0.0, c2: 0.0, c3: 0.0, theta, scale: 1.0 }
    }

    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        Self::new(self.c1, self.c2, self.c3, self.theta, scale)
    }

    pub fn coefficients(&self) -> (f64, f64, f64) {
        (self.c1, self.c2, self.c3)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Scaled density `κ f(ξ)`.
    pub fn f(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.scale * (self.c1 * x2 * x2 + self.c2 * x2 * x + self.c3 * x2)
    }

    pub fn df(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.scale * (4.0 * self.c1 * x2 * x + 3.0 * self.c2 * x2 + 2.0 * self.c3 * x)
    }

    pub fn d2f(&self, x: f64) -> f64 {
        self.scale * (12.0 * self.c1 * x * x + 6.0 * self.c2 * x + 2.0 * self.c3)
    }

    /// Global minimum of `κ f` over the real line, from its critical points.
    fn min_density(&self) -> f64 {
        // f'(ξ) = ξ (4c1 ξ² + 3c2 ξ + 2c3)
        let mut best = self.f(0.0);
        let (a, b, c) = (4.0 * self.c1, 3.0 * self.c2, 2.0 * self.c3);
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            for s in [-1.0, 1.0] {
                best = best.min(self.f((-b + s * disc.sqrt()) / (2.0 * a)));
            }
        }
        best
    }
}

/// Diagonal multipliers of the linear propagator for one `(grid, τ, κ)`.
#[derive(Debug, Clone)]
pub(crate) struct Propagator {
    /// `e^{-κλ²τ}`
    pub decay: Array2<f64>,
    /// `(1 - e^{-κλ²τ}) / (κλ)`
    pub phi: Array2<f64>,
    /// `(1 - e^{-2κλ²τ}) / (κλ)`
    pub dissipation: Array2<f64>,
    /// `κλ`
    pub stiffness: Array2<f64>,
}

impl Propagator {
    fn new(grid: &GridRef, tau: f64, kappa: f64) -> Self {
        let lam = grid.eigenvalues();
        Self {
            decay: lam.mapv(|l| (-kappa * l * l * tau).exp()),
            phi: lam.mapv(|l| -(-kappa * l * l * tau).exp_m1() / (kappa * l)),
            dissipation: lam.mapv(|l| -(-2.0 * kappa * l * l * tau).exp_m1() / (kappa * l)),
            stiffness: lam.mapv(|l| kappa * l),
        }
    }
}

/// Everything one step needs besides the state.
#[derive(Debug, Clone)]
pub struct SchemeParams {
    grid: GridRef,
    tau: f64,
    surf_scale: f64,
    potential: PotentialSpec,
    noise: NoiseSpec,
    pub(crate) prop: Propagator,
}

impl SchemeParams {
    pub fn new(grid: GridRef, tau: f64, surf_scale: f64, potential: PotentialSpec, noise: NoiseSpec) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {tau}")));
        }
        if !(surf_scale > 0.0) || !surf_scale.is_finite() {
            return Err(Error::Config(format!("surface scale must be positive, got {surf_scale}")));
        }
        if noise.dim() != grid.dim() {
            return Err(Error::Config("noise and grid dimensions differ".into()));
        }
        if noise.modes() > grid.modes() {
            return Err(Error::Config(format!(
                "noise modes J = {} exceed grid modes M = {}",
                noise.modes(),
                grid.modes()
            )));
        }
        let prop = Propagator::new(&grid, tau, surf_scale);
        Ok(Self { grid, tau, surf_scale, potential, noise, prop })
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn surf_scale(&self) -> f64 {
        self.surf_scale
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Same model with a different time step.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.grid.clone(), tau, self.surf_scale, self.potential, self.noise.clone())
    }

    /// Same model on a different grid.
    pub fn with_grid(&self, grid: GridRef) -> Result<Self> {
        Self::new(grid, self.tau, self.surf_scale, self.potential, self.noise.clone())
    }

    /// Same model with different noise.
    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        Self::new(self.grid.clone(), self.tau, self.surf_scale, self.potential, noise)
    }
}

/// `(Xⁿ, rⁿ)` plus the step counter.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub x: SpectralField,
    pub r: f64,
    pub step_index: usize,
    pub time: f64,
}

impl SchemeState {
    /// Initial state with `r⁰ = √E_p(X⁰)`.
    pub fn initial(x: SpectralField, params: &SchemeParams) -> Result<Self> {
        if x.grid().spec() != params.grid.spec() {
            return Err(Error::Dimension("initial field is not on the scheme grid".into()));
        }
        let r = potential_energy(&x, &params.potential)?.sqrt();
        Ok(Self { x, r, step_index: 0, time: 0.0 })
    }
}

/// Per-step quantities of the SAV update and its energy balance.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub b: SpectralField,
    pub gamma: f64,
    pub f_tilde: SpectralField,
    pub chi: SpectralField,
    pub g_dw: SpectralField,
    pub mu_tilde: SpectralField,
    /// `√E_p(Xⁿ)`
    pub sqrt_ep: f64,
    /// `2rⁿ⁺¹(rⁿ⁺¹ - rⁿ) - ⟨f̃ⁿ, Xⁿ⁺¹ - Xⁿ⟩`
    pub sav_identity_residual: f64,
    /// `1 + |rⁿ⁺¹|² + ‖f̃ⁿ‖ ‖Xⁿ⁺¹ - Xⁿ‖`
    pub sav_identity_scale: f64,
    /// `‖Xⁿ⁺¹ + ½φ⊙b ⟨b, Xⁿ⁺¹⟩ - w‖ / ‖w‖`
    pub solve_residual: f64,
    pub balance: EnergyBalance,
    pub energy_identity_residual: f64,
    pub delta_e_mod: f64,
    /// `⟨κ(-A)Xⁿ + rⁿ F'(Xⁿ)/√E_p, g(Xⁿ)δWⁿ⟩`, a mean-zero increment.
    pub martingale: f64,
}

impl StepDiagnostics {
    pub fn relative_sav_residual(&self) -> f64 {
        self.sav_identity_residual.abs() / self.sav_identity_scale
    }

    pub fn relative_energy_residual(&self) -> f64 {
        self.balance.relative_residual()
    }
}

/// Terms of the per-step energy identity
/// `ΔE_mod + |Δr|² + ½‖(I-S²)^{½}(κ(-A))^{-½}μ̃‖² = ⟨κ(-A)X + f̃, gδW⟩ + ½‖(κ(-A))^{½}gδW‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBalance {
    pub delta_e_mod: f64,
    pub dr_sq: f64,
    pub dissipation: f64,
    pub noise_work: f64,
    pub noise_energy: f64,
    /// Largest magnitude among the terms, including both energies.
    pub scale: f64,
}

impl EnergyBalance {
    pub fn residual(&self) -> f64 {
        self.delta_e_mod + self.dr_sq + self.dissipation - self.noise_work - self.noise_energy
    }

    pub fn relative_residual(&self) -> f64 {
        if self.scale == 0.0 {
            self.residual().abs()
        } else {
            self.residual().abs() / self.scale
        }
    }
}

/// Nodal evaluation of the nonlinear terms at `X`.
pub(crate) struct Linearization {
    pub nodal: NodalField,
    /// `P_M[κ f'(X)]`
    pub first: SpectralField,
    /// `κ f''(X)` on the nodes
    pub second: Array2<f64>,
    pub ep: f64,
}

pub(crate) fn linearize(x: &SpectralField, p: &PotentialSpec) -> Result<Linearization> {
    let nodal = x.to_nodal();
    let grid = x.grid();
    let first_nodal = nodal.values().mapv(|v| p.df(v));
    let first = SpectralField::from_raw(grid, grid.analyze(&first_nodal));
    let second = nodal.values().mapv(|v| p.d2f(v));
    let ep = nodal.integrate(|v| p.f(v)) + p.theta;
    if !(ep > 0.0) {
        return Err(Error::Coercivity { value: ep });
    }
    Ok(Linearization { nodal, first, second, ep })
}

/// `E_p(X) = ∫ κ f(X) dx + Θ` by nodal quadrature.
pub fn potential_energy(x: &SpectralField, p: &PotentialSpec) -> Result<f64> {
    let ep = x.to_nodal().integrate(|v| p.f(v)) + p.theta;
    if !(ep > 0.0) {
        return Err(Error::Coercivity { value: ep });
    }
    Ok(ep)
}

/// Output of [`nemytskii`].
#[derive(Debug, Clone)]
pub enum Nemytskii {
    /// `P_M[κ f'(X)]`
    Projected(SpectralField),
    /// `κ f''(X)` on the nodes
    Multiplier(NodalField),
}

/// Nemytskii operators of the potential: order 1 gives the projected `F'`,
/// order 2 the nodal multiplier `F''`.
pub fn nemytskii(x: &SpectralField, p: &PotentialSpec, order: u8) -> Result<Nemytskii> {
    let nodal = x.to_nodal();
    match order {
        1 => {
            let v = nodal.values().mapv(|v| p.df(v));
            Ok(Nemytskii::Projected(NodalField::from_raw(x.grid(), v).to_spectral()))
        }
        2 => Ok(Nemytskii::Multiplier(NodalField::from_raw(x.grid(), nodal.values().mapv(|v| p.d2f(v))))),
        _ => Err(Error::Config(format!("Nemytskii order must be 1 or 2, got {order}"))),
    }
}

/// `P_M[m · w]` for a nodal multiplier `m`.
pub(crate) fn multiply(grid: &GridRef, m: &Array2<f64>, w: &SpectralField) -> SpectralField {
    forcing::multiply_project(grid, m, w)
}

fn assemble_b(lin: &Linearization, g_dw: &SpectralField, stochastic: bool) -> SpectralField {
    let grid = lin.first.grid();
    let sq = lin.ep.sqrt();
    let mut b = lin.first.coeffs() / sq;
    if stochastic {
        let proj = dot(lin.first.coeffs(), g_dw.coeffs());
        let curv = multiply(grid, &lin.second, g_dw);
        b.scaled_add(-proj / (4.0 * lin.ep * sq), lin.first.coeffs());
        b.scaled_add(0.5 / sq, curv.coeffs());
    }
    SpectralField::from_raw(grid, b)
}

/// `bⁿ = F'/√E_p - F'⟨F', gδW⟩/(4E_p^{3/2}) + F''(gδW)/(2√E_p)` at `X`.
pub fn build_b(x: &SpectralField, g_dw: &SpectralField, p: &PotentialSpec) -> Result<SpectralField> {
    if x.grid().spec() != g_dw.grid().spec() {
        return Err(Error::Dimension("noise field is not on the state grid".into()));
    }
    let lin = linearize(x, p)?;
    Ok(assemble_b(&lin, g_dw, true))
}

/// Which `f̃ⁿ` the step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SavVariant {
    /// With the Itô correction terms in `bⁿ`.
    Stochastic,
    /// `bⁿ = F'(Xⁿ)/√E_p(Xⁿ)`.
    Standard,
}

/// One step of the stochastic SAV scheme.
pub fn step(state: &SchemeState, dw: &NoiseIncrement, params: &SchemeParams) -> Result<(SchemeState, StepDiagnostics)> {
    advance(state, dw, params, SavVariant::Stochastic)
}

pub(crate) fn advance(
    state: &SchemeState,
    dw: &NoiseIncrement,
    params: &SchemeParams,
    variant: SavVariant,
) -> Result<(SchemeState, StepDiagnostics)> {
    let grid = &params.grid;
    if state.x.grid().spec() != grid.spec() {
        return Err(Error::Dimension("state is not on the scheme grid".into()));
    }
    if (dw.tau() - params.tau).abs() > 1e-12 * params.tau {
        return Err(Error::Config(format!(
            "increment covers {} but the step is {}",
            dw.tau(),
            params.tau
        )));
    }
    let prop = &params.prop;
    let x = state.x.coeffs();

    let lin = linearize(&state.x, &params.potential)?;
    let sigma = forcing::sigma_nodal(&lin.nodal, &params.noise);
    let g_dw = forcing::multiply_project(grid, &sigma, &dw.embed(grid));

    let b = assemble_b(&lin, &g_dw, variant == SavVariant::Stochastic);
    let bc = b.coeffs();
    let u = &prop.phi * bc;
    let gamma = 0.5 * dot(&u, bc);

    // w = S X - u r + ½ u ⟨b, X⟩ + S gδW
    let bx_old = dot(bc, x);
    let mut w = &prop.decay * &(x + g_dw.coeffs());
    w.scaled_add(-state.r + 0.5 * bx_old, &u);

    let bx_new = dot(bc, &w) / (1.0 + gamma);
    let mut x_new = w.clone();
    x_new.scaled_add(-0.5 * bx_new, &u);

    let dx = &x_new - x;
    let r_new = state.r + 0.5 * dot(bc, &dx);

    if !r_new.is_finite() || !x_new.iter().all(|v| v.is_finite()) {
        return Err(Error::BlowUp { step: state.step_index, what: "non-finite state after step".into() });
    }

    let solve_residual = {
        let mut res = x_new.clone();
        res.scaled_add(0.5 * dot(bc, &x_new), &u);
        res -= &w;
        let wn = dot(&w, &w).sqrt();
        let rn = dot(&res, &res).sqrt();
        if wn > 0.0 { rn / wn } else { rn }
    };

    let f_tilde = bc * r_new;
    let chi = {
        let mut c = f_tilde.clone();
        c.scaled_add(-r_new / lin.ep.sqrt(), lin.first.coeffs());
        c
    };
    // μ̃ = κ(-A)X + f̃ + κ(-A)gδW
    let mu = &prop.stiffness * &(x + g_dw.coeffs()) + &f_tilde;

    let sav_lhs = 2.0 * r_new * (r_new - state.r);
    let sav_rhs = dot(&f_tilde, &dx);
    let sav_scale = 1.0 + r_new * r_new + dot(&f_tilde, &f_tilde).sqrt() * dot(&dx, &dx).sqrt();

    let martingale = {
        let mut drift = &prop.stiffness * x;
        drift.scaled_add(state.r / lin.ep.sqrt(), lin.first.coeffs());
        dot(&drift, g_dw.coeffs())
    };

    let next = SchemeState {
        x: SpectralField::from_raw(grid, x_new),
        r: r_new,
        step_index: state.step_index + 1,
        time: state.time + params.tau,
    };
    let mut diag = StepDiagnostics {
        b,
        gamma,
        f_tilde: SpectralField::from_raw(grid, f_tilde),
        chi: SpectralField::from_raw(grid, chi),
        g_dw,
        mu_tilde: SpectralField::from_raw(grid, mu),
        sqrt_ep: lin.ep.sqrt(),
        sav_identity_residual: sav_lhs - sav_rhs,
        sav_identity_scale: sav_scale,
        solve_residual,
        balance: EnergyBalance {
            delta_e_mod: 0.0,
            dr_sq: 0.0,
            dissipation: 0.0,
            noise_work: 0.0,
            noise_energy: 0.0,
            scale: 0.0,
        },
        energy_identity_residual: 0.0,
        delta_e_mod: 0.0,
        martingale,
    };
    diag.balance = energy_identity_residual(state, &next, &diag, params);
    diag.energy_identity_residual = diag.balance.residual();
    diag.delta_e_mod = diag.balance.delta_e_mod;
    Ok((next, diag))
}

/// `E_mod(X, r) = ½κ‖∇X‖² + r²`.
pub fn modified_energy(state: &SchemeState, params: &SchemeParams) -> f64 {
    0.5 * params.surf_scale * state.x.h1_seminorm().powi(2) + state.r * state.r
}

/// Evaluates the terms of the per-step energy identity for a step produced by [`step`].
pub fn energy_identity_residual(
    prev: &SchemeState,
    next: &SchemeState,
    diag: &StepDiagnostics,
    params: &SchemeParams,
) -> EnergyBalance {
    let prop = &params.prop;
    let grad_old = 0.5 * weighted_sq(prev.x.coeffs(), &prop.stiffness);
    let grad_new = 0.5 * weighted_sq(next.x.coeffs(), &prop.stiffness);
    let delta_e_mod = (grad_new - grad_old) + (next.r * next.r - prev.r * prev.r);
    let dr = next.r - prev.r;
    let dissipation = 0.5 * Zip::from(diag.mu_tilde.coeffs())
        .and(&prop.dissipation)
        .fold(0.0, |acc, &m, &w| acc + w * m * m);
    let g = diag.g_dw.coeffs();
    let noise_work = dot(&(&prop.stiffness * prev.x.coeffs()), g) + dot(diag.f_tilde.coeffs(), g);
    let noise_energy = 0.5 * weighted_sq(g, &prop.stiffness);
    let scale = [
        grad_old,
        grad_new,
        next.r * next.r,
        prev.r * prev.r,
        dr * dr,
        dissipation,
        noise_work.abs(),
        noise_energy,
    ]
    .into_iter()
    .fold(0.0, f64::max);
    EnergyBalance { delta_e_mod, dr_sq: dr * dr, dissipation, noise_work, noise_energy, scale }
}

/// `Σ_k ⟨(κ(-A) + F''(X)) g(X)Q^{½}e_k, g(X)Q^{½}e_k⟩` over the retained noise modes.
pub fn noise_trace(x: &SpectralField, params: &SchemeParams) -> Result<f64> {
    let (stiff, pot) = noise_trace_parts(x, params)?;
    Ok(stiff + pot)
}

/// The two parts of [`noise_trace`]: `(Σ_k ‖(κ(-A))^{½} c_k‖², Σ_k ⟨F''(X) c_k, c_k⟩)`
/// with `c_k = g(X)Q^{½}e_k`.
pub fn noise_trace_parts(x: &SpectralField, params: &SchemeParams) -> Result<(f64, f64)> {
    let lin = linearize(x, &params.potential)?;
    let sigma = forcing::sigma_nodal(&lin.nodal, &params.noise);
    let cols = forcing::columns_from_sigma(&params.grid, &sigma, &params.noise);
    let h = params.grid.spec().cell_volume();
    let (mut stiff, mut pot) = (0.0, 0.0);
    for c in &cols {
        stiff += weighted_sq(c.coeffs(), &params.prop.stiffness);
        // ⟨P_M[F'' c], c⟩ equals the nodal quadrature of F'' c² for c in H_M.
        let cv = params.grid.synthesize(c.coeffs());
        pot += h * Zip::from(&cv).and(&lin.second).fold(0.0, |acc, &v, &m| acc + m * v * v);
    }
    Ok((stiff, pot))
}
