//! Dirichlet sine eigenbasis on the unit interval and the unit square.
//!
//! Fields are stored as coefficients against the L²-orthonormal modes
//! `e_j(x) = Π_a √2 sin(j_a π x_a)`, with `-A e_j = λ_j e_j` and
//! `λ_j = π² Σ_a j_a²`. Nonlinear terms are evaluated pseudospectrally on the
//! interior nodes `x_i = i / (N_q + 1)`, where the discrete sine quadrature is
//! exact for the basis.
//!
//! Coefficient and nodal arrays are always two-dimensional: for `d = 1` the
//! second axis has length one.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array2, Zip};
use serde::Serialize;

use crate::error::{Error, Result};

/// Discretisation of the unit box: dimension, modes per axis and
/// quadrature nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct GridSpec {
    dim: usize,
    modes: usize,
    nodes: usize,
}

impl GridSpec {
    /// Grid obeying the dealiasing rule `N_q >= 2M`.
    pub fn new(dim: usize, modes: usize, nodes: usize) -> Result<Self> {
        let spec = Self::with_aliasing(dim, modes, nodes)?;
        if nodes < 2 * modes {
            return Err(Error::Config(format!(
                "dealiasing rule N_q >= 2M violated: N_q = {nodes}, M = {modes}"
            )));
        }
        Ok(spec)
    }

    /// Grid with the default `N_q = 2M`.
    pub fn dealiased(dim: usize, modes: usize) -> Result<Self> {
        Self::new(dim, modes, 2 * modes)
    }

    /// Grid that only requires `M <= N_q` (the transforms stay exact, products alias).
    pub fn with_aliasing(dim: usize, modes: usize, nodes: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
        }
        if modes == 0 || nodes == 0 {
            return Err(Error::Config("modes and nodes must be positive".into()));
        }
        if modes > nodes {
            return Err(Error::Config(format!(
                "modes per axis ({modes}) exceed quadrature nodes per axis ({nodes})"
            )));
        }
        Ok(Self { dim, modes, nodes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Node spacing `h = 1/(N_q + 1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.nodes as f64 + 1.0)
    }

    /// Shape of a coefficient array.
    pub fn spectral_shape(&self) -> (usize, usize) {
        (self.modes, if self.dim == 2 { self.modes } else { 1 })
    }

    /// Shape of a nodal array.
    pub fn nodal_shape(&self) -> (usize, usize) {
        (self.nodes, if self.dim == 2 { self.nodes } else { 1 })
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// `λ_j = π² Σ j_a²` for a one-based multi-index.
    pub fn eigenvalue(&self, j: &[usize]) -> Result<f64> {
        if j.len() != self.dim || j.iter().any(|&k| k == 0 || k > self.modes) {
            return Err(Error::Index { index: j.to_vec(), modes: self.modes });
        }
        Ok(PI * PI * j.iter().map(|&k| (k * k) as f64).sum::<f64>())
    }
}

/// A [`GridSpec`] together with its sine tables and eigenvalues.
#[derive(Debug)]
pub struct Grid {
    spec: GridSpec,
    eigen: Array2<f64>,
    /// `√2 sin(j π x_i)`, shape `N_q x M`.
    synth: Array2<f64>,
    /// `h √2 sin(j π x_i)`, shape `M x N_q`.
    analysis: Array2<f64>,
}

pub type GridRef = Arc<Grid>;

impl Grid {
    pub fn new(spec: GridSpec) -> GridRef {
        let (m, n) = (spec.modes, spec.nodes);
        let h = spec.spacing();
        let synth = Array2::from_shape_fn((n, m), |(i, j)| {
            2f64.sqrt() * ((j + 1) as f64 * PI * (i + 1) as f64 * h).sin()
        });
        let analysis = synth.t().mapv(|v| v * h);
        let eigen = Array2::from_shape_fn(spec.spectral_shape(), |(a, b)| {
            let j1 = (a + 1) as f64;
            if spec.dim == 2 {
                let j2 = (b + 1) as f64;
                PI * PI * (j1 * j1 + j2 * j2)
            } else {
                PI * PI * j1 * j1
            }
        });
        Arc::new(Self { spec, eigen, synth, analysis })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn modes(&self) -> usize {
        self.spec.modes
    }

    pub fn nodes(&self) -> usize {
        self.spec.nodes
    }

    pub fn eigenvalue(&self, j: &[usize]) -> Result<f64> {
        self.spec.eigenvalue(j)
    }

    /// Eigenvalues laid out like a coefficient array.
    pub fn eigenvalues(&self) -> &Array2<f64> {
        &self.eigen
    }

    /// Node coordinates along one axis.
    pub fn node_coords(&self) -> Vec<f64> {
        let h = self.spec.spacing();
        (1..=self.spec.nodes).map(|i| i as f64 * h).collect()
    }

    /// Coefficients to nodal values.
    pub fn synthesize(&self, coeffs: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(coeffs.dim(), self.spec.spectral_shape());
        let partial = self.synth.dot(coeffs);
        if self.spec.dim == 2 {
            partial.dot(&self.synth.t())
        } else {
            partial
        }
    }

    /// Nodal values to coefficients (discrete sine quadrature).
    pub fn analyze(&self, values: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(values.dim(), self.spec.nodal_shape());
        let partial = self.analysis.dot(values);
        if self.spec.dim == 2 {
            partial.dot(&self.analysis.t())
        } else {
            partial
        }
    }
}

fn check_same(a: &Grid, b: &Grid) -> Result<()> {
    if a.spec != b.spec {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.spec, b.spec)));
    }
    Ok(())
}

fn check_finite(values: &Array2<f64>, what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains non-finite entries")))
    }
}

/// Element of `H_M`: coefficients against the orthonormal sine modes.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: GridRef,
    coeffs: Array2<f64>,
}

impl SpectralField {
    pub fn zeros(grid: &GridRef) -> Self {
        Self { grid: grid.clone(), coeffs: Array2::zeros(grid.spec.spectral_shape()) }
    }

    pub fn from_coeffs(grid: &GridRef, coeffs: Array2<f64>) -> Result<Self> {
        if coeffs.dim() != grid.spec.spectral_shape() {
            return Err(Error::Dimension(format!(
                "coefficient array {:?} does not match grid {:?}",
                coeffs.dim(),
                grid.spec.spectral_shape()
            )));
        }
        check_finite(&coeffs, "coefficient array")?;
        Ok(Self { grid: grid.clone(), coeffs })
    }

    /// `value * e_j` for a one-based multi-index.
    pub fn mode(grid: &GridRef, j: &[usize], value: f64) -> Result<Self> {
        grid.eigenvalue(j)?;
        let mut f = Self::zeros(grid);
        let idx = (j[0] - 1, if grid.dim() == 2 { j[1] - 1 } else { 0 });
        f.coeffs[idx] = value;
        Ok(f)
    }

    pub(crate) fn from_raw(grid: &GridRef, coeffs: Array2<f64>) -> Self {
        debug_assert_eq!(coeffs.dim(), grid.spec.spectral_shape());
        Self { grid: grid.clone(), coeffs }
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Array2<f64> {
        self.coeffs
    }

    /// Coefficient of `e_j`, one-based.
    pub fn coeff(&self, j: &[usize]) -> Result<f64> {
        self.grid.eigenvalue(j)?;
        Ok(self.coeffs[(j[0] - 1, if self.grid.dim() == 2 { j[1] - 1 } else { 0 })])
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    pub fn to_nodal(&self) -> NodalField {
        NodalField { grid: self.grid.clone(), values: self.grid.synthesize(&self.coeffs) }
    }

    /// `coeffs_j <- m(λ_j) coeffs_j`.
    pub fn apply_diagonal(&self, m: impl Fn(f64) -> f64) -> Result<Self> {
        let mut out = self.coeffs.clone();
        let mut bad = None;
        Zip::from(&mut out).and(&self.grid.eigen).for_each(|c, &lam| {
            let factor = m(lam);
            if !factor.is_finite() {
                bad = Some(lam);
            }
            *c *= factor;
        });
        if let Some(lam) = bad {
            return Err(Error::Numeric(format!("multiplier is not finite at eigenvalue {lam}")));
        }
        Ok(Self { grid: self.grid.clone(), coeffs: out })
    }

    /// `S(t) = exp(-κ t A²)`.
    pub fn apply_semigroup(&self, kappa: f64, t: f64) -> Result<Self> {
        self.apply_diagonal(|lam| (-kappa * lam * lam * t).exp())
    }

    /// `(-A)^α`.
    pub fn apply_fractional_power(&self, alpha: f64) -> Result<Self> {
        self.apply_diagonal(|lam| lam.powf(alpha))
    }

    /// `(1 - exp(-κ λ² τ)) / (κ λ)`, the magnitude of `(I - S(τ))(κA)^{-1}`.
    pub fn apply_phi_factor(&self, kappa: f64, tau: f64) -> Result<Self> {
        self.apply_diagonal(|lam| -(-kappa * lam * lam * tau).exp_m1() / (kappa * lam))
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        check_same(&self.grid, &other.grid)?;
        Ok(dot(&self.coeffs, &other.coeffs))
    }

    pub fn l2_norm(&self) -> f64 {
        dot(&self.coeffs, &self.coeffs).sqrt()
    }

    /// `‖∇u‖ = (Σ λ_j û_j²)^{1/2}`.
    pub fn h1_seminorm(&self) -> f64 {
        weighted_sq(&self.coeffs, &self.grid.eigen).sqrt()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same(&self.grid, &other.grid)?;
        Ok(Self { grid: self.grid.clone(), coeffs: &self.coeffs + &other.coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same(&self.grid, &other.grid)?;
        Ok(Self { grid: self.grid.clone(), coeffs: &self.coeffs - &other.coeffs })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { grid: self.grid.clone(), coeffs: &self.coeffs * s }
    }

    /// Restriction or zero-padding onto another grid of the same dimension.
    pub fn resample(&self, target: &GridRef) -> Result<Self> {
        if target.dim() != self.grid.dim() {
            return Err(Error::Dimension("cannot resample across dimensions".into()));
        }
        let mut out = Array2::zeros(target.spec.spectral_shape());
        embed(&self.coeffs, &mut out);
        Ok(Self { grid: target.clone(), coeffs: out })
    }
}

/// Values on the interior quadrature nodes.
#[derive(Debug, Clone)]
pub struct NodalField {
    grid: GridRef,
    values: Array2<f64>,
}

impl NodalField {
    pub fn from_values(grid: &GridRef, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.spec.nodal_shape() {
            return Err(Error::Dimension(format!(
                "nodal array {:?} does not match grid {:?}",
                values.dim(),
                grid.spec.nodal_shape()
            )));
        }
        check_finite(&values, "nodal array")?;
        Ok(Self { grid: grid.clone(), values })
    }

    /// Samples `f(x)` at every node; `x` has `d` entries.
    pub fn from_fn(grid: &GridRef, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let xs = grid.node_coords();
        let values = if grid.dim() == 2 {
            Array2::from_shape_fn(grid.spec.nodal_shape(), |(a, b)| f(&[xs[a], xs[b]]))
        } else {
            Array2::from_shape_fn(grid.spec.nodal_shape(), |(a, _)| f(&[xs[a]]))
        };
        Self::from_values(grid, values)
    }

    pub(crate) fn from_raw(grid: &GridRef, values: Array2<f64>) -> Self {
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Projection onto `H_M` of the node grid's own mode count.
    pub fn to_spectral(&self) -> SpectralField {
        SpectralField { grid: self.grid.clone(), coeffs: self.grid.analyze(&self.values) }
    }

    /// Projection onto `H_{m_out}` with the same nodes.
    pub fn to_spectral_modes(&self, m_out: usize) -> Result<SpectralField> {
        let spec = self.grid.spec;
        if m_out > spec.nodes {
            return Err(Error::Config(format!(
                "cannot project onto {m_out} modes with {} nodes per axis",
                spec.nodes
            )));
        }
        if m_out == spec.modes {
            return Ok(self.to_spectral());
        }
        let grid = Grid::new(GridSpec::with_aliasing(spec.dim, m_out, spec.nodes)?);
        let coeffs = grid.analyze(&self.values);
        Ok(SpectralField { grid, coeffs })
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(h^d Σ |v|⁴)^{1/4}`.
    pub fn l4(&self) -> f64 {
        self.integrate(|v| v.powi(4)).powf(0.25)
    }

    /// `h^d Σ φ(v_i)`.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.grid.spec.cell_volume() * self.values.iter().map(|&v| phi(v)).sum::<f64>()
    }

    /// Writes the `SSAVFLD1` snapshot: header line, then little-endian f64
    /// values with `x₁` varying fastest.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let spec = self.grid.spec;
        write!(out, "SSAVFLD1 {} {}\n", spec.dim, spec.nodes)?;
        let (n1, n2) = spec.nodal_shape();
        let mut buf = Vec::with_capacity(n1 * n2 * 8);
        for i2 in 0..n2 {
            for i1 in 0..n1 {
                buf.extend_from_slice(&self.values[(i1, i2)].to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Reads a snapshot written by [`NodalField::write_snapshot`]. The mode
    /// count of the returned grid is `N_q / 2`.
    pub fn read_snapshot<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Config("snapshot header missing".into()))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::Config("snapshot header is not ASCII".into()))?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 3 || parts[0] != "SSAVFLD1" {
            return Err(Error::Config(format!("bad snapshot header {header:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Config(format!("bad snapshot header {header:?}")))
        };
        let (dim, nodes) = (parse(parts[1])?, parse(parts[2])?);
        let grid = Grid::new(GridSpec::with_aliasing(dim, (nodes / 2).max(1), nodes)?);
        let (n1, n2) = grid.spec.nodal_shape();
        let body = &bytes[newline + 1..];
        if body.len() != n1 * n2 * 8 {
            return Err(Error::Config(format!(
                "snapshot body has {} bytes, expected {}",
                body.len(),
                n1 * n2 * 8
            )));
        }
        let mut values = Array2::zeros((n1, n2));
        for (k, chunk) in body.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            values[(k % n1, k / n1)] = v;
        }
        Self::from_values(&grid, values)
    }
}

pub(crate) fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &x, &y| acc + x * y)
}

pub(crate) fn weighted_sq(a: &Array2<f64>, w: &Array2<f64>) -> f64 {
    Zip::from(a).and(w).fold(0.0, |acc, &x, &m| acc + m * x * x)
}

/// Copies the overlapping block of `src` into `dst` (which is assumed zeroed).
pub(crate) fn embed(src: &Array2<f64>, dst: &mut Array2<f64>) {
    let r = src.nrows().min(dst.nrows());
    let c = src.ncols().min(dst.ncols());
    for a in 0..r {
        for b in 0..c {
            dst[(a, b)] = src[(a, b)];
        }
    }
}
