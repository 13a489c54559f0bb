//! Truncated Q-Wiener increments and the multiplicative diffusion
//! `g(φ)w = σ(φ(x)) w(x)`.

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{embed, GridRef, NodalField, SpectralField};

/// Diffusion coefficient families. Each one is bounded with a bounded
/// derivative, which is why arbitrary closures are not accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", content = "constant", rename_all = "snake_case")]
pub enum Sigma {
    /// `σ(ξ) = c`
    Constant(f64),
    /// `σ(ξ) = c (1 + ξ²)^{-1/2}`
    InvSqrt(f64),
    /// `σ(ξ) = c cos ξ`
    Cosine(f64),
}

impl Sigma {
    pub fn value(&self, xi: f64) -> f64 {
        match *self {
            Sigma::Constant(c) => c,
            Sigma::InvSqrt(c) => c / (1.0 + xi * xi).sqrt(),
            Sigma::Cosine(c) => c * xi.cos(),
        }
    }

    pub fn derivative(&self, xi: f64) -> f64 {
        match *self {
            Sigma::Constant(_) => 0.0,
            Sigma::InvSqrt(c) => -c * xi / (1.0 + xi * xi).powf(1.5),
            Sigma::Cosine(c) => -c * xi.sin(),
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Sigma::Constant(c) | Sigma::InvSqrt(c) | Sigma::Cosine(c) => c.abs(),
        }
    }

    fn constant(&self) -> f64 {
        match *self {
            Sigma::Constant(c) | Sigma::InvSqrt(c) | Sigma::Cosine(c) => c,
        }
    }
}

/// Truncated Karhunen–Loève description of the driving noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    dim: usize,
    modes: usize,
    q_exponent: f64,
    amplitude: f64,
    sigma: Sigma,
    #[serde(skip)]
    sqrt_q: Array2<f64>,
}

impl NoiseSpec {
    /// `q_j = (Σ_a j_a²)^{-q_exponent}` for `j ∈ [1..J]^d`.
    pub fn new(dim: usize, modes: usize, q_exponent: f64, amplitude: f64, sigma: Sigma) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("noise dimension must be 1 or 2, got {dim}")));
        }
        if modes == 0 {
            return Err(Error::Config("noise needs at least one mode per axis".into()));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::Config(format!("noise amplitude must be finite and >= 0, got {amplitude}")));
        }
        if !q_exponent.is_finite() {
            return Err(Error::Config("q exponent must be finite".into()));
        }
        if !sigma.constant().is_finite() {
            return Err(Error::Config("sigma constant must be finite".into()));
        }
        let shape = (modes, if dim == 2 { modes } else { 1 });
        let sqrt_q = Array2::from_shape_fn(shape, |(a, b)| {
            let mut s = ((a + 1) * (a + 1)) as f64;
            if dim == 2 {
                s += ((b + 1) * (b + 1)) as f64;
            }
            s.powf(-q_exponent).sqrt()
        });
        Ok(Self { dim, modes, q_exponent, amplitude, sigma, sqrt_q })
    }

    /// The experiments' noise: `J = 4`, `q_j = |j|^{-2}`.
    pub fn standard(dim: usize, amplitude: f64, sigma: Sigma) -> Result<Self> {
        Self::new(dim, 4, 1.0, amplitude, sigma)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn q_exponent(&self) -> f64 {
        self.q_exponent
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn sigma(&self) -> Sigma {
        self.sigma
    }

    /// Covariance eigenvalue `q_j` for a one-based index.
    pub fn variance(&self, j: &[usize]) -> f64 {
        let s = self.sqrt_q[(j[0] - 1, if self.dim == 2 { j[1] - 1 } else { 0 })];
        s * s
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        Self::new(self.dim, self.modes, self.q_exponent, amplitude, self.sigma)
    }

    fn check_grid(&self, grid: &GridRef) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "noise is {}-dimensional but the grid is {}-dimensional",
                self.dim,
                grid.dim()
            )));
        }
        if self.modes > grid.modes() {
            return Err(Error::Config(format!(
                "noise modes J = {} exceed grid modes M = {}",
                self.modes,
                grid.modes()
            )));
        }
        Ok(())
    }
}

/// Spectral coefficients of one Wiener increment `δW` over a step of length `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    coeffs: Array2<f64>,
    tau: f64,
}

impl NoiseIncrement {
    pub fn new(coeffs: Array2<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("increment step must be positive, got {tau}")));
        }
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(Error::Numeric("noise increment has non-finite coefficients".into()));
        }
        Ok(Self { coeffs, tau })
    }

    pub fn zeros(spec: &NoiseSpec, tau: f64) -> Result<Self> {
        Self::new(Array2::zeros(spec.sqrt_q.dim()), tau)
    }

    pub fn coeffs(&self) -> &Array2<f64> {
        &self.coeffs
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `δW` as an element of `H_M`.
    pub fn embed(&self, grid: &GridRef) -> SpectralField {
        let mut c = Array2::zeros(grid.spec().spectral_shape());
        embed(&self.coeffs, &mut c);
        SpectralField::from_raw(grid, c)
    }
}

/// Per-path Gaussian stream keyed by `(seed, path_index)`.
///
/// Backed by ChaCha8 with the path index as stream id, so the draws of a path
/// do not depend on how many other paths exist or which thread runs them.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        Self { seed, path_index, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// `coeffs_j = amplitude √q_j √τ ξ_j`, `ξ_j ~ N(0, 1)` i.i.d.
///
/// The draws are consumed even when the amplitude is zero so that the stream
/// position does not depend on the amplitude.
pub fn sample_increment(rng: &mut RngStream, spec: &NoiseSpec, tau: f64) -> Result<NoiseIncrement> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("increment step must be positive, got {tau}")));
    }
    let scale = spec.amplitude * tau.sqrt();
    let coeffs = spec.sqrt_q.mapv(|s| scale * s * rng.normal());
    Ok(NoiseIncrement { coeffs, tau })
}

/// Sums consecutive fine increments into one coarse increment of length `coarse_tau`.
pub fn refine_increments(coarse_tau: f64, fine_tau: f64, fine: &[NoiseIncrement]) -> Result<NoiseIncrement> {
    let k = step_ratio(coarse_tau, fine_tau)?;
    if fine.len() != k {
        return Err(Error::Config(format!(
            "expected {k} fine increments for the coarse step, got {}",
            fine.len()
        )));
    }
    let mut coeffs = fine[0].coeffs.clone();
    for inc in &fine[1..] {
        if inc.coeffs.dim() != coeffs.dim() {
            return Err(Error::Dimension("fine increments have different shapes".into()));
        }
        coeffs += &inc.coeffs;
    }
    Ok(NoiseIncrement { coeffs, tau: coarse_tau })
}

/// Integer `k` with `coarse = k * fine`, tolerant to decimal round-off.
pub fn step_ratio(coarse: f64, fine: f64) -> Result<usize> {
    if !(coarse > 0.0 && fine > 0.0) {
        return Err(Error::Config("step sizes must be positive".into()));
    }
    let ratio = coarse / fine;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * k {
        return Err(Error::Config(format!(
            "step {coarse} is not an integer multiple of {fine}"
        )));
    }
    Ok(k as usize)
}

/// Coarsens a fine increment path by summing groups of `k`.
pub fn coarsen_path(fine: &[NoiseIncrement], k: usize) -> Result<Vec<NoiseIncrement>> {
    if k == 0 || fine.len() % k != 0 {
        return Err(Error::Config(format!(
            "{} fine increments cannot be grouped by {k}",
            fine.len()
        )));
    }
    if k == 1 {
        return Ok(fine.to_vec());
    }
    fine.chunks(k)
        .map(|chunk| refine_increments(chunk[0].tau * k as f64, chunk[0].tau, chunk))
        .collect()
}

/// `σ(x)` sampled on the nodes of `x`.
pub(crate) fn sigma_nodal(x: &NodalField, spec: &NoiseSpec) -> ndarray::Array2<f64> {
    x.values().mapv(|v| spec.sigma.value(v))
}

/// `P_M[σ_nodal · w]` for a field `w` in `H_M`.
pub(crate) fn multiply_project(grid: &GridRef, sigma: &Array2<f64>, w: &SpectralField) -> SpectralField {
    let mut values = grid.synthesize(w.coeffs());
    Zip::from(&mut values).and(sigma).for_each(|v, &s| *v *= s);
    SpectralField::from_raw(grid, grid.analyze(&values))
}

/// Galerkin projection of `σ(X(x)) δW(x)` onto `H_M`.
pub fn apply_diffusion(x: &SpectralField, dw: &NoiseIncrement, spec: &NoiseSpec) -> Result<SpectralField> {
    spec.check_grid(x.grid())?;
    let sigma = sigma_nodal(&x.to_nodal(), spec);
    Ok(multiply_project(x.grid(), &sigma, &dw.embed(x.grid())))
}

/// Columns `g(X) Q^{1/2} e_k` for each retained noise mode, in row-major order over `k`.
pub fn diffusion_operator_columns(x: &SpectralField, spec: &NoiseSpec) -> Result<Vec<SpectralField>> {
    spec.check_grid(x.grid())?;
    let sigma = sigma_nodal(&x.to_nodal(), spec);
    Ok(columns_from_sigma(x.grid(), &sigma, spec))
}

pub(crate) fn columns_from_sigma(grid: &GridRef, sigma: &Array2<f64>, spec: &NoiseSpec) -> Vec<SpectralField> {
    let (r, c) = spec.sqrt_q.dim();
    let mut out = Vec::with_capacity(r * c);
    for a in 0..r {
        for b in 0..c {
            let mut col = SpectralField::zeros(grid).into_coeffs();
            col[(a, b)] = spec.amplitude * spec.sqrt_q[(a, b)];
            out.push(multiply_project(grid, sigma, &SpectralField::from_raw(grid, col)));
        }
    }
    out
}
