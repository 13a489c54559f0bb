//! Built-in invariant suites behind `ssav-ch selftest`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forcing::{coarsen_path, sample_increment, NoiseSpec, RngStream, Sigma};
use crate::harness::{estimate_order, extract_zero_level_set};
use crate::reference::{implicit_euler_step, implicit_residual, standard_sav_step, ImplicitSolverSpec};
use crate::spectral::{Grid, GridRef, GridSpec, NodalField, SpectralField};
use crate::stepper::{modified_energy, step, PotentialSpec, SchemeParams, SchemeState};

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<String>,
}

struct Suite {
    result: SuiteResult,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self { result: SuiteResult { name, passed: 0, total: 0, failures: Vec::new() } }
    }

    fn check(&mut self, label: &str, ok: Result<bool>) {
        self.result.total += 1;
        match ok {
            Ok(true) => self.result.passed += 1,
            Ok(false) => self.result.failures.push(label.to_string()),
            Err(e) => self.result.failures.push(format!("{label}: {e}")),
        }
    }
}

/// Random coefficients with `1/(1+|j|²)` decay.
pub fn random_field(grid: &GridRef, rng: &mut ChaCha8Rng, amplitude: f64) -> SpectralField {
    let (a, b) = grid.spec().spectral_shape();
    let c = Array2::from_shape_fn((a, b), |(i, j)| {
        let k = ((i + 1).pow(2) + (j + 1).pow(2)) as f64;
        amplitude * (rng.random::<f64>() * 2.0 - 1.0) / (1.0 + k)
    });
    SpectralField::from_coeffs(grid, c).expect("finite coefficients")
}

pub fn run_all() -> Vec<SuiteResult> {
    vec![spectral(), forcing(), stepper(), reference(), harness()]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn spectral() -> SuiteResult {
    let mut s = Suite::new("spectral");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (dim, m) in [(1, 16), (2, 8), (2, 16)] {
        let g = Grid::new(GridSpec::dealiased(dim, m).unwrap());
        for _ in 0..5 {
            let f = random_field(&g, &mut rng, 1.0);
            let h = random_field(&g, &mut rng, 1.0);
            s.check("round trip", (|| Ok(f.to_nodal().to_spectral().sub(&f)?.l2_norm() <= 1e-12))());
            s.check("parseval", (|| {
                let n = f.to_nodal();
                let quad = n.values().iter().map(|v| v * v).sum::<f64>() * g.spec().cell_volume();
                Ok(close(quad, f.l2_norm().powi(2), 1e-12))
            })());
            s.check("semigroup", (|| {
                let two = f.apply_semigroup(1.0, 1e-4)?.apply_semigroup(1.0, 2e-4)?;
                Ok(two.sub(&f.apply_semigroup(1.0, 3e-4)?)?.l2_norm() <= 1e-12)
            })());
            s.check("fractional power", (|| {
                let two = f.apply_fractional_power(0.5)?.apply_fractional_power(-1.5)?;
                Ok(two.sub(&f.apply_fractional_power(-1.0)?)?.l2_norm() <= 1e-12 * (1.0 + f.l2_norm()))
            })());
            s.check("inner symmetry", (|| Ok(close(f.inner(&h)?, h.inner(&f)?, 1e-14)))());
        }
    }
    s.result
}

fn forcing() -> SuiteResult {
    let mut s = Suite::new("forcing");
    let spec = NoiseSpec::standard(2, 1.0, Sigma::InvSqrt(2.5)).unwrap();
    s.check("reproducible", (|| {
        let mut a = RngStream::new(5, 3);
        let mut b = RngStream::new(5, 3);
        Ok(sample_increment(&mut a, &spec, 1e-3)?.coeffs() == sample_increment(&mut b, &spec, 1e-3)?.coeffs())
    })());
    s.check("refinement sums", (|| {
        let mut r = RngStream::new(1, 0);
        let fine: Vec<_> = (0..8).map(|_| sample_increment(&mut r, &spec, 1e-4)).collect::<Result<_>>()?;
        let coarse = coarsen_path(&fine, 4)?;
        let direct = fine[0].coeffs() + fine[1].coeffs() + fine[2].coeffs() + fine[3].coeffs();
        Ok(coarse.len() == 2 && (coarse[0].coeffs() - &direct).iter().all(|v| v.abs() < 1e-15))
    })());
    s.check("zero amplitude", (|| {
        let z = spec.with_amplitude(0.0)?;
        let mut r = RngStream::new(1, 0);
        Ok(sample_increment(&mut r, &z, 1e-3)?.coeffs().iter().all(|&v| v == 0.0))
    })());
    s.result
}

fn sweep_params(m: usize) -> SchemeParams {
    let g = Grid::new(GridSpec::dealiased(2, m).unwrap());
    let noise = NoiseSpec::standard(2, 1.0, Sigma::InvSqrt(2.5)).unwrap();
    SchemeParams::new(g, 1e-3, 1.0, PotentialSpec::double_well(1.0).unwrap(), noise).unwrap()
}

fn stepper() -> SuiteResult {
    let mut s = Suite::new("stepper");
    let p = sweep_params(8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noise = RngStream::new(3, 0);
    for _ in 0..20 {
        let x = random_field(p.grid(), &mut rng, 2.0);
        let Ok(state) = SchemeState::initial(x, &p) else { continue };
        let dw = sample_increment(&mut noise, p.noise(), p.tau()).unwrap();
        match step(&state, &dw, &p) {
            Ok((_, d)) => {
                s.check("sav identity", Ok(d.relative_sav_residual() <= 1e-10));
                s.check("energy identity", Ok(d.relative_energy_residual() <= 1e-9));
                s.check("explicit solve", Ok(d.solve_residual <= 1e-12));
                s.check("gamma nonnegative", Ok(d.gamma >= 0.0));
            }
            Err(e) => s.check("step", Err(e)),
        }
    }
    s.check("deterministic dissipation", (|| {
        let q = p.with_noise(p.noise().with_amplitude(0.0)?)?;
        let mut st = SchemeState::initial(crate::harness::InitialCondition::TwoMode.project(q.grid())?, &q)?;
        let zero = crate::forcing::NoiseIncrement::zeros(q.noise(), q.tau())?;
        let mut e = modified_energy(&st, &q);
        for _ in 0..50 {
            st = step(&st, &zero, &q)?.0;
            let e2 = modified_energy(&st, &q);
            if e2 > e + 1e-12 * e.abs() {
                return Ok(false);
            }
            e = e2;
        }
        Ok(true)
    })());
    s.result
}

fn reference() -> SuiteResult {
    let mut s = Suite::new("reference");
    let p = sweep_params(8);
    s.check("zero noise agreement", (|| {
        let q = p.with_noise(p.noise().with_amplitude(0.0)?)?;
        let zero = crate::forcing::NoiseIncrement::zeros(q.noise(), q.tau())?;
        let mut a = SchemeState::initial(crate::harness::InitialCondition::TwoMode.project(q.grid())?, &q)?;
        let mut b = a.clone();
        for _ in 0..20 {
            a = step(&a, &zero, &q)?.0;
            b = standard_sav_step(&b, &zero, &q)?.0;
        }
        Ok(a.x.coeffs() == b.x.coeffs() && a.r == b.r)
    })());
    s.check("implicit residual", (|| {
        let q = p.with_tau(1e-4)?;
        let x = crate::harness::InitialCondition::TwoMode.project(q.grid())?;
        let mut r = RngStream::new(9, 0);
        let dw = sample_increment(&mut r, q.noise(), q.tau())?;
        let solver = ImplicitSolverSpec::default();
        let next = implicit_euler_step(&x, &dw, &q, &solver)?;
        let (_, pre) = implicit_residual(&next.x, &x, &dw, &q)?;
        Ok(pre <= 2.0 * solver.tolerance)
    })());
    s.result
}

fn harness() -> SuiteResult {
    let mut s = Suite::new("harness");
    s.check("order estimate", (|| {
        let e = estimate_order(&[2.0, 1.0, 0.5], &[4e-3, 2e-3, 1e-3])?;
        Ok(e.slope.is_some_and(|v| close(v, 1.0, 1e-12)) && e.orders.iter().all(|o| o.is_some_and(|v| close(v, 1.0, 1e-12))))
    })());
    s.check("level set circle", (|| {
        let g = Grid::new(GridSpec::dealiased(2, 32)?);
        let h = g.spec().spacing();
        let n = NodalField::from_fn(&g, |x| ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() - 0.25)?;
        let ls = extract_zero_level_set(&n, 0.0)?;
        Ok(ls.polylines.len() == 1
            && ls.polylines[0].closed
            && ls.mean_radius([0.5, 0.5]).is_some_and(|r| (r - 0.25).abs() <= 2.0 * h))
    })());
    s.result
}
