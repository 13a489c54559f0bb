//! Acceptance criteria. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssav_ch::config::{preset, ConfigDocument};
use ssav_ch::forcing::{sample_increment, NoiseIncrement, NoiseSpec, RngStream, Sigma};
use ssav_ch::harness::{
    averaged_energy_study, energy_law_study, extract_zero_level_set, spatial_error_study, strong_error_study,
    InitialCondition, Scheme,
};
use ssav_ch::reference::standard_sav_step;
use ssav_ch::spectral::{Grid, GridRef, GridSpec, SpectralField};
use ssav_ch::stepper::{modified_energy, step, PotentialSpec, SchemeParams, SchemeState};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn random_coeffs(grid: &GridRef, rng: &mut ChaCha8Rng, amp: f64) -> SpectralField {
    let (a, b) = grid.spec().spectral_shape();
    let c = Array2::from_shape_fn((a, b), |(i, j)| amp * rng.random_range(-1.0..1.0) / (1 + i * i + j * j) as f64);
    SpectralField::from_coeffs(grid, c).unwrap()
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join(", ")
}

fn doc(name: &str) -> ConfigDocument {
    preset(name).unwrap()
}

/// M = 16 sweeps of the two noisy models, 1000 steps in total.
struct Sweep {
    sav_worst: f64,
    energy_worst: f64,
    solve_worst: f64,
}

fn sweep() -> Sweep {
    let g = Grid::new(GridSpec::dealiased(2, 16).unwrap());
    let models = [
        (1.0, PotentialSpec::double_well(1.0).unwrap(), NoiseSpec::standard(2, 1.0, Sigma::InvSqrt(2.5)).unwrap()),
        (0.04, PotentialSpec::new(0.25, 0.0, -0.5, 1.0 / 0.04, 1.0 / 0.04).unwrap(), NoiseSpec::standard(2, 1.0, Sigma::InvSqrt(10.0)).unwrap()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Sweep { sav_worst: 0.0, energy_worst: 0.0, solve_worst: 0.0 };
    for (m, (kappa, pot, noise)) in models.into_iter().enumerate() {
        let p = SchemeParams::new(g.clone(), 1e-3, kappa, pot, noise).unwrap();
        for path in 0..5 {
            let x0 = random_coeffs(p.grid(), &mut rng, 1.5);
            let mut state = SchemeState::initial(x0, &p).unwrap();
            let mut stream = RngStream::new(77 + m as u64, path);
            for _ in 0..100 {
                let dw = sample_increment(&mut stream, p.noise(), p.tau()).unwrap();
                let (next, d) = step(&state, &dw, &p).unwrap();
                let lhs = 2.0 * next.r * (next.r - state.r);
                let rhs = d.f_tilde.inner(&next.x.sub(&state.x).unwrap()).unwrap();
                out.sav_worst = out.sav_worst.max((lhs - rhs).abs() / (1.0 + lhs.abs() + rhs.abs()));
                let b = d.balance;
                let scale = [b.delta_e_mod.abs(), b.dr_sq, b.dissipation, b.noise_work.abs(), b.noise_energy]
                    .into_iter()
                    .fold(0.0, f64::max);
                out.energy_worst = out.energy_worst.max(b.residual().abs() / scale);
                out.solve_worst = out.solve_worst.max(d.solve_residual);
                state = next;
            }
        }
    }
    out
}

fn c1(s: &Sweep, t: Duration) -> Outcome {
    outcome(
        s.sav_worst <= 1e-10 && within(Duration::from_secs(10), t),
        format!("max |2r'(r'-r) - <f~, dX>| / (1 + |terms|) = {:.2e}", s.sav_worst),
    )
}

fn c2(s: &Sweep) -> Outcome {
    outcome(s.energy_worst <= 1e-9, format!("max relative energy-identity residual = {:.2e}", s.energy_worst))
}

fn c3(s: &Sweep) -> Outcome {
    let (tau, kappa, sigma) = (1e-3, 1.0, Sigma::InvSqrt(2.5));
    let g = Grid::new(GridSpec::dealiased(1, 2).unwrap());
    let noise = NoiseSpec::new(1, 2, 1.0, 1.0, sigma).unwrap();
    let p = SchemeParams::new(g, tau, kappa, PotentialSpec::double_well(1.0).unwrap(), noise).unwrap();
    let oracle = common::DenseOracle { modes: 2, nodes: 4, kappa, tau, theta: 1.0, sigma };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut stream = RngStream::new(3, 0);
    let mut dense_worst: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let xf = SpectralField::from_coeffs(p.grid(), Array2::from_shape_vec((2, 1), x.clone()).unwrap()).unwrap();
        let mut state = SchemeState::initial(xf, &p).unwrap();
        state.r *= rng.random_range(0.5..1.5);
        let dw = sample_increment(&mut stream, p.noise(), tau).unwrap();
        let d = oracle.step(&x, state.r, dw.coeffs().as_slice().unwrap(), true);
        let (next, _) = step(&state, &dw, &p).unwrap();
        for j in 0..2 {
            dense_worst = dense_worst.max((next.x.coeffs()[(j, 0)] - d.x[j]).abs());
        }
        dense_worst = dense_worst.max((next.r - d.r).abs());
    }
    outcome(
        s.solve_worst <= 1e-12 && dense_worst <= 1e-13,
        format!("max solve residual / |w| = {:.2e}, max deviation from dense M=2 solve = {:.2e}", s.solve_worst, dense_worst),
    )
}

fn c4() -> Outcome {
    let g = Grid::new(GridSpec::dealiased(2, 8).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_gamma = f64::INFINITY;
    for i in 0..10_000u64 {
        let tau = 10f64.powf(rng.random_range(-6.0..0.0));
        let kappa = 10f64.powf(rng.random_range(-2.0..0.5));
        let amp = rng.random_range(0.0..5.0);
        let noise = NoiseSpec::standard(2, amp, Sigma::InvSqrt(rng.random_range(0.1..10.0))).unwrap();
        let pot = PotentialSpec::new(0.25, 0.0, -0.5, 1.0 / kappa, 1.0 / kappa).unwrap();
        let p = SchemeParams::new(g.clone(), tau, kappa, pot, noise).unwrap();
        let x = random_coeffs(p.grid(), &mut rng, 3.0);
        let mut state = SchemeState::initial(x, &p).unwrap();
        state.r *= rng.random_range(-2.0..2.0);
        let dw = sample_increment(&mut RngStream::new(4, i), p.noise(), tau).unwrap();
        let (_, d) = step(&state, &dw, &p).unwrap();
        min_gamma = min_gamma.min(d.gamma);
    }
    let noise = NoiseSpec::standard(2, 1.0, Sigma::InvSqrt(2.5)).unwrap();
    let p = SchemeParams::new(g, 1e-3, 1.0, PotentialSpec::double_well(1.0).unwrap(), noise).unwrap();
    let state = SchemeState::initial(SpectralField::zeros(p.grid()), &p).unwrap();
    let (_, d) = step(&state, &NoiseIncrement::zeros(p.noise(), 1e-3).unwrap(), &p).unwrap();
    let zero_b = d.b.coeffs().iter().all(|&v| v == 0.0);
    outcome(
        min_gamma >= 0.0 && zero_b && d.gamma == 0.0,
        format!("min gamma over 1e4 inputs = {min_gamma:.3e}, gamma at b = 0: {}", d.gamma),
    )
}

fn c5(t0: Instant) -> Outcome {
    let g = Grid::new(GridSpec::dealiased(2, 32).unwrap());
    let noise = NoiseSpec::standard(2, 0.0, Sigma::InvSqrt(2.5)).unwrap();
    let p = SchemeParams::new(g, 1e-3, 1.0, PotentialSpec::double_well(1.0).unwrap(), noise).unwrap();
    let x0 = InitialCondition::TwoMode.project(p.grid()).unwrap();
    let mut a = SchemeState::initial(x0, &p).unwrap();
    let mut b = a.clone();
    let mut stream = RngStream::new(5, 0);
    let (mut monotone, mut bitwise) = (true, true);
    let mut e = modified_energy(&a, &p);
    let e0 = e;
    for _ in 0..500 {
        let dw = sample_increment(&mut stream, p.noise(), p.tau()).unwrap();
        a = step(&a, &dw, &p).unwrap().0;
        b = standard_sav_step(&b, &dw, &p).unwrap().0;
        let e2 = modified_energy(&a, &p);
        monotone &= e2 <= e + 1e-12 * e.abs();
        bitwise &= a.x.coeffs() == b.x.coeffs() && a.r == b.r;
        e = e2;
    }
    outcome(
        monotone && bitwise && within(Duration::from_secs(30), t0.elapsed()),
        format!("E_mod {e0:.6} -> {e:.6}, nonincreasing: {monotone}, SSAV == standard bitwise: {bitwise}"),
    )
}

fn c6() -> Outcome {
    let d = doc("table1_desk");
    let s = d.study.as_ref().unwrap();
    let t = strong_error_study(&d.run_config().unwrap(), s.tau_grid.as_ref().unwrap(), s.tau_ref.unwrap()).unwrap();
    let slope = t.slope.unwrap_or(f64::NAN);
    let orders: Vec<String> = t.orders.iter().flatten().map(|o| format!("{o:.3}")).collect();
    outcome(
        (0.30..=0.70).contains(&slope),
        format!("errors [{}], per-interval orders [{}], least-squares order {slope:.4}", sci(&t.error_rms), orders.join(", ")),
    )
}

fn c7() -> Outcome {
    let d = doc("table2_desk");
    let s = d.study.as_ref().unwrap();
    let t = spatial_error_study(&d.run_config().unwrap(), s.mode_grid.as_ref().unwrap(), s.mode_ref.unwrap()).unwrap();
    let decreasing = t.error_rms.windows(2).all(|w| w[1] < 1.05 * w[0]);
    outcome(decreasing, format!("M {:?}: errors [{}]", s.mode_grid.as_ref().unwrap(), sci(&t.error_rms)))
}

fn c8() -> Outcome {
    let d = doc("ex_eps1_desk");
    let cfg = d.run_config().unwrap();
    let trace = averaged_energy_study(&cfg, &[Scheme::Ssav, Scheme::StandardSav, Scheme::Implicit], 10).unwrap();
    let ssav = &trace.get(Scheme::Ssav).unwrap().mean;
    let std = &trace.get(Scheme::StandardSav).unwrap().mean;
    let imp = &trace.get(Scheme::Implicit).unwrap().mean;
    let dev = |s: &[f64]| s.iter().zip(imp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (dev_ssav, dev_std) = (dev(ssav), dev(std));
    let n = ssav.len() - 1;
    outcome(
        dev_ssav <= 0.5 * dev_std && std[n] > ssav[n],
        format!(
            "max deviation from implicit: SSAV {dev_ssav:.4}, standard {dev_std:.4}; at T: SSAV {:.4}, standard {:.4}, implicit {:.4}",
            ssav[n], std[n], imp[n]
        ),
    )
}

fn c9() -> Outcome {
    let mut d = doc("ex_eps1");
    d.discretization.modes = 16;
    d.discretization.nodes = 32;
    d.discretization.tau = 1e-3;
    d.run.paths = 200;
    d.run.output_times.clear();
    let cfg = d.run_config().unwrap();
    let laws = energy_law_study(&cfg, &[4e-3, 2e-3, 1e-3]).unwrap();
    let cv: Vec<f64> = laws.iter().map(|(_, l)| *l.remainder_cv.last().unwrap()).collect();
    let cv_se: Vec<f64> = laws.iter().map(|(_, l)| *l.remainder_cv_stderr.last().unwrap()).collect();
    let raw: Vec<f64> = laws.iter().map(|(_, l)| *l.remainder.last().unwrap()).collect();
    let raw_se: Vec<f64> = laws.iter().map(|(_, l)| *l.remainder_stderr.last().unwrap()).collect();
    let decreasing = cv.windows(2).all(|w| w[1].abs() < w[0].abs());
    let fmt = |v: &[f64], s: &[f64]| v.iter().zip(s).map(|(a, b)| format!("{a:+.4}±{b:.4}")).collect::<Vec<_>>().join(", ");
    outcome(
        decreasing,
        format!(
            "tau [4e-3, 2e-3, 1e-3] at T={}: remainder {} (plain mean: {})",
            cfg.final_time,
            fmt(&cv, &cv_se),
            fmt(&raw, &raw_se)
        ),
    )
}

fn c10() -> Outcome {
    let mut d = doc("sharp_gamma1_desk");
    d.model.amplitude = 0.0;
    let cfg = d.run_config().unwrap();
    let p = &cfg.params;
    let h = 1.0 / (p.grid().nodes() + 1) as f64;
    let x0 = cfg.initial.project(p.grid()).unwrap();
    let ls0 = extract_zero_level_set(&x0.to_nodal(), 0.0).unwrap();
    let r0 = ls0.mean_radius([0.5, 0.5]).unwrap_or(f64::NAN);
    let mut state = SchemeState::initial(x0, p).unwrap();
    let zero = NoiseIncrement::zeros(p.noise(), p.tau()).unwrap();
    for _ in 0..cfg.num_steps().unwrap() {
        state = step(&state, &zero, p).unwrap().0;
    }
    let ls = extract_zero_level_set(&state.x.to_nodal(), cfg.final_time).unwrap();
    let single_closed = ls.polylines.len() == 1 && ls.polylines[0].closed;
    let r1 = ls.mean_radius([0.5, 0.5]).unwrap_or(f64::NAN);
    outcome(
        (r0 - 0.25).abs() <= 2.0 * h && single_closed,
        format!(
            "t=0 mean radius {r0:.5} (tolerance {:.5}); T={}: {} curve(s), closed {}, mean radius {r1:.5}",
            2.0 * h,
            cfg.final_time,
            ls.polylines.len(),
            single_closed
        ),
    )
}

fn c11(t0: Instant) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for (dim, m) in [(1, 8), (1, 64), (2, 8), (2, 16), (2, 32), (2, 64)] {
        let g = Grid::new(GridSpec::dealiased(dim, m).unwrap());
        for _ in 0..10 {
            let f = random_coeffs(&g, &mut rng, 2.0);
            let n = f.l2_norm();
            worst = worst.max(f.to_nodal().to_spectral().sub(&f).unwrap().l2_norm() / (1.0 + n));
            let quad = f.to_nodal().values().iter().map(|v| v * v).sum::<f64>() * g.spec().cell_volume();
            worst = worst.max((quad - n * n).abs() / (1.0 + n * n));
            let two = f.apply_semigroup(0.7, 2e-4).unwrap().apply_semigroup(0.7, 3e-4).unwrap();
            worst = worst.max(two.sub(&f.apply_semigroup(0.7, 5e-4).unwrap()).unwrap().l2_norm() / (1.0 + n));
            let frac = f.apply_fractional_power(0.5).unwrap().apply_fractional_power(-1.5).unwrap();
            let direct = f.apply_fractional_power(-1.0).unwrap();
            worst = worst.max(frac.sub(&direct).unwrap().l2_norm() / (1.0 + direct.l2_norm()));
        }
    }
    let t = t0.elapsed();
    outcome(worst <= 1e-12 && within(Duration::from_secs(5), t), format!("max relative deviation {worst:.2e}"))
}

fn report(n: usize, name: &str, start: Instant, o: Outcome, failures: &mut Vec<usize>) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {status} {name}: {} [{:.1} s]", o.detail, start.elapsed().as_secs_f64());
    if !o.pass {
        failures.push(n);
    }
}

fn main() {
    // honour `cargo test -- --list` and filters without running the slow studies
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failures = Vec::new();

    let t = Instant::now();
    let s = sweep();
    let sweep_time = t.elapsed();
    report(1, "SAV identity", t, c1(&s, sweep_time), &mut failures);
    report(2, "per-step energy identity", t, c2(&s), &mut failures);
    let t3 = Instant::now();
    report(3, "explicit solve", t3, c3(&s), &mut failures);
    let t = Instant::now();
    report(4, "gamma nonnegative", t, c4(), &mut failures);
    let t = Instant::now();
    report(5, "deterministic dissipation", t, c5(t), &mut failures);
    let t = Instant::now();
    report(6, "temporal strong order", t, c6(), &mut failures);
    let t = Instant::now();
    report(7, "spatial refinement", t, c7(), &mut failures);
    let t = Instant::now();
    report(8, "averaged energy", t, c8(), &mut failures);
    let t = Instant::now();
    report(9, "energy-law remainder", t, c9(), &mut failures);
    let t = Instant::now();
    report(10, "interface geometry", t, c10(), &mut failures);
    let t = Instant::now();
    report(11, "spectral suite", t, c11(t), &mut failures);

    if failures.is_empty() {
        println!("acceptance: all 11 criteria passed");
    } else {
        println!("acceptance: failed criteria {failures:?}");
        std::process::exit(1);
    }
}
