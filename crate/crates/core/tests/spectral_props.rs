use ndarray::Array2;
use proptest::prelude::*;
use ssav_ch::forcing::{apply_diffusion, sample_increment, NoiseSpec, RngStream, Sigma};
use ssav_ch::spectral::{Grid, GridRef, GridSpec, NodalField, SpectralField};

fn field(grid: &GridRef, raw: &[f64]) -> SpectralField {
    let (a, b) = grid.spec().spectral_shape();
    let c = Array2::from_shape_fn((a, b), |(i, j)| raw[(i * b + j) % raw.len()] / (1.0 + (i + j) as f64));
    SpectralField::from_coeffs(grid, c).unwrap()
}

fn grids() -> impl Strategy<Value = GridRef> {
    prop_oneof![
        (1usize..=24).prop_map(|m| Grid::new(GridSpec::dealiased(1, m).unwrap())),
        (1usize..=12).prop_map(|m| Grid::new(GridSpec::dealiased(2, m).unwrap())),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nodal_round_trip(g in grids(), raw in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        let f = field(&g, &raw);
        let back = f.to_nodal().to_spectral();
        prop_assert!(back.sub(&f).unwrap().l2_norm() <= 1e-12 * (1.0 + f.l2_norm()));
    }

    #[test]
    fn parseval(g in grids(), raw in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        let f = field(&g, &raw);
        let n = f.to_nodal();
        let quad = n.values().iter().map(|v| v * v).sum::<f64>() * g.spec().cell_volume();
        let spec = f.l2_norm().powi(2);
        prop_assert!((quad - spec).abs() <= 1e-12 * (1.0 + spec));
    }

    #[test]
    fn semigroup_composes(
        g in grids(),
        raw in prop::collection::vec(-3.0f64..3.0, 1..40),
        t1 in 0.0f64..1e-3,
        t2 in 0.0f64..1e-3,
        kappa in 0.01f64..2.0,
    ) {
        let f = field(&g, &raw);
        let two = f.apply_semigroup(kappa, t1).unwrap().apply_semigroup(kappa, t2).unwrap();
        let one = f.apply_semigroup(kappa, t1 + t2).unwrap();
        prop_assert!(two.sub(&one).unwrap().l2_norm() <= 1e-12 * (1.0 + f.l2_norm()));
        prop_assert!(one.l2_norm() <= f.l2_norm() * (1.0 + 1e-15));
    }

    #[test]
    fn fractional_powers_compose(
        g in grids(),
        raw in prop::collection::vec(-3.0f64..3.0, 1..40),
        a in -1.5f64..1.0,
        b in -1.5f64..1.0,
    ) {
        let f = field(&g, &raw);
        let two = f.apply_fractional_power(a).unwrap().apply_fractional_power(b).unwrap();
        let one = f.apply_fractional_power(a + b).unwrap();
        let scale = 1.0 + one.l2_norm();
        prop_assert!(two.sub(&one).unwrap().l2_norm() <= 1e-12 * scale);
    }

    #[test]
    fn inner_product_symmetric(g in grids(), raw in prop::collection::vec(-3.0f64..3.0, 2..40)) {
        let f = field(&g, &raw);
        let h = field(&g, &raw[1..]);
        prop_assert_eq!(f.inner(&h).unwrap(), h.inner(&f).unwrap());
    }

    #[test]
    fn diffusion_bounded_by_sigma_sup(
        m in 4usize..=10,
        raw in prop::collection::vec(-3.0f64..3.0, 1..40),
        seed in any::<u64>(),
        c in 0.1f64..5.0,
    ) {
        let g = Grid::new(GridSpec::dealiased(2, m).unwrap());
        let x = field(&g, &raw);
        for sigma in [Sigma::Constant(c), Sigma::InvSqrt(c), Sigma::Cosine(c)] {
            let spec = NoiseSpec::standard(2, 1.0, sigma).unwrap();
            let dw = sample_increment(&mut RngStream::new(seed, 0), &spec, 1e-3).unwrap();
            let gdw = apply_diffusion(&x, &dw, &spec).unwrap();
            // ‖P(σ w)‖ ≤ ‖σ w‖_h ≤ sup|σ| ‖w‖_h on the nodes
            let w = NodalField::from_values(&g, g.synthesize(dw.embed(&g).coeffs())).unwrap();
            let wn = (w.values().iter().map(|v| v * v).sum::<f64>() * g.spec().cell_volume()).sqrt();
            prop_assert!(gdw.l2_norm() <= sigma.sup() * wn * (1.0 + 1e-12));
        }
    }
}

#[test]
fn single_mode_matches_closed_form() {
    let g = Grid::new(GridSpec::dealiased(2, 6).unwrap());
    let f = SpectralField::mode(&g, &[2, 3], 1.0).unwrap();
    let n = f.to_nodal();
    let h = g.spec().spacing();
    let s = std::f64::consts::PI;
    for (i, row) in n.values().outer_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let x = (i + 1) as f64 * h;
            let y = (j + 1) as f64 * h;
            let exact = 2.0 * (2.0 * s * x).sin() * (3.0 * s * y).sin();
            assert!((v - exact).abs() < 1e-13);
        }
    }
    assert!((g.eigenvalue(&[2, 3]).unwrap() - 13.0 * s * s).abs() < 1e-12);
}

#[test]
fn resample_preserves_shared_modes() {
    let small = Grid::new(GridSpec::dealiased(2, 4).unwrap());
    let big = Grid::new(GridSpec::dealiased(2, 9).unwrap());
    let f = field(&small, &[0.3, -1.2, 0.7, 2.0, -0.4]);
    let up = f.resample(&big).unwrap();
    assert_eq!(up.l2_norm(), f.l2_norm());
    assert_eq!(up.resample(&small).unwrap().coeffs(), f.coeffs());
}
