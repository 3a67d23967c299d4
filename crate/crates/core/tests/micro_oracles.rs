use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aplg::angular::AngularFn;
use aplg::micro::{
    build_generator, canonical_expectation, ensemble_discrepancy, grand_canonical_inner_products,
    spectral_gap, variance_vs_dirichlet, CanonicalState, Observable,
};
use aplg::sampling::GrandCanonicalParams;

#[test]
fn lanczos_gap_matches_dense_spectrum() {
    for (ta, tp) in [(vec![0.3, 2.1], vec![4.0]), (vec![1.0], vec![1.0, 5.0])] {
        let cs = CanonicalState::new(1, ta, tp).unwrap();
        let gm = build_generator(&cs).unwrap();
        assert!(gm.is_symmetric());
        let mut ev: Vec<f64> = SymmetricEigen::new(gm.dense())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        assert!(
            ev[0].abs() < 1e-10 && ev[1] > 1e-6,
            "connected hyperplane has a simple zero: {:?}",
            &ev[..3]
        );
        let gap = spectral_gap(&gm).unwrap().gap;
        assert!((gap - ev[1]).abs() < 1e-8, "{gap} vs {}", ev[1]);
    }
}

#[test]
fn dirichlet_form_is_the_generator_quadratic_form() {
    let cs = CanonicalState::new(1, vec![0.5], vec![2.0, 3.0]).unwrap();
    let gm = build_generator(&cs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f: Vec<f64> = (0..gm.len()).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut lf = vec![0.0; gm.len()];
    gm.apply(&f, &mut lf);
    let quad = gm.enumeration.inner(&f, &lf);
    assert!((gm.dirichlet(&f) - quad).abs() < 1e-12 * quad.abs().max(1.0));
}

#[test]
fn poincare_inequality_bounds_random_functions() {
    let cs = CanonicalState::new(2, vec![0.3, 2.1], vec![4.0]).unwrap();
    let gm = build_generator(&cs).unwrap();
    let gap = spectral_gap(&gm).unwrap().gap;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let f: Vec<f64> = (0..gm.len()).map(|_| rng.gen::<f64>()).collect();
        let r = variance_vs_dirichlet(&gm, &f).unwrap();
        assert!(r <= (1.0 + 1e-9) / gap, "{r} > 1/{gap}");
    }
}

#[test]
fn pair_correlation_is_hypergeometric() {
    for (l, k) in [(1, 3), (2, 4)] {
        let cs = CanonicalState::new(l, vec![], vec![0.7; k]).unwrap();
        let v = cs.volume() as f64;
        let g = Observable::eta((0, 0)) * Observable::eta((1, 0));
        let exact = (k * (k - 1)) as f64 / (v * (v - 1.0));
        assert!((canonical_expectation(&cs, &g).unwrap() - exact).abs() < 1e-14);
    }
}

#[test]
fn ensembles_agree_as_the_box_grows() {
    let g = Observable::eta((0, 0)) * Observable::eta((1, 0)) * Observable::eta((0, 1));
    let mut last = f64::INFINITY;
    for (l, k) in [(1, 1), (2, 3), (3, 5)] {
        let cs = CanonicalState::new(l, vec![], vec![1.2; k]).unwrap();
        let d = ensemble_discrepancy(&cs, &g).unwrap();
        assert!(d < last, "l={l}: {d} not below {last}");
        last = d;
    }
}

#[test]
fn inner_products_with_higher_harmonic() {
    let gc = GrandCanonicalParams::uniform(0.4, 0.25).unwrap();
    let omega = AngularFn::Fourier { m: 2, phase: 0.3 };
    let rows = grand_canonical_inner_products(&gc, &omega, 200_000, 41).unwrap();
    assert_eq!(rows.len(), 128);
    for r in &rows {
        assert!(
            r.z().abs() < 4.5,
            "{} {} {}{}: {} vs {} ± {}",
            r.first,
            r.second,
            r.i,
            r.k,
            r.estimate,
            r.closed,
            r.stderr
        );
    }
    let full = GrandCanonicalParams::uniform(0.6, 0.4).unwrap();
    for r in grand_canonical_inner_products(&full, &omega, 0, 0).unwrap() {
        assert_eq!(r.estimate, r.closed);
    }
}
