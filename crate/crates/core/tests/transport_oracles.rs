use aplg::transport::{
    big_d, coefficient_table, d_s, estimate_ds_msd, mobility, s, MsdConfig, GAMMA,
};

#[test]
fn derived_coefficients_stay_in_range() {
    for i in 0..=2000 {
        let a = i as f64 / 2000.0;
        let (dd, ss) = (big_d(a).unwrap(), s(a).unwrap());
        assert!(
            (1.0 - 1e-14..=1.0 + GAMMA + 1e-14).contains(&dd),
            "D({a}) = {dd}"
        );
        assert!((-1e-14..=GAMMA + 1e-14).contains(&ss), "s({a}) = {ss}");
        assert!(d_s(a).unwrap() >= 0.0);
    }
}

#[test]
fn table_rows_agree_with_free_functions() {
    let rows = coefficient_table(51).unwrap();
    assert_eq!(rows.len(), 51);
    for r in rows {
        assert_eq!(r[1], d_s(r[0]).unwrap());
        assert_eq!(r[2], big_d(r[0]).unwrap());
        assert_eq!(r[3], s(r[0]).unwrap());
    }
}

#[test]
fn mobility_is_positive_semidefinite() {
    for (a, p) in [
        (0.1, 0.1),
        (0.3, 0.2),
        (0.05, 0.9),
        (0.5, 0.0),
        (0.45, 0.55),
    ] {
        let m = mobility(a, p).unwrap();
        let ev = m.dense().symmetric_eigenvalues();
        assert!(ev.iter().all(|&e| e >= -1e-14), "({a}, {p}): {ev:?}");
        // the total current has mobility α(1 − α)
        let total = m.aa + 2.0 * m.ap + m.pp;
        assert!((total - (a + p) * (1.0 - a - p)).abs() < 1e-14);
    }
}

#[test]
fn lone_tagged_particle_calibrates_to_one() {
    let est = estimate_ds_msd(&MsdConfig {
        alpha: 0.0,
        side: 64,
        t_max: 200.0,
        checkpoints: 4,
        replicas: 2000,
        seed: 5,
    })
    .unwrap();
    for p in &est.points {
        assert!(
            (p.d_hat - 1.0).abs() < 4.0 * p.d_hat_stderr,
            "t={}: {} ± {}",
            p.t,
            p.d_hat,
            p.d_hat_stderr
        );
    }
}
