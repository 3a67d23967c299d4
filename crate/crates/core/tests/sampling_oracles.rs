use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use aplg::lattice::{LatticeIndex, Species, Tag};
use aplg::sampling::{
    mollified_fields, sample_grand_canonical, sample_initial, DensityProfile, GrandCanonicalParams,
};

fn chi2_critical(df: usize) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(0.999)
}

#[test]
fn constant_profile_counts_are_binomial() {
    let profile: DensityProfile = "constant:rho_a=0.3,rho_p=0.15".parse().unwrap();
    let n = 64;
    let sites = (n * n) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut sa, mut sp) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        let (a, p) = sample_initial(&profile, n, &mut rng).unwrap().recount();
        sa.push(a as f64);
        sp.push(p as f64);
    }
    for (v, rho) in [(sa, 0.3), (sp, 0.15)] {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (sites * rho * (1.0 - rho)).sqrt();
        let z = (mean - sites * rho) / (sd / (v.len() as f64).sqrt());
        assert!(
            z.abs() < 4.0,
            "count mean {mean} vs {} (z {z})",
            sites * rho
        );
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        assert!(
            (var / (sd * sd) - 1.0).abs() < 0.35,
            "count variance {var} vs {}",
            sd * sd
        );
    }
}

#[test]
fn angular_marginal_passes_chi_square() {
    let (b, m, psi) = (0.6, 2u32, 0.4);
    let profile: DensityProfile = format!("constant:rho_a=0.5,b_a={b},m_a={m},psi_a={psi}")
        .parse()
        .unwrap();
    let bins = 24;
    let mut counts = vec![0.0; bins];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let c = sample_initial(&profile, 64, &mut rng).unwrap();
        for s in c.sites().iter().filter(|s| s.tag() == Tag::Active) {
            counts[((s.angle() / TAU * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let cdf = |t: f64| (t + b * (m as f64 * (t - psi)).sin() / m as f64) / TAU;
    let chi2: f64 = (0..bins)
        .map(|k| {
            let lo = k as f64 * TAU / bins as f64;
            let hi = lo + TAU / bins as f64;
            let expected = total * (cdf(hi) - cdf(lo));
            (counts[k] - expected).powi(2) / expected
        })
        .sum();
    assert!(chi2 < chi2_critical(bins - 1), "chi2 {chi2}");
}

#[test]
fn fourier_profile_column_frequencies() {
    let profile: DensityProfile = "fourier:rho_a=0.3,rho_p=0.2,amp=0.5,k1=1,k2=0,phase=0.7"
        .parse()
        .unwrap();
    let n = 32;
    let reps = 300;
    let mut freq = vec![[0.0f64; 2]; n];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..reps {
        let c = sample_initial(&profile, n, &mut rng).unwrap();
        for (i, s) in c.sites().iter().enumerate() {
            match s.species() {
                Some(Species::Active) => freq[i % n][0] += 1.0,
                Some(Species::Passive) => freq[i % n][1] += 1.0,
                None => {}
            }
        }
    }
    let trials = (reps * n) as f64;
    for (x, f) in freq.iter().enumerate() {
        let shape = 1.0 + 0.5 * (TAU * x as f64 / n as f64 + 0.7).cos();
        for (j, mass) in [0.3, 0.2].into_iter().enumerate() {
            let p = mass * shape;
            let z = (f[j] / trials - p) / (p * (1.0 - p) / trials).sqrt();
            assert!(
                z.abs() < 4.5,
                "column {x} species {j}: {} vs {p}",
                f[j] / trials
            );
        }
    }
}

#[test]
fn grand_canonical_site_law() {
    let gc = GrandCanonicalParams::uniform(0.25, 0.35).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = sample_grand_canonical(&gc, 128, &mut rng).unwrap();
    let sites = 128.0 * 128.0;
    let (a, p) = c.recount();
    let observed = [a as f64, p as f64, sites - (a + p) as f64];
    let expected = [0.25 * sites, 0.35 * sites, 0.4 * sites];
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    assert!(chi2 < chi2_critical(2), "chi2 {chi2}");
    let mean_cos = c
        .sites()
        .iter()
        .filter(|s| s.is_occupied())
        .map(|s| s.angle().cos())
        .sum::<f64>()
        / (a + p) as f64;
    assert!(mean_cos.abs() < 4.0 / ((2 * (a + p)) as f64).sqrt());
}

#[test]
fn mollified_fields_match_direct_box_sums() {
    let gc = GrandCanonicalParams::uniform(0.3, 0.3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let c = sample_grand_canonical(&gc, 16, &mut rng).unwrap();
    let (eps, ntheta) = (0.15, 4);
    let f = mollified_fields(&c, eps, ntheta).unwrap();
    let l = 2i64;
    let norm = ((2 * l + 1) * (2 * l + 1)) as f64;
    let n = 16i64;
    for y in 0..n {
        for x in 0..n {
            let (mut ra, mut rp, mut px, mut ha) = (0.0, 0.0, 0.0, vec![0.0; ntheta]);
            for dy in -l..=l {
                for dx in -l..=l {
                    let s = c.get(LatticeIndex::wrapped(
                        (x + dx) as isize,
                        (y + dy) as isize,
                        16,
                    ));
                    match s.tag() {
                        Tag::Active => {
                            ra += 1.0;
                            px += s.angle().cos();
                            ha[((s.angle() / (TAU / ntheta as f64)) as usize).min(ntheta - 1)] +=
                                1.0;
                        }
                        Tag::Passive => rp += 1.0,
                        Tag::Empty => {}
                    }
                }
            }
            let cell = (y * n + x) as usize;
            assert!((f.rho_a[cell] - ra / norm).abs() < 1e-12);
            assert!((f.rho_p[cell] - rp / norm).abs() < 1e-12);
            assert!((f.px[cell] - px / norm).abs() < 1e-12);
            for k in 0..ntheta {
                assert!((f.hist_a[cell * ntheta + k] - ha[k] / norm).abs() < 1e-12);
            }
        }
    }
}
