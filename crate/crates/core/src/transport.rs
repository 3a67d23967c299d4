//! Self-diffusion coefficient, the derived coefficients 𝒟 and s, the
//! mobility matrix, and a Monte-Carlo estimate of the self-diffusion
//! coefficient from tagged-particle displacements.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Matrix4;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// `π/2 − 1`.
pub const GAMMA: f64 = FRAC_PI_2 - 1.0;

/// Below this density `𝒟` is evaluated from its expansion instead of the quotient.
pub const ALPHA_TINY: f64 = 1e-8;

/// The cubic self-diffusion approximation and the coefficients built on it.
///
/// Methods are unchecked and extend the polynomials past `[0, 1]`, which the
/// PDE solver relies on for tiny transient overshoots. The free functions
/// [`d_s`], [`big_d`] and [`s`] validate their argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    pub gamma: f64,
    /// Quadratic coefficient `γ(2γ−1)/(2γ+1)`.
    pub c: f64,
}

impl Default for CoefficientSet {
    fn default() -> Self {
        Self::cubic()
    }
}

impl CoefficientSet {
    pub fn cubic() -> Self {
        let g = GAMMA;
        Self {
            gamma: g,
            c: g * (2.0 * g - 1.0) / (2.0 * g + 1.0),
        }
    }

    #[inline]
    pub fn ds(&self, a: f64) -> f64 {
        (1.0 - a) * (1.0 - self.gamma * a + self.c * a * a)
    }

    #[inline]
    pub fn ds_prime(&self, a: f64) -> f64 {
        -(1.0 + self.gamma) + 2.0 * (self.gamma + self.c) * a - 3.0 * self.c * a * a
    }

    #[inline]
    pub fn big_d(&self, a: f64) -> f64 {
        if a.abs() > ALPHA_TINY {
            (1.0 - self.ds(a)) / a
        } else {
            (1.0 + self.gamma) - (self.gamma + self.c) * a + self.c * a * a
        }
    }

    #[inline]
    pub fn s(&self, a: f64) -> f64 {
        self.big_d(a) - 1.0
    }
}

fn check_density(alpha: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(alpha)
    } else {
        Err(Error::DensityOutOfRange { value: alpha })
    }
}

/// Self-diffusion coefficient of a tagged particle at density `alpha`.
pub fn d_s(alpha: f64) -> Result<f64> {
    Ok(CoefficientSet::cubic().ds(check_density(alpha)?))
}

pub fn d_s_prime(alpha: f64) -> Result<f64> {
    Ok(CoefficientSet::cubic().ds_prime(check_density(alpha)?))
}

/// `𝒟(α) = (1 − d_s(α))/α`, continuously extended to `α = 0`.
pub fn big_d(alpha: f64) -> Result<f64> {
    Ok(CoefficientSet::cubic().big_d(check_density(alpha)?))
}

/// `s(α) = 𝒟(α) − 1`.
pub fn s(alpha: f64) -> Result<f64> {
    Ok(CoefficientSet::cubic().s(check_density(alpha)?))
}

/// Rows `(α, d_s, 𝒟, s)` on `points` uniformly spaced densities in `[0, 1]`.
pub fn coefficient_table(points: usize) -> Result<Vec<[f64; 4]>> {
    if points < 2 {
        return Err(Error::invalid(
            "coefficient table needs at least two points",
        ));
    }
    let cs = CoefficientSet::cubic();
    Ok((0..points)
        .map(|i| {
            let a = i as f64 / (points - 1) as f64;
            [a, cs.ds(a), cs.big_d(a), cs.s(a)]
        })
        .collect())
}

/// Mobility matrix, stored as the coefficients of its 2×2 identity blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MobilityMatrix {
    pub aa: f64,
    pub ap: f64,
    pub pp: f64,
}

impl MobilityMatrix {
    /// Full 4×4 matrix ordered `(a₁, a₂, p₁, p₂)`.
    pub fn dense(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        for k in 0..2 {
            m[(k, k)] = self.aa;
            m[(k, k + 2)] = self.ap;
            m[(k + 2, k)] = self.ap;
            m[(k + 2, k + 2)] = self.pp;
        }
        m
    }
}

pub fn mobility(alpha_a: f64, alpha_p: f64) -> Result<MobilityMatrix> {
    if !(alpha_a >= 0.0 && alpha_p >= 0.0) {
        return Err(Error::invalid(format!(
            "negative densities ({alpha_a}, {alpha_p})"
        )));
    }
    let alpha = alpha_a + alpha_p;
    if alpha == 0.0 {
        return Err(Error::invalid("mobility is undefined at total density 0"));
    }
    check_density(alpha)?;
    let ds = CoefficientSet::cubic().ds(alpha);
    let cross = alpha_a * alpha_p / alpha * ds;
    let free = (1.0 - alpha) / alpha;
    Ok(MobilityMatrix {
        aa: cross + alpha_a * alpha_a * free,
        ap: -cross + alpha_a * alpha_p * free,
        pp: cross + alpha_p * alpha_p * free,
    })
}

/// Settings for [`estimate_ds_msd`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsdConfig {
    pub alpha: f64,
    pub side: usize,
    /// Horizon in units where every particle attempts each of its four jumps at rate 1.
    pub t_max: f64,
    /// Number of uniformly spaced checkpoints ending at `t_max`.
    pub checkpoints: usize,
    pub replicas: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsdPoint {
    pub t: f64,
    pub msd_mean: f64,
    pub msd_stderr: f64,
    pub d_hat: f64,
    pub d_hat_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsdEstimate {
    pub alpha: f64,
    pub replicas: usize,
    pub points: Vec<MsdPoint>,
}

impl MsdEstimate {
    /// `(d̂_s, stderr)` at the final checkpoint.
    pub fn final_estimate(&self) -> (f64, f64) {
        let p = self.points.last().expect("at least one checkpoint");
        (p.d_hat, p.d_hat_stderr)
    }
}

/// Estimate `d_s(α)` from mean-squared displacements in the symmetric
/// exclusion process.
///
/// Each replica samples a product configuration at density `alpha` on the
/// `side × side` torus with a particle forced at the origin, runs the
/// exclusion process with rate 1 per directed edge, and records unwrapped
/// displacements. Particles are exchangeable, so every particle is used as a
/// tagged particle and the replica value is the average `|X_t|²` over all of
/// them; the standard error is taken across replicas. A free walker has
/// `E|X_t|² = 4t`, so `d̂_s = E|X_t|²/(4t)` is calibrated to 1 at `α = 0`.
pub fn estimate_ds_msd(cfg: &MsdConfig) -> Result<MsdEstimate> {
    if !(0.0..1.0).contains(&cfg.alpha) {
        return Err(if cfg.alpha == 1.0 {
            Error::invalid("tagged particle cannot move at density 1")
        } else {
            Error::DensityOutOfRange { value: cfg.alpha }
        });
    }
    if cfg.side < 2 || cfg.side > u16::MAX as usize {
        return Err(Error::invalid(format!(
            "torus side {} out of range",
            cfg.side
        )));
    }
    if !(cfg.t_max > 0.0 && cfg.t_max.is_finite()) || cfg.checkpoints == 0 || cfg.replicas < 2 {
        return Err(Error::invalid(
            "need t_max > 0, at least one checkpoint and two replicas",
        ));
    }
    let per_replica: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            msd_replica(cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    let r = cfg.replicas as f64;
    let points = (0..cfg.checkpoints)
        .map(|k| {
            let t = cfg.t_max * (k + 1) as f64 / cfg.checkpoints as f64;
            let mean = per_replica.iter().map(|v| v[k]).sum::<f64>() / r;
            let var = per_replica
                .iter()
                .map(|v| (v[k] - mean).powi(2))
                .sum::<f64>()
                / (r - 1.0);
            let se = (var / r).sqrt();
            MsdPoint {
                t,
                msd_mean: mean,
                msd_stderr: se,
                d_hat: mean / (4.0 * t),
                d_hat_stderr: se / (4.0 * t),
            }
        })
        .collect();
    Ok(MsdEstimate {
        alpha: cfg.alpha,
        replicas: cfg.replicas,
        points,
    })
}

fn msd_replica(cfg: &MsdConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let l = cfg.side;
    let mut occ = vec![0u32; l * l];
    let mut pos: Vec<(u16, u16)> = Vec::new();
    for i in 0..l * l {
        if i == 0 || rng.gen::<f64>() < cfg.alpha {
            pos.push(((i % l) as u16, (i / l) as u16));
            occ[i] = pos.len() as u32;
        }
    }
    let m = pos.len();
    let mut disp = vec![(0i32, 0i32); m];
    let mut out = Vec::with_capacity(cfg.checkpoints);
    let dt = cfg.t_max / cfg.checkpoints as f64;
    let attempts = Poisson::new(4.0 * m as f64 * dt).map_err(|e| Error::invalid(e.to_string()))?;
    let last = (l - 1) as u16;
    for _ in 0..cfg.checkpoints {
        let count = attempts.sample(rng) as u64;
        for _ in 0..count {
            let r = rng.next_u64();
            let p = (((r >> 32) * m as u64) >> 32) as usize;
            let (x, y) = pos[p];
            let (nx, ny, dx, dy) = match r & 3 {
                0 => (if x == last { 0 } else { x + 1 }, y, 1, 0),
                1 => (if x == 0 { last } else { x - 1 }, y, -1, 0),
                2 => (x, if y == last { 0 } else { y + 1 }, 0, 1),
                _ => (x, if y == 0 { last } else { y - 1 }, 0, -1),
            };
            let target = ny as usize * l + nx as usize;
            if occ[target] == 0 {
                occ[target] = p as u32 + 1;
                occ[y as usize * l + x as usize] = 0;
                pos[p] = (nx, ny);
                disp[p].0 += dx;
                disp[p].1 += dy;
            }
        }
        let sq: f64 = disp
            .iter()
            .map(|&(a, b)| (a as f64).powi(2) + (b as f64).powi(2))
            .sum();
        out.push(sq / m as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_examples() {
        assert_eq!(d_s(0.0).unwrap(), 1.0);
        assert_eq!(d_s(1.0).unwrap(), 0.0);
        assert!((d_s(0.5).unwrap() - 0.3620).abs() < 5e-5);
        assert_eq!(big_d(1.0).unwrap(), 1.0);
        assert!((big_d(0.0).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(s(1.0).unwrap(), 0.0);
        assert!(d_s(1.1).is_err() && big_d(-0.1).is_err());
    }

    #[test]
    fn big_d_is_continuous_at_switch() {
        let cs = CoefficientSet::cubic();
        let below = cs.big_d(ALPHA_TINY);
        let above = cs.big_d(ALPHA_TINY * (1.0 + 1e-6));
        assert!((below - above).abs() < 1e-7);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let cs = CoefficientSet::cubic();
        for i in 1..20 {
            let a = i as f64 / 20.0;
            let h = 1e-6;
            let fd = (cs.ds(a + h) - cs.ds(a - h)) / (2.0 * h);
            assert!((fd - cs.ds_prime(a)).abs() < 1e-8);
        }
    }

    #[test]
    fn mobility_examples() {
        let m = mobility(0.4, 0.0).unwrap();
        assert!((m.aa - 0.4 * 0.6).abs() < 1e-15);
        let m1 = mobility(0.3, 0.2).unwrap();
        let m2 = mobility(0.2, 0.3).unwrap();
        assert!((m1.aa - m2.pp).abs() < 1e-15 && (m1.pp - m2.aa).abs() < 1e-15);
        assert!((m1.ap - m2.ap).abs() < 1e-15);
        assert!(mobility(0.0, 0.0).is_err());
        assert!(mobility(0.7, 0.5).is_err());
        let d = m1.dense();
        assert_eq!(d, d.transpose());
    }

    #[test]
    fn msd_rejects_full_density() {
        let cfg = MsdConfig {
            alpha: 1.0,
            side: 8,
            t_max: 1.0,
            checkpoints: 1,
            replicas: 2,
            seed: 0,
        };
        assert!(estimate_ds_msd(&cfg).is_err());
    }

    #[test]
    fn msd_is_deterministic() {
        let cfg = MsdConfig {
            alpha: 0.3,
            side: 16,
            t_max: 5.0,
            checkpoints: 2,
            replicas: 4,
            seed: 11,
        };
        assert_eq!(
            estimate_ds_msd(&cfg).unwrap(),
            estimate_ds_msd(&cfg).unwrap()
        );
    }
}
