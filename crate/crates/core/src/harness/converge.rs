//! The hydrodynamic convergence experiment: KMC replicas against one PDE
//! solution from the same initial profile.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::emit::OutputDir;
use crate::error::{Error, Result};
use crate::kmc::Simulation;
use crate::lattice::Species;
use crate::pde::{
    box_average, moments, weak_residual_empirical, FieldState, PdeGrid, PdeSolver, TestFunction,
};
use crate::sampling::{mollified_fields_on, mollifier_radius, sample_initial, EmpiricalField};

/// L¹ distance between mollified empirical and PDE densities at one frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRow {
    pub n: usize,
    pub eps: f64,
    pub frame: usize,
    pub t: f64,
    pub species: Species,
    pub replicas: usize,
    pub seed: u64,
    /// Mean over replicas of the per-replica cell-averaged `|ρ_emp − ρ_pde|`.
    pub l1_mean: f64,
    pub l1_stderr: f64,
    /// Cell-averaged `|mean_r ρ_emp − ρ_pde|`.
    pub l1_of_mean: f64,
}

/// Replica statistics of the empirical weak residual for one test function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub n: usize,
    pub eps: f64,
    pub test_function: String,
    pub species: Species,
    pub replicas: usize,
    pub seed: u64,
    pub residual_mean: f64,
    pub residual_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ConvergenceReport {
    pub distances: Vec<DistanceRow>,
    pub residuals: Vec<ResidualRow>,
}

pub const DISTANCE_HEADER: [&str; 10] = [
    "n",
    "eps",
    "frame",
    "t",
    "species",
    "replicas",
    "seed",
    "l1_mean",
    "l1_stderr",
    "l1_of_mean",
];
pub const RESIDUAL_HEADER: [&str; 8] = [
    "n",
    "eps",
    "test_function",
    "species",
    "replicas",
    "seed",
    "residual_mean",
    "residual_stderr",
];

impl ConvergenceReport {
    pub fn distance(&self, n: usize, eps: f64, frame: usize, s: Species) -> Option<&DistanceRow> {
        self.distances
            .iter()
            .find(|r| r.n == n && r.eps == eps && r.frame == frame && r.species == s)
    }

    pub fn residual(
        &self,
        n: usize,
        eps: f64,
        test_function: &str,
        s: Species,
    ) -> Option<&ResidualRow> {
        self.residuals.iter().find(|r| {
            r.n == n && r.eps == eps && r.test_function == test_function && r.species == s
        })
    }

    /// `convergence_distances.csv` and `convergence_residuals.csv`; nothing for an empty report.
    pub fn write(&self, out: &mut OutputDir) -> Result<()> {
        if !self.distances.is_empty() {
            let rows: Vec<Vec<String>> = self
                .distances
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        r.eps.to_string(),
                        r.frame.to_string(),
                        r.t.to_string(),
                        r.species.label().to_string(),
                        r.replicas.to_string(),
                        r.seed.to_string(),
                        r.l1_mean.to_string(),
                        r.l1_stderr.to_string(),
                        r.l1_of_mean.to_string(),
                    ]
                })
                .collect();
            out.write_csv("convergence_distances.csv", &DISTANCE_HEADER, &rows)?;
        }
        if !self.residuals.is_empty() {
            let rows: Vec<Vec<String>> = self
                .residuals
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        r.eps.to_string(),
                        r.test_function.clone(),
                        r.species.label().to_string(),
                        r.replicas.to_string(),
                        r.seed.to_string(),
                        r.residual_mean.to_string(),
                        r.residual_stderr.to_string(),
                    ]
                })
                .collect();
            out.write_csv("convergence_residuals.csv", &RESIDUAL_HEADER, &rows)?;
        }
        Ok(())
    }
}

/// Seed of the KMC runs at lattice side `n`.
pub fn replica_seed(base: u64, n: usize) -> u64 {
    base ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

const INITIAL_SALT: u64 = 0x1d8e_4e27_c47d_124f;

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Mollified fields of one replica at every lattice site, per frame and `ε`.
fn run_replica(
    cfg: &RunConfig,
    n: usize,
    r: usize,
    times: &[f64],
) -> Result<Vec<Vec<EmpiricalField>>> {
    let seed = replica_seed(cfg.seed, n);
    let inner = || -> Result<Vec<Vec<EmpiricalField>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INITIAL_SALT);
        rng.set_stream(r as u64);
        let initial = sample_initial(&cfg.profile, n, &mut rng)?;
        let mut params = cfg.sim_params(n);
        params.seed = seed;
        let mut sim = Simulation::new(initial, params, r as u64)?;
        sim.run(times, |c, _, _| {
            cfg.eps_list
                .iter()
                .map(|&e| mollified_fields_on(c, e, cfg.ntheta, n))
                .collect()
        })
    };
    inner().map_err(|e| Error::Replica {
        seed: seed.wrapping_add(r as u64),
        source: Box::new(e),
    })
}

/// Values of an `n × n` site field at the `cells × cells` points `i/cells`.
fn subsample(field: &[f64], n: usize, cells: usize) -> Vec<f64> {
    let stride = n / cells;
    (0..cells * cells)
        .map(|c| field[(c / cells) * stride * n + (c % cells) * stride])
        .collect()
}

/// Run the experiment described by `cfg` over every `N` in `n_list` and `ε` in `eps_list`.
pub fn run_convergence(cfg: &RunConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let times = cfg.frame_times();
    let grid = PdeGrid::new(cfg.grid, cfg.pde_ntheta)?;
    let fs0 = FieldState::from_profile(grid, &cfg.profile)?;
    let mut solver = PdeSolver::new(grid, cfg.pde_params())?;
    let pde = solver.solve_frames(&fs0, &times, cfg.dt)?;
    let pde_rho: Vec<[Vec<f64>; 2]> = pde
        .iter()
        .map(|f| {
            let m = moments(f);
            [m.rho_a, m.rho_p]
        })
        .collect();
    let battery = TestFunction::battery();
    let params = cfg.pde_params();
    let mut report = ConvergenceReport::default();
    for &n in &cfg.n_list {
        let runs: Vec<Vec<Vec<EmpiricalField>>> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| run_replica(cfg, n, r, &times))
            .collect::<Result<_>>()?;
        for (ei, &eps) in cfg.eps_list.iter().enumerate() {
            let l = mollifier_radius(eps, n)?;
            let w = (2 * l + 1) as f64 / (2 * n) as f64;
            for (k, &t) in times.iter().enumerate() {
                for (si, s) in Species::BOTH.into_iter().enumerate() {
                    let target = box_average(&pde_rho[k][si], grid.g, w, cfg.cells)?;
                    let cells = target.len() as f64;
                    let sub: Vec<Vec<f64>> = runs
                        .iter()
                        .map(|run| subsample(run[k][ei].rho_species(s), n, cfg.cells))
                        .collect();
                    let per: Vec<f64> = sub
                        .iter()
                        .map(|emp| {
                            emp.iter()
                                .zip(&target)
                                .map(|(a, b)| (a - b).abs())
                                .sum::<f64>()
                                / cells
                        })
                        .collect();
                    let (l1_mean, l1_stderr) = mean_stderr(&per);
                    let l1_of_mean = target
                        .iter()
                        .enumerate()
                        .map(|(c, b)| {
                            let m = sub.iter().map(|emp| emp[c]).sum::<f64>() / sub.len() as f64;
                            (m - b).abs()
                        })
                        .sum::<f64>()
                        / cells;
                    report.distances.push(DistanceRow {
                        n,
                        eps,
                        frame: k,
                        t,
                        species: s,
                        replicas: cfg.replicas,
                        seed: cfg.seed,
                        l1_mean,
                        l1_stderr,
                        l1_of_mean,
                    });
                }
            }
            let per_fn: Vec<Vec<[f64; 2]>> = runs
                .par_iter()
                .map(|run| {
                    let fields: Vec<EmpiricalField> = run.iter().map(|f| f[ei].clone()).collect();
                    battery
                        .iter()
                        .map(|h| {
                            weak_residual_empirical(&fields, &times, h, &params)
                                .map(|r| [r.active, r.passive])
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            for (hi, h) in battery.iter().enumerate() {
                for (si, s) in Species::BOTH.into_iter().enumerate() {
                    let v: Vec<f64> = per_fn.iter().map(|r| r[hi][si]).collect();
                    let (m, se) = mean_stderr(&v);
                    report.residuals.push(ResidualRow {
                        n,
                        eps,
                        test_function: h.name(),
                        species: s,
                        replicas: cfg.replicas,
                        seed: cfg.seed,
                        residual_mean: m,
                        residual_stderr: se,
                    });
                }
            }
        }
    }
    Ok(report)
}
