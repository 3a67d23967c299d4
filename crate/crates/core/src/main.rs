use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use aplg::harness::{load_config, run_convergence, OutputDir, RunConfig};
use aplg::kmc::Simulation;
use aplg::micro::{
    build_generator, identity_battery, ratio_experiment, spectral_gap, CanonicalState,
};
use aplg::pde::{FieldState, PdeGrid, PdeSolver};
use aplg::sampling::{mollified_fields_on, sample_initial};
use aplg::transport::{coefficient_table, estimate_ds_msd, MsdConfig};
use aplg::{angular::AngularFn, Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "aplg",
    version,
    about = "Active-passive lattice gas simulator and verification lab"
)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: out/<subcommand>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replica-parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one KMC trajectory and write mollified fields at the frame times.
    Simulate,
    /// Solve the hydrodynamic PDE and write frames in the field schema.
    Pde {
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        ntheta: Option<usize>,
        /// `auto` or a fixed step.
        #[arg(long)]
        dt: Option<String>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        /// Profile string, e.g. `fourier:rho_a=0.3,amp=0.2`.
        #[arg(long)]
        profile: Option<String>,
    },
    /// Tagged-particle MSD estimates of the self-diffusion coefficient.
    Msd,
    /// Transport coefficient tables.
    Coeffs {
        #[command(subcommand)]
        what: CoeffsCommand,
    },
    /// Exact-enumeration check of the canonical moment identities.
    Identities,
    /// Spectral gaps and variance/Dirichlet ratios on small boxes.
    Gap,
    /// KMC versus PDE convergence experiment.
    Converge,
}

#[derive(Subcommand, Debug)]
enum CoeffsCommand {
    /// d_s, D and s on a uniform density grid.
    Table {
        #[arg(long)]
        points: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Pde { .. } => "pde",
            Command::Msd => "msd",
            Command::Coeffs { .. } => "coeffs",
            Command::Identities => "identities",
            Command::Gap => "gap",
            Command::Converge => "converge",
        }
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with("seed", &s.to_string())?;
    }
    match &cli.command {
        Command::Pde {
            grid,
            ntheta,
            dt,
            t_end,
            profile,
        } => {
            let overrides = [
                ("grid", grid.map(|v| v.to_string())),
                ("pde_ntheta", ntheta.map(|v| v.to_string())),
                ("dt", dt.clone()),
                ("t_end", t_end.map(|v| v.to_string())),
                ("profile", profile.clone()),
            ];
            for (k, v) in overrides {
                if let Some(v) = v {
                    cfg = cfg.with(k, &v)?;
                }
            }
        }
        Command::Coeffs {
            what: CoeffsCommand::Table { points: Some(p) },
        } => {
            cfg = cfg.with("points", &p.to_string())?;
        }
        _ => {}
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    }
    let cfg = load(&cli)?;
    let name = cli.command.name();
    let mut out = OutputDir::create(
        cli.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(name)),
    )?;
    let started = Instant::now();
    let extra = match &cli.command {
        Command::Simulate => {
            let params = cfg.sim_params(cfg.n);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let initial = sample_initial(&cfg.profile, cfg.n, &mut rng)?;
            let mut sim = Simulation::new(initial, params, 0)?;
            let times = cfg.frame_times();
            let fields = sim.run(&times, |c, _, _| {
                mollified_fields_on(c, cfg.eps, cfg.ntheta, cfg.cells)
            })?;
            for (k, f) in fields.iter().enumerate() {
                out.write_field(&format!("t_{k}.csv"), f)?;
            }
            json!({
                "params": params,
                "seed": cfg.seed,
                "observer_times": times,
                "event_count": sim.clock().event_count,
                "wall_time": started.elapsed().as_secs_f64(),
            })
        }
        Command::Pde { .. } => {
            let grid = PdeGrid::new(cfg.grid, cfg.pde_ntheta)?;
            let fs0 = FieldState::from_profile(grid, &cfg.profile)?;
            let mut solver = PdeSolver::new(grid, cfg.pde_params())?;
            let times = cfg.frame_times();
            let frames = solver.solve_frames(&fs0, &times, cfg.dt)?;
            for (k, f) in frames.iter().enumerate() {
                out.write_field(&format!("t_{k}.csv"), &f.to_empirical())?;
            }
            let st = solver.stats();
            json!({
                "times": times,
                "steps": st.steps,
                "max_rho": st.max_rho,
                "min_f": st.min_f,
                "cfl_bound": solver.cfl_bound(),
            })
        }
        Command::Msd => {
            let mut rows = Vec::new();
            for &alpha in &cfg.alpha_list {
                let est = estimate_ds_msd(&MsdConfig {
                    alpha,
                    side: cfg.msd_side,
                    t_max: cfg.msd_t_max,
                    checkpoints: cfg.msd_checkpoints,
                    replicas: cfg.msd_replicas,
                    seed: cfg.seed,
                })?;
                for p in &est.points {
                    rows.push(vec![
                        num(alpha),
                        num(p.t),
                        num(p.msd_mean),
                        num(p.msd_stderr),
                        num(p.d_hat),
                    ]);
                }
            }
            out.write_csv(
                "msd.csv",
                &["alpha", "t", "msd_mean", "msd_stderr", "d_hat"],
                &rows,
            )?;
            json!({ "wall_time": started.elapsed().as_secs_f64() })
        }
        Command::Coeffs { .. } => {
            let rows: Vec<Vec<String>> = coefficient_table(cfg.points)?
                .iter()
                .map(|r| r.iter().map(|v| num(*v)).collect())
                .collect();
            out.write_csv("coeffs.csv", &["alpha", "d_s", "D", "s"], &rows)?;
            json!({})
        }
        Command::Identities => {
            let checks = identity_battery()?;
            let worst = checks.iter().map(|c| c.abs_err).fold(0.0, f64::max);
            let rows: Vec<Vec<String>> = checks
                .iter()
                .map(|c| {
                    vec![
                        format!("{}|{}", c.identity_id, c.witness),
                        c.l.to_string(),
                        c.ka.to_string(),
                        c.kp.to_string(),
                        c.angles_hash.clone(),
                        num(c.lhs),
                        num(c.rhs),
                        num(c.abs_err),
                    ]
                })
                .collect();
            out.write_csv(
                "identities.csv",
                &[
                    "identity_id",
                    "l",
                    "Ka",
                    "Kp",
                    "angles_hash",
                    "lhs",
                    "rhs",
                    "abs_err",
                ],
                &rows,
            )?;
            json!({ "cases": checks.len(), "max_abs_err": worst })
        }
        Command::Gap => {
            let mut rows = Vec::new();
            let mut ratios = Vec::new();
            for &l in &cfg.l_list {
                let cs = CanonicalState::new(l, cfg.theta_a.clone(), cfg.theta_p.clone())?;
                let t0 = Instant::now();
                let gm = build_generator(&cs)?;
                let gap = spectral_gap(&gm)?;
                rows.push(vec![
                    l.to_string(),
                    cs.ka().to_string(),
                    cs.kp().to_string(),
                    num(gap.gap),
                    gm.len().to_string(),
                    num(t0.elapsed().as_secs_f64()),
                ]);
                let r = ratio_experiment(&cs, &AngularFn::Cos, cfg.ratio_samples, cfg.seed)?;
                ratios.push(vec![
                    l.to_string(),
                    r.states.to_string(),
                    num(r.gap),
                    num(r.max_ratio),
                    num(r.mean_ratio),
                    r.sampled.to_string(),
                ]);
            }
            out.write_csv(
                "gap.csv",
                &["l", "Ka", "Kp", "gap", "states", "seconds"],
                &rows,
            )?;
            out.write_csv(
                "gap_ratio.csv",
                &["l", "states", "gap", "max_ratio", "mean_ratio", "sampled"],
                &ratios,
            )?;
            json!({})
        }
        Command::Converge => {
            let report = run_convergence(&cfg)?;
            report.write(&mut out)?;
            json!({ "wall_time": started.elapsed().as_secs_f64() })
        }
    };
    let root = out.root().to_path_buf();
    out.finish(name, &cfg.render(), cfg.to_map(), cfg.seed, extra)?;
    eprintln!("wrote {}", root.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
