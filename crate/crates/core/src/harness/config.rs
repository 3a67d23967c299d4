//! Flat `key = value` run configuration.
//!
//! Lines hold one `key = value` pair; `#` starts a comment. Lists are
//! comma-separated. Unknown and repeated keys are rejected, and every
//! violation found is reported together.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kmc::SimParams;
use crate::pde::{PdeGrid, PdeParams, TimeStep};
use crate::sampling::{mollifier_radius, DensityProfile};

/// Every parameter any subcommand reads, with documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Lattice side for `simulate`.
    pub n: usize,
    /// Lattice sides for `converge`, strictly increasing.
    pub n_list: Vec<usize>,
    pub d_t: f64,
    pub v0: f64,
    pub d_r: f64,
    pub t_end: f64,
    pub seed: u64,
    pub profile: DensityProfile,
    /// Mollifier half-width for `simulate`.
    pub eps: f64,
    /// Mollifier half-widths for `converge`.
    pub eps_list: Vec<f64>,
    pub replicas: usize,
    /// Uniform observer frames on `[0, t_end]`, endpoints included.
    pub frames: usize,
    /// Angular bins of empirical fields.
    pub ntheta: usize,
    /// Side of the cell grid on which empirical fields are reported.
    pub cells: usize,
    /// PDE spatial resolution.
    pub grid: usize,
    pub pde_ntheta: usize,
    pub dt: TimeStep,
    pub llf: bool,
    pub alpha_list: Vec<f64>,
    pub msd_side: usize,
    pub msd_t_max: f64,
    pub msd_checkpoints: usize,
    pub msd_replicas: usize,
    pub points: usize,
    pub l_list: Vec<usize>,
    pub theta_a: Vec<f64>,
    pub theta_p: Vec<f64>,
    pub ratio_samples: usize,
}

/// Profile used when none is configured.
pub const DEFAULT_PROFILE: &str =
    "fourier:rho_a=0.3,rho_p=0.2,amp=0.5,k1=1,k2=0,b_a=0.5,m_a=1,psi_a=0";

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 64,
            n_list: vec![16, 32, 64],
            d_t: 1.0,
            v0: 1.0,
            d_r: 1.0,
            t_end: 0.05,
            seed: 1,
            profile: DEFAULT_PROFILE.parse().expect("default profile is valid"),
            eps: 0.125,
            eps_list: vec![0.125],
            replicas: 50,
            frames: 9,
            ntheta: 8,
            cells: 16,
            grid: 64,
            pde_ntheta: 16,
            dt: TimeStep::Auto,
            llf: false,
            alpha_list: vec![0.1, 0.3, 0.5, 0.7],
            msd_side: 128,
            msd_t_max: 1000.0,
            msd_checkpoints: 10,
            msd_replicas: 200,
            points: 101,
            l_list: vec![1, 2],
            theta_a: vec![0.3, 2.1],
            theta_p: vec![4.0],
            ratio_samples: 100,
        }
    }
}

/// The recognized keys, in rendering order.
pub const KEYS: &[&str] = &[
    "n",
    "n_list",
    "d_t",
    "v0",
    "d_r",
    "t_end",
    "seed",
    "profile",
    "eps",
    "eps_list",
    "replicas",
    "frames",
    "ntheta",
    "cells",
    "grid",
    "pde_ntheta",
    "dt",
    "llf",
    "alpha_list",
    "msd_side",
    "msd_t_max",
    "msd_checkpoints",
    "msd_replicas",
    "points",
    "l_list",
    "theta_a",
    "theta_p",
    "ratio_samples",
];

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| format!("bad list item {:?}", s.trim()))
        })
        .collect()
}

fn one<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse {v:?}"))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "n" => self.n = one(v)?,
            "n_list" => self.n_list = list(v)?,
            "d_t" => self.d_t = one(v)?,
            "v0" => self.v0 = one(v)?,
            "d_r" => self.d_r = one(v)?,
            "t_end" => self.t_end = one(v)?,
            "seed" => self.seed = one(v)?,
            "profile" => self.profile = v.parse().map_err(|e: Error| e.to_string())?,
            "eps" => self.eps = one(v)?,
            "eps_list" => self.eps_list = list(v)?,
            "replicas" => self.replicas = one(v)?,
            "frames" => self.frames = one(v)?,
            "ntheta" => self.ntheta = one(v)?,
            "cells" => self.cells = one(v)?,
            "grid" => self.grid = one(v)?,
            "pde_ntheta" => self.pde_ntheta = one(v)?,
            "dt" => self.dt = parse_time_step(v)?,
            "llf" => self.llf = one(v)?,
            "alpha_list" => self.alpha_list = list(v)?,
            "msd_side" => self.msd_side = one(v)?,
            "msd_t_max" => self.msd_t_max = one(v)?,
            "msd_checkpoints" => self.msd_checkpoints = one(v)?,
            "msd_replicas" => self.msd_replicas = one(v)?,
            "points" => self.points = one(v)?,
            "l_list" => self.l_list = list(v)?,
            "theta_a" => self.theta_a = list(v)?,
            "theta_p" => self.theta_p = list(v)?,
            "ratio_samples" => self.ratio_samples = one(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "n" => self.n.to_string(),
            "n_list" => join(&self.n_list),
            "d_t" => self.d_t.to_string(),
            "v0" => self.v0.to_string(),
            "d_r" => self.d_r.to_string(),
            "t_end" => self.t_end.to_string(),
            "seed" => self.seed.to_string(),
            "profile" => self.profile.to_string(),
            "eps" => self.eps.to_string(),
            "eps_list" => join(&self.eps_list),
            "replicas" => self.replicas.to_string(),
            "frames" => self.frames.to_string(),
            "ntheta" => self.ntheta.to_string(),
            "cells" => self.cells.to_string(),
            "grid" => self.grid.to_string(),
            "pde_ntheta" => self.pde_ntheta.to_string(),
            "dt" => match self.dt {
                TimeStep::Auto => "auto".into(),
                TimeStep::Fixed(d) => d.to_string(),
            },
            "llf" => self.llf.to_string(),
            "alpha_list" => join(&self.alpha_list),
            "msd_side" => self.msd_side.to_string(),
            "msd_t_max" => self.msd_t_max.to_string(),
            "msd_checkpoints" => self.msd_checkpoints.to_string(),
            "msd_replicas" => self.msd_replicas.to_string(),
            "points" => self.points.to_string(),
            "l_list" => join(&self.l_list),
            "theta_a" => join(&self.theta_a),
            "theta_p" => join(&self.theta_p),
            "ratio_samples" => self.ratio_samples.to_string(),
            _ => unreachable!("key list is closed"),
        }
    }

    /// Canonical `key = value` rendering of every key; parses back to `self`.
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k)))
            .collect()
    }

    /// All keys and values, for manifests.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        KEYS.iter().map(|k| (k.to_string(), self.get(k))).collect()
    }

    /// Apply a single override, then re-validate.
    pub fn with(mut self, key: &str, value: &str) -> Result<Self> {
        self.set(key, value)
            .map_err(|e| Error::Config(vec![format!("{key}: {e}")]))?;
        self.validate()?;
        Ok(self)
    }

    pub fn sim_params(&self, n: usize) -> SimParams {
        SimParams {
            n,
            d_t: self.d_t,
            v0: self.v0,
            d_r: self.d_r,
            t_end: self.t_end,
            seed: self.seed,
        }
    }

    pub fn pde_params(&self) -> PdeParams {
        PdeParams {
            d_t: self.d_t,
            v0: self.v0,
            d_r: self.d_r,
            llf: self.llf,
        }
    }

    /// `frames` uniform times from 0 to `t_end`.
    pub fn frame_times(&self) -> Vec<f64> {
        if self.frames <= 1 {
            return vec![self.t_end];
        }
        (0..self.frames)
            .map(|k| self.t_end * k as f64 / (self.frames - 1) as f64)
            .collect()
    }

    /// Every invariant, with all violations collected.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        let sim = |n: usize, what: &str, bad: &mut Vec<String>| {
            if let Err(e) = self.sim_params(n).validate() {
                match e {
                    Error::Config(v) => bad.extend(v.into_iter().map(|m| format!("{what}: {m}"))),
                    e => bad.push(format!("{what}: {e}")),
                }
            }
        };
        sim(self.n, "n", &mut bad);
        if self.n_list.is_empty() {
            bad.push("n_list: must not be empty".into());
        }
        for &n in &self.n_list {
            sim(n, &format!("n_list entry {n}"), &mut bad);
        }
        for w in self.n_list.windows(2) {
            if w[1] == w[0] {
                bad.push(format!("n_list: duplicate entry {}", w[0]));
            } else if w[1] < w[0] {
                bad.push(format!(
                    "n_list: must be strictly increasing ({} after {})",
                    w[1], w[0]
                ));
            }
        }
        let eps_ok = |e: f64| e > 0.0 && e < 0.5;
        for &e in std::iter::once(&self.eps).chain(&self.eps_list) {
            if !eps_ok(e) {
                bad.push(format!("eps {e} outside (0, 1/2)"));
            }
        }
        if self.eps_list.is_empty() {
            bad.push("eps_list: must not be empty".into());
        }
        let eps_min = self.eps_list.iter().copied().fold(self.eps, f64::min);
        if eps_ok(eps_min) && (self.grid as f64) < 2.0 / eps_min - 1e-9 {
            bad.push(format!(
                "grid {} does not resolve eps = {eps_min}: need grid >= {}",
                self.grid,
                2.0 / eps_min
            ));
        }
        if let Err(e) = PdeGrid::new(self.grid, self.pde_ntheta) {
            bad.push(format!("grid/pde_ntheta: {e}"));
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                bad.push(format!("dt {dt} must be positive or auto"));
            }
        }
        if let Err(e) = self.pde_params().validate() {
            bad.push(format!("pde parameters: {e}"));
        }
        if !(1..=16).contains(&self.frames) {
            bad.push(format!("frames {} outside [1, 16]", self.frames));
        }
        if self.replicas < 2 {
            bad.push("replicas: need at least 2 for standard errors".into());
        }
        if self.ntheta == 0 {
            bad.push("ntheta: need at least one bin".into());
        }
        if self.cells < 4 {
            bad.push(format!("cells {} below 4", self.cells));
        }
        for &n in std::iter::once(&self.n).chain(&self.n_list) {
            if self.cells > 0 && n % self.cells != 0 {
                bad.push(format!(
                    "cells {} does not divide lattice side {n}",
                    self.cells
                ));
            }
        }
        for &n in &self.n_list {
            for &e in &self.eps_list {
                if eps_ok(e) {
                    if let Err(err) = mollifier_radius(e, n) {
                        bad.push(format!("eps {e} at N = {n}: {err}"));
                    }
                }
            }
        }
        if eps_ok(self.eps) {
            if let Err(err) = mollifier_radius(self.eps, self.n) {
                bad.push(format!("eps {} at n = {}: {err}", self.eps, self.n));
            }
        }
        if self.alpha_list.iter().any(|a| !(0.0..1.0).contains(a)) {
            bad.push("alpha_list: densities must lie in [0, 1)".into());
        }
        if self.msd_side < 2 || self.msd_side > u16::MAX as usize {
            bad.push(format!("msd_side {} out of range", self.msd_side));
        }
        if !(self.msd_t_max > 0.0 && self.msd_t_max.is_finite()) {
            bad.push("msd_t_max must be positive".into());
        }
        if self.msd_checkpoints == 0 {
            bad.push("msd_checkpoints must be positive".into());
        }
        if self.msd_replicas < 2 {
            bad.push("msd_replicas: need at least 2".into());
        }
        if self.points < 2 {
            bad.push("points: need at least 2".into());
        }
        if self.l_list.is_empty() || self.l_list.contains(&0) {
            bad.push("l_list: radii must be positive".into());
        }
        if self
            .theta_a
            .iter()
            .chain(&self.theta_p)
            .any(|t| !t.is_finite())
        {
            bad.push("theta_a/theta_p: angles must be finite".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

fn parse_time_step(v: &str) -> std::result::Result<TimeStep, String> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(TimeStep::Auto)
    } else {
        Ok(TimeStep::Fixed(one(v)?))
    }
}

/// Parse and validate configuration text; unspecified keys take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut bad = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let Some((k, v)) = line.split_once('=') else {
            bad.push(format!("line {lineno}: expected key = value"));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if let Some(prev) = seen.insert(k.to_string(), lineno) {
            bad.push(format!("line {lineno}: key {k} already set on line {prev}"));
            continue;
        }
        if let Err(e) = cfg.set(k, v) {
            bad.push(format!("line {lineno}: {k}: {e}"));
        }
    }
    if let Err(Error::Config(v)) = cfg.validate() {
        bad.extend(v);
    }
    if bad.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(bad))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
