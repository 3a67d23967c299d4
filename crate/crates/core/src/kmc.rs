//! Exact continuous-time simulation of the active/passive exclusion process.
//!
//! Jumps are generated by thinning a Poisson stream whose rate bounds every
//! single move; orientations follow independent Brownian motions and are
//! advanced lazily, only when a jump rate or an observer reads them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    neighbor_linear, unit_vector, wrap_angle, Configuration, Direction, LatticeIndex, SiteState,
    Tag,
};

/// Model constants of the microscopic dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Lattice side `N`.
    pub n: usize,
    pub d_t: f64,
    pub v0: f64,
    pub d_r: f64,
    /// Macroscopic horizon.
    pub t_end: f64,
    pub seed: u64,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n < 1 || self.n > u16::MAX as usize {
            bad.push(format!("lattice side {} outside [1, {}]", self.n, u16::MAX));
        }
        if !(self.d_t > 0.0 && self.d_t.is_finite()) {
            bad.push(format!("d_t = {} must be positive", self.d_t));
        }
        if !(self.v0 >= 0.0 && self.v0.is_finite()) {
            bad.push(format!("v0 = {} must be non-negative", self.v0));
        }
        if !(self.d_r >= 0.0 && self.d_r.is_finite()) {
            bad.push(format!("d_r = {} must be non-negative", self.d_r));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            bad.push(format!("t_end = {} must be non-negative", self.t_end));
        }
        if bad.is_empty() && self.n as f64 <= self.v0 / (2.0 * self.d_t) {
            bad.push(format!(
                "jump rates turn negative: need N > v0/(2 d_t) = {}, got N = {}",
                self.v0 / (2.0 * self.d_t),
                self.n
            ));
        }
        if bad.is_empty() {
            let total = 4.0 * (self.n * self.n) as f64 * self.max_move_rate();
            if !total.is_finite() || total > 1e300 {
                bad.push(format!("total event rate {total:e} is not representable"));
            }
        }
        match bad.len() {
            0 => Ok(()),
            1 => Err(Error::InvalidParameter(bad.remove(0))),
            _ => Err(Error::Config(bad)),
        }
    }

    /// `N² D_T + N v0/2`, the largest rate of a single move.
    #[inline]
    pub fn max_move_rate(&self) -> f64 {
        let n = self.n as f64;
        n * n * self.d_t + 0.5 * n * self.v0
    }
}

/// Rate of the move `x → x + z` in macroscopic time, reading the stored angle at `x`.
pub fn jump_rate(cfg: &Configuration, params: &SimParams, x: LatticeIndex, z: Direction) -> f64 {
    let n = cfg.n();
    let i = x.linear(n);
    let s = cfg.site(i);
    if s.is_empty() || cfg.site(neighbor_linear(i, z, n)).is_occupied() {
        return 0.0;
    }
    let nn = params.n as f64;
    let base = nn * nn * params.d_t;
    match s.tag() {
        Tag::Passive => base,
        Tag::Active => {
            let e = unit_vector(s.angle());
            let zv = z.vector();
            base + nn * 0.5 * params.v0 * (zv[0] * e[0] + zv[1] * e[1])
        }
        Tag::Empty => 0.0,
    }
}

/// Advance one orientation by a rotational Brownian increment over `dt`.
pub fn refresh_angle<R: Rng + ?Sized>(
    state: SiteState,
    dt: f64,
    d_r: f64,
    rng: &mut R,
) -> SiteState {
    if state.is_empty() || dt <= 0.0 || d_r == 0.0 {
        return state;
    }
    let xi: f64 = StandardNormal.sample(rng);
    state.with_angle(wrap_angle(state.angle() + (2.0 * d_r * dt).sqrt() * xi))
}

/// Time bookkeeping of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SimClock {
    pub t: f64,
    /// Accepted jumps.
    pub event_count: u64,
    /// Candidate events drawn from the dominating Poisson stream.
    pub candidates: u64,
    /// Time at which each site's angle was last brought up to date.
    pub last_update: Vec<f64>,
}

/// A single trajectory: configuration, clock and random stream.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: Configuration,
    params: SimParams,
    clock: SimClock,
    rng: ChaCha8Rng,
    /// Site index of each particle.
    particles: Vec<u32>,
}

impl Simulation {
    /// Start a trajectory at time 0. `stream` selects an independent random
    /// stream for the same seed, one per replica.
    pub fn new(cfg: Configuration, params: SimParams, stream: u64) -> Result<Self> {
        params.validate()?;
        if cfg.n() != params.n {
            return Err(Error::invalid(format!(
                "configuration side {} differs from N = {}",
                cfg.n(),
                params.n
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(stream);
        let mut particles = Vec::with_capacity(cfg.particle_count());
        for (i, s) in cfg.sites().iter().enumerate() {
            if s.is_occupied() {
                particles.push(i as u32);
            }
        }
        let clock = SimClock {
            t: 0.0,
            event_count: 0,
            candidates: 0,
            last_update: vec![0.0; cfg.sites().len()],
        };
        Ok(Self {
            cfg,
            params,
            clock,
            rng,
            particles,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn time(&self) -> f64 {
        self.clock.t
    }

    /// The configuration as stored; angles may lag behind the current time.
    /// Use [`Simulation::synchronized`] for an up-to-date view.
    pub fn configuration_raw(&self) -> &Configuration {
        &self.cfg
    }

    /// Bring every angle to the current time and return the configuration.
    pub fn synchronized(&mut self) -> &Configuration {
        self.sync_angles();
        &self.cfg
    }

    pub fn into_configuration(mut self) -> Configuration {
        self.sync_angles();
        self.cfg
    }

    pub fn sync_angles(&mut self) {
        if self.params.d_r == 0.0 {
            return;
        }
        for k in 0..self.particles.len() {
            let i = self.particles[k] as usize;
            self.refresh_site(i);
        }
    }

    #[inline]
    fn refresh_site(&mut self, i: usize) {
        let dt = self.clock.t - self.clock.last_update[i];
        if dt > 0.0 {
            let s = refresh_angle(self.cfg.site(i), dt, self.params.d_r, &mut self.rng);
            self.cfg.set_angle_linear(i, s.angle());
        }
        self.clock.last_update[i] = self.clock.t;
    }

    /// Total rate of the dominating Poisson stream.
    pub fn uniform_bound(&self) -> f64 {
        4.0 * self.particles.len() as f64 * self.params.max_move_rate()
    }

    /// Process candidate events until one jump is accepted or `t_stop` is
    /// reached. Returns `true` if a jump happened.
    pub fn step_until(&mut self, t_stop: f64) -> bool {
        let lambda = self.uniform_bound();
        let m = self.particles.len();
        if m == 0 || lambda == 0.0 {
            self.clock.t = self.clock.t.max(t_stop);
            return false;
        }
        let n = self.params.n;
        let nf = n as f64;
        let base = nf * nf * self.params.d_t;
        let bound = self.params.max_move_rate();
        let drift = 0.5 * nf * self.params.v0;
        loop {
            let wait: f64 = Exp1.sample(&mut self.rng);
            let t_next = self.clock.t + wait / lambda;
            if t_next > t_stop {
                self.clock.t = t_stop;
                return false;
            }
            self.clock.t = t_next;
            self.clock.candidates += 1;
            let r: u64 = self.rng.gen();
            let p = (((r >> 32) * m as u64) >> 32) as usize;
            let dir = Direction::from_index((r & 3) as usize);
            let i = self.particles[p] as usize;
            let j = neighbor_linear(i, dir, n);
            if self.cfg.site(j).is_occupied() {
                continue;
            }
            let rate = match self.cfg.site(i).tag() {
                Tag::Active if drift > 0.0 => {
                    self.refresh_site(i);
                    let e = unit_vector(self.cfg.site(i).angle());
                    let zv = dir.vector();
                    base + drift * (zv[0] * e[0] + zv[1] * e[1])
                }
                _ => base,
            };
            let accept = rate / bound;
            debug_assert!(
                (0.0..=1.0 + 1e-12).contains(&accept),
                "acceptance {accept} outside [0, 1]"
            );
            if accept >= 1.0 || self.rng.gen::<f64>() < accept {
                // bring the mover's angle to now so its timestamp can travel with it
                self.refresh_site(i);
                self.cfg.swap_linear(i, j);
                self.clock.last_update[j] = self.clock.t;
                self.particles[p] = j as u32;
                self.clock.event_count += 1;
                return true;
            }
        }
    }

    /// Advance to the next accepted jump or to the horizon.
    pub fn step(&mut self) -> bool {
        let t_end = self.params.t_end;
        self.step_until(t_end)
    }

    /// Run until time `t` (clamped below by the current time).
    pub fn advance_to(&mut self, t: f64) {
        while self.step_until(t) {}
    }

    /// Run to the horizon, calling `observe` at each observer time with the
    /// angle-synchronized configuration.
    pub fn run<T>(
        &mut self,
        observer_times: &[f64],
        mut observe: impl FnMut(&Configuration, f64, usize) -> Result<T>,
    ) -> Result<Vec<T>> {
        check_observer_times(observer_times, self.clock.t, self.params.t_end)?;
        let mut out = Vec::with_capacity(observer_times.len());
        for (k, &t) in observer_times.iter().enumerate() {
            self.advance_to(t);
            self.sync_angles();
            out.push(observe(&self.cfg, t, k)?);
        }
        let t_end = self.params.t_end;
        self.advance_to(t_end);
        Ok(out)
    }
}

pub(crate) fn check_observer_times(times: &[f64], t0: f64, t_end: f64) -> Result<()> {
    if times
        .iter()
        .any(|t| !(t.is_finite() && *t >= t0 && *t <= t_end))
    {
        return Err(Error::invalid(format!(
            "observer times must lie in [{t0}, {t_end}]"
        )));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("observer times must be sorted"));
    }
    Ok(())
}
