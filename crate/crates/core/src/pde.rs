//! Finite-volume solver for the hydrodynamic equations on `𝕋² × 𝕊` and
//! evaluation of their weak formulation on discrete trajectories.
//!
//! Grid points sit at `u = (i, j)/G` and `θ_k = (k + ½)Δθ`, so a solver
//! field and an [`EmpiricalField`] with the same resolution describe the
//! same points.

use std::f64::consts::TAU;

use crate::angular::AngularFn;
use crate::error::{Error, Result};
use crate::sampling::{DensityProfile, EmpiricalField};
use crate::transport::CoefficientSet;

/// Tolerated transient overshoot of the total density above 1.
pub const EXCLUSION_TOL: f64 = 1e-6;
/// Overshoot beyond which a run is aborted.
pub const EXCLUSION_HARD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdeGrid {
    pub g: usize,
    pub ntheta: usize,
}

impl PdeGrid {
    pub fn new(g: usize, ntheta: usize) -> Result<Self> {
        if g < 4 || ntheta < 4 {
            return Err(Error::invalid(format!(
                "grid {g}×{g}×{ntheta} is below the 4×4×4 minimum"
            )));
        }
        Ok(Self { g, ntheta })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        1.0 / self.g as f64
    }

    #[inline]
    pub fn dtheta(&self) -> f64 {
        TAU / self.ntheta as f64
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.g * self.g
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.g * self.g * self.ntheta
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, k: usize) -> usize {
        (y * self.g + x) * self.ntheta + k
    }

    #[inline]
    pub fn theta(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dtheta()
    }

    #[inline]
    pub fn position(&self, x: usize, y: usize) -> [f64; 2] {
        [x as f64 / self.g as f64, y as f64 / self.g as f64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeParams {
    pub d_t: f64,
    pub v0: f64,
    pub d_r: f64,
    /// Add local Lax–Friedrichs dissipation to the advective flux.
    pub llf: bool,
}

impl PdeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d_t", self.d_t), ("v0", self.v0), ("d_r", self.d_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} = {v} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Densities `f^a, f^p` sampled on a [`PdeGrid`] at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub grid: PdeGrid,
    pub t: f64,
    pub f_a: Vec<f64>,
    pub f_p: Vec<f64>,
}

/// Cell fields `ρ^a, ρ^p, p^a`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub rho_a: Vec<f64>,
    pub rho_p: Vec<f64>,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
}

impl Moments {
    fn zeros(cells: usize) -> Self {
        Self {
            rho_a: vec![0.0; cells],
            rho_p: vec![0.0; cells],
            px: vec![0.0; cells],
            py: vec![0.0; cells],
        }
    }

    pub fn rho(&self) -> Vec<f64> {
        self.rho_a
            .iter()
            .zip(&self.rho_p)
            .map(|(a, p)| a + p)
            .collect()
    }
}

impl FieldState {
    pub fn zeros(grid: PdeGrid) -> Self {
        Self {
            grid,
            t: 0.0,
            f_a: vec![0.0; grid.len()],
            f_p: vec![0.0; grid.len()],
        }
    }

    /// Point values of `f^σ` on the grid.
    pub fn from_fn(
        grid: PdeGrid,
        fa: impl Fn([f64; 2], f64) -> f64,
        fp: impl Fn([f64; 2], f64) -> f64,
    ) -> Self {
        let mut fs = Self::zeros(grid);
        for y in 0..grid.g {
            for x in 0..grid.g {
                let u = grid.position(x, y);
                for k in 0..grid.ntheta {
                    let i = grid.index(x, y, k);
                    fs.f_a[i] = fa(u, grid.theta(k));
                    fs.f_p[i] = fp(u, grid.theta(k));
                }
            }
        }
        fs
    }

    /// Initial data `(ζ^a, ζ^p)` of a density profile.
    pub fn from_profile(grid: PdeGrid, profile: &DensityProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Self::from_fn(
            grid,
            |u, t| profile.active.zeta(u, t),
            |u, t| profile.passive.zeta(u, t),
        ))
    }

    /// Read histogram cells as `f^σ = h^σ/Δθ`.
    pub fn from_empirical(field: &EmpiricalField, t: f64) -> Result<Self> {
        let grid = PdeGrid::new(field.cells, field.ntheta)?;
        let dth = grid.dtheta();
        Ok(Self {
            grid,
            t,
            f_a: field.hist_a.iter().map(|h| h / dth).collect(),
            f_p: field.hist_p.iter().map(|h| h / dth).collect(),
        })
    }

    /// Write in the empirical-field schema (histogram bins hold `f Δθ`).
    pub fn to_empirical(&self) -> EmpiricalField {
        let m = moments(self);
        let dth = self.grid.dtheta();
        EmpiricalField {
            cells: self.grid.g,
            ntheta: self.grid.ntheta,
            rho_a: m.rho_a,
            rho_p: m.rho_p,
            px: m.px,
            py: m.py,
            hist_a: self.f_a.iter().map(|f| f * dth).collect(),
            hist_p: self.f_p.iter().map(|f| f * dth).collect(),
        }
    }

    /// `(m^a, m^p)`, the integrals of `f^a` and `f^p`.
    pub fn masses(&self) -> (f64, f64) {
        let w = self.grid.dx() * self.grid.dx() * self.grid.dtheta();
        (
            self.f_a.iter().sum::<f64>() * w,
            self.f_p.iter().sum::<f64>() * w,
        )
    }
}

/// Angular moments with the rectangle rule, exact for band-limited data.
pub fn moments(fs: &FieldState) -> Moments {
    let grid = fs.grid;
    let (cos, sin) = trig_tables(grid);
    let mut m = Moments::zeros(grid.cells());
    moments_into(grid, &fs.f_a, &fs.f_p, &cos, &sin, &mut m);
    m
}

fn trig_tables(grid: PdeGrid) -> (Vec<f64>, Vec<f64>) {
    (
        (0..grid.ntheta).map(|k| grid.theta(k).cos()).collect(),
        (0..grid.ntheta).map(|k| grid.theta(k).sin()).collect(),
    )
}

fn moments_into(
    grid: PdeGrid,
    f_a: &[f64],
    f_p: &[f64],
    cos: &[f64],
    sin: &[f64],
    m: &mut Moments,
) {
    let nt = grid.ntheta;
    let dth = grid.dtheta();
    for c in 0..grid.cells() {
        let a = &f_a[c * nt..(c + 1) * nt];
        let p = &f_p[c * nt..(c + 1) * nt];
        let (mut ra, mut rp, mut px, mut py) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..nt {
            ra += a[k];
            rp += p[k];
            px += a[k] * cos[k];
            py += a[k] * sin[k];
        }
        m.rho_a[c] = ra * dth;
        m.rho_p[c] = rp * dth;
        m.px[c] = px * dth;
        m.py[c] = py * dth;
    }
}

/// Time step choice for [`PdeSolver::advance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    /// Largest stable step, shortened to land exactly on each target time.
    Auto,
    Fixed(f64),
}

/// Extremes observed over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeStats {
    pub steps: u64,
    pub max_rho: f64,
    pub min_f: f64,
}

/// Explicit RK4 time stepper for the flux-form discretization.
#[derive(Debug, Clone)]
pub struct PdeSolver {
    grid: PdeGrid,
    params: PdeParams,
    coeffs: CoefficientSet,
    cos: Vec<f64>,
    sin: Vec<f64>,
    m: Moments,
    ka: [Vec<f64>; 4],
    kp: [Vec<f64>; 4],
    stage_a: Vec<f64>,
    stage_p: Vec<f64>,
    stats: PdeStats,
}

impl PdeSolver {
    pub fn new(grid: PdeGrid, params: PdeParams) -> Result<Self> {
        Self::with_coefficients(grid, params, CoefficientSet::cubic())
    }

    pub fn with_coefficients(
        grid: PdeGrid,
        params: PdeParams,
        coeffs: CoefficientSet,
    ) -> Result<Self> {
        params.validate()?;
        let (cos, sin) = trig_tables(grid);
        let n = grid.len();
        Ok(Self {
            grid,
            params,
            coeffs,
            cos,
            sin,
            m: Moments::zeros(grid.cells()),
            ka: std::array::from_fn(|_| vec![0.0; n]),
            kp: std::array::from_fn(|_| vec![0.0; n]),
            stage_a: vec![0.0; n],
            stage_p: vec![0.0; n],
            stats: PdeStats {
                steps: 0,
                max_rho: 0.0,
                min_f: f64::INFINITY,
            },
        })
    }

    pub fn grid(&self) -> PdeGrid {
        self.grid
    }

    pub fn params(&self) -> &PdeParams {
        &self.params
    }

    pub fn stats(&self) -> PdeStats {
        self.stats
    }

    /// `0.8 · min(Δx²/(8D_T), Δθ²/(4D_R), Δx/(4v0))`, ignoring vanishing coefficients.
    pub fn cfl_bound(&self) -> f64 {
        let dx = self.grid.dx();
        let dth = self.grid.dtheta();
        let mut b = f64::INFINITY;
        if self.params.d_t > 0.0 {
            b = b.min(dx * dx / (8.0 * self.params.d_t));
        }
        if self.params.d_r > 0.0 {
            b = b.min(dth * dth / (4.0 * self.params.d_r));
        }
        if self.params.v0 > 0.0 {
            b = b.min(dx / (4.0 * self.params.v0));
        }
        0.8 * b
    }

    fn check_grid(&self, fs: &FieldState) -> Result<()> {
        if fs.grid != self.grid
            || fs.f_a.len() != self.grid.len()
            || fs.f_p.len() != self.grid.len()
        {
            return Err(Error::GridMismatch(format!(
                "field on {:?}, solver on {:?}",
                fs.grid, self.grid
            )));
        }
        Ok(())
    }

    /// Time derivative of the discrete system.
    pub fn rhs(&mut self, fs: &FieldState) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_grid(fs)?;
        let mut oa = vec![0.0; self.grid.len()];
        let mut op = vec![0.0; self.grid.len()];
        self.rhs_into(&fs.f_a, &fs.f_p, &mut oa, &mut op)?;
        Ok((oa, op))
    }

    fn rhs_into(
        &mut self,
        f_a: &[f64],
        f_p: &[f64],
        out_a: &mut [f64],
        out_p: &mut [f64],
    ) -> Result<()> {
        let grid = self.grid;
        let (g, nt) = (grid.g, grid.ntheta);
        let dx = grid.dx();
        let dth = grid.dtheta();
        let PdeParams { d_t, v0, d_r, llf } = self.params;
        moments_into(grid, f_a, f_p, &self.cos, &self.sin, &mut self.m);

        let ang = d_r / (dth * dth);
        for c in 0..grid.cells() {
            let a = &f_a[c * nt..(c + 1) * nt];
            let p = &f_p[c * nt..(c + 1) * nt];
            for k in 0..nt {
                let kp = if k + 1 == nt { 0 } else { k + 1 };
                let km = if k == 0 { nt - 1 } else { k - 1 };
                out_a[c * nt + k] = ang * (a[kp] - 2.0 * a[k] + a[km]);
                out_p[c * nt + k] = ang * (p[kp] - 2.0 * p[k] + p[km]);
            }
        }

        let inv_dx = 1.0 / dx;
        for axis in 0..2 {
            let e_axis = if axis == 0 { &self.cos } else { &self.sin };
            let p_axis = if axis == 0 { &self.m.px } else { &self.m.py };
            for y in 0..g {
                for x in 0..g {
                    let c = y * g + x;
                    let c2 = if axis == 0 {
                        y * g + (x + 1) % g
                    } else {
                        ((y + 1) % g) * g + x
                    };
                    let rl = self.m.rho_a[c] + self.m.rho_p[c];
                    let rr = self.m.rho_a[c2] + self.m.rho_p[c2];
                    let rf = 0.5 * (rl + rr);
                    let ds = self.coeffs.ds(rf);
                    let big_d = self.coeffs.big_d(rf);
                    let drho = (rr - rl) * inv_dx;
                    let drift = v0 * self.coeffs.s(rf) * 0.5 * (p_axis[c] + p_axis[c2]);
                    let (il, ir) = (c * nt, c2 * nt);
                    for k in 0..nt {
                        let (fl, fr) = (f_a[il + k], f_a[ir + k]);
                        let ff = 0.5 * (fl + fr);
                        let vel = drift + v0 * ds * e_axis[k];
                        let mut j = -d_t * (ds * (fr - fl) * inv_dx + ff * big_d * drho) + vel * ff;
                        if llf {
                            j -= 0.5 * vel.abs() * (fr - fl);
                        }
                        out_a[il + k] -= j * inv_dx;
                        out_a[ir + k] += j * inv_dx;

                        let (fl, fr) = (f_p[il + k], f_p[ir + k]);
                        let j = -d_t * (ds * (fr - fl) * inv_dx + 0.5 * (fl + fr) * big_d * drho);
                        out_p[il + k] -= j * inv_dx;
                        out_p[ir + k] += j * inv_dx;
                    }
                }
            }
        }
        if let Some(i) = out_a
            .iter()
            .chain(out_p.iter())
            .position(|v| !v.is_finite())
        {
            let i = i % grid.len();
            let c = i / nt;
            return Err(Error::NonFinite {
                what: "flux divergence",
                x: c % g,
                y: c / g,
                k: i % nt,
            });
        }
        Ok(())
    }

    /// One classical RK4 step.
    pub fn step_rk4(&mut self, fs: &mut FieldState, dt: f64) -> Result<()> {
        self.step_rk4_forced(fs, dt, |_, _, _| {})
    }

    /// RK4 step of `∂_t f = rhs(f) + S(t)`, where `source(t, s_a, s_p)` adds `S(t)`.
    pub fn step_rk4_forced(
        &mut self,
        fs: &mut FieldState,
        dt: f64,
        mut source: impl FnMut(f64, &mut [f64], &mut [f64]),
    ) -> Result<()> {
        self.check_grid(fs)?;
        let bound = self.cfl_bound();
        if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, bound });
        }
        let t0 = fs.t;
        let mut ka = std::mem::take(&mut self.ka);
        let mut kp = std::mem::take(&mut self.kp);
        let mut stage_a = std::mem::take(&mut self.stage_a);
        let mut stage_p = std::mem::take(&mut self.stage_p);
        let offsets = [0.0, 0.5, 0.5, 1.0];
        let mut result = Ok(());
        for s in 0..4 {
            if s == 0 {
                stage_a.copy_from_slice(&fs.f_a);
                stage_p.copy_from_slice(&fs.f_p);
            } else {
                let h = offsets[s] * dt;
                for i in 0..stage_a.len() {
                    stage_a[i] = fs.f_a[i] + h * ka[s - 1][i];
                    stage_p[i] = fs.f_p[i] + h * kp[s - 1][i];
                }
            }
            if let Err(e) = self.rhs_into(&stage_a, &stage_p, &mut ka[s], &mut kp[s]) {
                result = Err(e);
                break;
            }
            source(t0 + offsets[s] * dt, &mut ka[s], &mut kp[s]);
        }
        if result.is_ok() {
            let w = dt / 6.0;
            for i in 0..fs.f_a.len() {
                fs.f_a[i] += w * (ka[0][i] + 2.0 * ka[1][i] + 2.0 * ka[2][i] + ka[3][i]);
                fs.f_p[i] += w * (kp[0][i] + 2.0 * kp[1][i] + 2.0 * kp[2][i] + kp[3][i]);
            }
            fs.t = t0 + dt;
        }
        self.ka = ka;
        self.kp = kp;
        self.stage_a = stage_a;
        self.stage_p = stage_p;
        result?;
        self.stats.steps += 1;
        self.check_state(fs)
    }

    fn check_state(&mut self, fs: &FieldState) -> Result<()> {
        let nt = self.grid.ntheta;
        let dth = self.grid.dtheta();
        for c in 0..self.grid.cells() {
            let mut rho = 0.0;
            for i in c * nt..(c + 1) * nt {
                let (a, p) = (fs.f_a[i], fs.f_p[i]);
                if !(a.is_finite() && p.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "density",
                        x: c % self.grid.g,
                        y: c / self.grid.g,
                        k: i % nt,
                    });
                }
                self.stats.min_f = self.stats.min_f.min(a.min(p));
                rho += a + p;
            }
            rho *= dth;
            self.stats.max_rho = self.stats.max_rho.max(rho);
            if rho > 1.0 + EXCLUSION_HARD {
                return Err(Error::ExclusionViolated {
                    rho,
                    x: c % self.grid.g,
                    y: c / self.grid.g,
                });
            }
        }
        Ok(())
    }

    /// Step from `fs.t` to `t_target`.
    pub fn advance(&mut self, fs: &mut FieldState, t_target: f64, step: TimeStep) -> Result<()> {
        let span = t_target - fs.t;
        if span < 0.0 {
            return Err(Error::invalid(format!(
                "cannot integrate backwards from {} to {t_target}",
                fs.t
            )));
        }
        if span == 0.0 {
            return Ok(());
        }
        let dt_max = match step {
            TimeStep::Auto => self.cfl_bound(),
            TimeStep::Fixed(dt) => {
                let bound = self.cfl_bound();
                if !(dt > 0.0) || dt > bound {
                    return Err(Error::Cfl { dt, bound });
                }
                dt
            }
        };
        let steps = (span / dt_max - 1e-9).ceil().max(1.0) as u64;
        let dt = span / steps as f64;
        for s in 0..steps {
            self.step_rk4(fs, dt)?;
            if s + 1 == steps {
                fs.t = t_target;
            }
        }
        Ok(())
    }

    /// Frames at the requested times (sorted, starting at or after `fs0.t`).
    pub fn solve_frames(
        &mut self,
        fs0: &FieldState,
        times: &[f64],
        step: TimeStep,
    ) -> Result<Vec<FieldState>> {
        self.check_grid(fs0)?;
        let mut fs = fs0.clone();
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            self.advance(&mut fs, t, step)?;
            out.push(fs.clone());
        }
        Ok(out)
    }
}

/// Time derivative with the cubic coefficients.
pub fn rhs(fs: &FieldState, params: &PdeParams) -> Result<(Vec<f64>, Vec<f64>)> {
    PdeSolver::new(fs.grid, *params)?.rhs(fs)
}

/// One RK4 step with the cubic coefficients.
pub fn step_rk4(fs: &FieldState, dt: f64, params: &PdeParams) -> Result<FieldState> {
    let mut next = fs.clone();
    PdeSolver::new(fs.grid, *params)?.step_rk4(&mut next, dt)?;
    Ok(next)
}

/// Spatial factor `G_t(u) = e^{-ct} cos(2π(k₁u₁ + k₂u₂) + φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialMode {
    pub k1: i32,
    pub k2: i32,
    pub phase: f64,
    pub decay: f64,
}

impl SpatialMode {
    pub const ONE: SpatialMode = SpatialMode {
        k1: 0,
        k2: 0,
        phase: 0.0,
        decay: 0.0,
    };

    pub fn cos(k1: i32, k2: i32) -> Self {
        Self {
            k1,
            k2,
            phase: 0.0,
            decay: 0.0,
        }
    }

    #[inline]
    fn arg(&self, u: [f64; 2]) -> f64 {
        TAU * (self.k1 as f64 * u[0] + self.k2 as f64 * u[1]) + self.phase
    }

    #[inline]
    pub fn value(&self, t: f64, u: [f64; 2]) -> f64 {
        (-self.decay * t).exp() * self.arg(u).cos()
    }

    #[inline]
    pub fn dt(&self, t: f64, u: [f64; 2]) -> f64 {
        -self.decay * self.value(t, u)
    }

    #[inline]
    pub fn grad(&self, t: f64, u: [f64; 2]) -> [f64; 2] {
        let s = -(-self.decay * t).exp() * self.arg(u).sin() * TAU;
        [s * self.k1 as f64, s * self.k2 as f64]
    }

    #[inline]
    pub fn laplacian(&self, t: f64, u: [f64; 2]) -> f64 {
        let k2 = (self.k1 * self.k1 + self.k2 * self.k2) as f64;
        -TAU * TAU * k2 * self.value(t, u)
    }

    pub fn name(&self) -> String {
        match (self.k1, self.k2, self.phase, self.decay) {
            (0, 0, p, _) if p == 0.0 => "1".into(),
            (1, 0, p, d) if p == 0.0 && d == 0.0 => "cos2pi_u1".into(),
            (0, 1, p, d) if p == 0.0 && d == 0.0 => "cos2pi_u2".into(),
            (k1, k2, p, d) => format!("mode({k1},{k2},{p},{d})"),
        }
    }
}

/// Product test function `H_t(u, θ) = G_t(u) ω(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub spatial: SpatialMode,
    pub omega: AngularFn,
}

impl TestFunction {
    pub fn new(spatial: SpatialMode, omega: AngularFn) -> Self {
        Self { spatial, omega }
    }

    pub fn name(&self) -> String {
        format!("{}*{}", self.spatial.name(), self.omega.name())
    }

    /// `{1, cos 2πu₁, cos 2πu₂} × {1, cos θ, sin θ}`.
    pub fn battery() -> Vec<TestFunction> {
        let mut out = Vec::with_capacity(9);
        for g in [
            SpatialMode::ONE,
            SpatialMode::cos(1, 0),
            SpatialMode::cos(0, 1),
        ] {
            for w in [AngularFn::One, AngularFn::Cos, AngularFn::Sin] {
                out.push(TestFunction::new(g, w));
            }
        }
        out
    }
}

/// Residuals of the weak formulation for each species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    pub active: f64,
    pub passive: f64,
}

struct Frame<'a> {
    t: f64,
    f_a: &'a [f64],
    f_p: &'a [f64],
    m: Moments,
}

/// `|LHS − RHS|` of the weak formulation along a trajectory of solver frames.
pub fn weak_residual(
    frames: &[FieldState],
    h: &TestFunction,
    params: &PdeParams,
) -> Result<WeakResidual> {
    let grid = frames
        .first()
        .ok_or_else(|| Error::invalid("empty trajectory"))?
        .grid;
    let mut views = Vec::with_capacity(frames.len());
    for fs in frames {
        if fs.grid != grid {
            return Err(Error::GridMismatch(format!(
                "frame at t = {} has grid {:?}, expected {:?}",
                fs.t, fs.grid, grid
            )));
        }
        views.push(Frame {
            t: fs.t,
            f_a: &fs.f_a,
            f_p: &fs.f_p,
            m: moments(fs),
        });
    }
    weak_residual_frames(grid, &views, h, params, &CoefficientSet::cubic())
}

/// The same residual evaluated on empirical fields, with `f^σ = h^σ/Δθ`
/// and the empirical polarization field.
pub fn weak_residual_empirical(
    fields: &[EmpiricalField],
    times: &[f64],
    h: &TestFunction,
    params: &PdeParams,
) -> Result<WeakResidual> {
    if fields.len() != times.len() {
        return Err(Error::invalid(format!(
            "{} fields for {} times",
            fields.len(),
            times.len()
        )));
    }
    let first = fields
        .first()
        .ok_or_else(|| Error::invalid("empty trajectory"))?;
    let grid = PdeGrid::new(first.cells, first.ntheta)?;
    let dth = grid.dtheta();
    let conv: Vec<(Vec<f64>, Vec<f64>)> = fields
        .iter()
        .map(|f| {
            if f.cells != grid.g || f.ntheta != grid.ntheta {
                return Err(Error::GridMismatch(format!(
                    "field {}×{} differs from {}×{}",
                    f.cells, f.ntheta, grid.g, grid.ntheta
                )));
            }
            Ok((
                f.hist_a.iter().map(|v| v / dth).collect(),
                f.hist_p.iter().map(|v| v / dth).collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let views: Vec<Frame> = fields
        .iter()
        .zip(&conv)
        .zip(times)
        .map(|((f, (a, p)), &t)| Frame {
            t,
            f_a: a,
            f_p: p,
            m: Moments {
                rho_a: f.rho_a.clone(),
                rho_p: f.rho_p.clone(),
                px: f.px.clone(),
                py: f.py.clone(),
            },
        })
        .collect();
    weak_residual_frames(grid, &views, h, params, &CoefficientSet::cubic())
}

fn weak_residual_frames(
    grid: PdeGrid,
    frames: &[Frame],
    h: &TestFunction,
    params: &PdeParams,
    cs: &CoefficientSet,
) -> Result<WeakResidual> {
    if frames.len() < 2 {
        return Err(Error::invalid("weak residual needs at least two frames"));
    }
    let dt = (frames[frames.len() - 1].t - frames[0].t) / (frames.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::invalid("frame times must increase"));
    }
    for (i, f) in frames.iter().enumerate() {
        let expected = frames[0].t + i as f64 * dt;
        if (f.t - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
            return Err(Error::invalid(format!(
                "frame {i} at t = {} breaks uniform spacing {dt}",
                f.t
            )));
        }
    }
    let omega2: Vec<f64> = match (0..grid.ntheta)
        .map(|k| h.omega.second_derivative(grid.theta(k)))
        .collect()
    {
        Some(v) => v,
        None if params.d_r == 0.0 => vec![0.0; grid.ntheta],
        None => return Err(Error::invalid("tabulated ω has no second derivative")),
    };
    let omega: Vec<f64> = (0..grid.ntheta)
        .map(|k| h.omega.eval(grid.theta(k)))
        .collect();
    let (cos, sin) = trig_tables(grid);

    let (g, nt) = (grid.g, grid.ntheta);
    let dx = grid.dx();
    let vol = dx * dx * grid.dtheta();
    let dth = grid.dtheta();
    // ⟨f, H⟩ and the time integrand for both species
    let pairing = |f: &Frame| -> (f64, f64) {
        let mut acc = (0.0, 0.0);
        for y in 0..g {
            for x in 0..g {
                let gv = h.spatial.value(f.t, grid.position(x, y));
                let c = y * g + x;
                let (mut wa, mut wp) = (0.0, 0.0);
                for k in 0..nt {
                    wa += f.f_a[c * nt + k] * omega[k];
                    wp += f.f_p[c * nt + k] * omega[k];
                }
                acc.0 += gv * wa;
                acc.1 += gv * wp;
            }
        }
        (acc.0 * vol, acc.1 * vol)
    };
    let integrand = |f: &Frame| -> (f64, f64) {
        let rho: Vec<f64> =
            f.m.rho_a
                .iter()
                .zip(&f.m.rho_p)
                .map(|(a, p)| a + p)
                .collect();
        let mut acc = (0.0, 0.0);
        for y in 0..g {
            for x in 0..g {
                let c = y * g + x;
                let u = grid.position(x, y);
                let gv = h.spatial.value(f.t, u);
                let gt = h.spatial.dt(f.t, u);
                let gg = h.spatial.grad(f.t, u);
                let lap = h.spatial.laplacian(f.t, u);
                let grad_rho = [
                    (rho[y * g + (x + 1) % g] - rho[y * g + (x + g - 1) % g]) / (2.0 * dx),
                    (rho[((y + 1) % g) * g + x] - rho[((y + g - 1) % g) * g + x]) / (2.0 * dx),
                ];
                let r = rho[c];
                let ds = cs.ds(r);
                let cross =
                    (cs.big_d(r) - cs.ds_prime(r)) * (gg[0] * grad_rho[0] + gg[1] * grad_rho[1]);
                let diff = params.d_t * (lap * ds - cross);
                let (mut w0a, mut w2a, mut wca, mut wsa, mut w0p, mut w2p) =
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for k in 0..nt {
                    let a = f.f_a[c * nt + k];
                    let p = f.f_p[c * nt + k];
                    w0a += a * omega[k];
                    w2a += a * omega2[k];
                    wca += a * omega[k] * cos[k];
                    wsa += a * omega[k] * sin[k];
                    w0p += p * omega[k];
                    w2p += p * omega2[k];
                }
                let drift = params.v0
                    * (cs.s(r) * (gg[0] * f.m.px[c] + gg[1] * f.m.py[c]) * w0a
                        + ds * (gg[0] * wca + gg[1] * wsa));
                acc.0 += gt * w0a + params.d_r * gv * w2a + diff * w0a + drift;
                acc.1 += gt * w0p + params.d_r * gv * w2p + diff * w0p;
            }
        }
        (acc.0 * dx * dx * dth, acc.1 * dx * dx * dth)
    };
    let (first, last) = (&frames[0], &frames[frames.len() - 1]);
    let (h0a, h0p) = pairing(first);
    let (hta, htp) = pairing(last);
    let mut int = (0.0, 0.0);
    for (i, f) in frames.iter().enumerate() {
        let w = if i == 0 || i + 1 == frames.len() {
            0.5 * dt
        } else {
            dt
        };
        let (a, p) = integrand(f);
        int.0 += w * a;
        int.1 += w * p;
    }
    Ok(WeakResidual {
        active: (hta - h0a - int.0).abs(),
        passive: (htp - h0p - int.1).abs(),
    })
}

/// Average of a periodic cell field over the box of half-width `w` centred
/// at each of `cells × cells` evenly spaced points, treating cell values as
/// constant on their cells.
pub fn box_average(field: &[f64], g: usize, w: f64, cells: usize) -> Result<Vec<f64>> {
    if field.len() != g * g {
        return Err(Error::GridMismatch(format!(
            "field of length {} on a {g}×{g} grid",
            field.len()
        )));
    }
    if !(w > 0.0 && 2.0 * w <= 1.0) {
        return Err(Error::invalid(format!(
            "box half-width {w} outside (0, 1/2]"
        )));
    }
    let dx = 1.0 / g as f64;
    let weights = |u0: f64| -> Vec<f64> {
        (0..g)
            .map(|j| {
                let c = j as f64 * dx;
                let mut d = (c - u0).rem_euclid(1.0);
                if d > 0.5 {
                    d -= 1.0;
                }
                let lo = (d - 0.5 * dx).max(-w);
                let hi = (d + 0.5 * dx).min(w);
                (hi - lo).max(0.0)
            })
            .collect()
    };
    let wts: Vec<Vec<f64>> = (0..cells)
        .map(|i| weights(i as f64 / cells as f64))
        .collect();
    let norm = 1.0 / (4.0 * w * w);
    let mut out = vec![0.0; cells * cells];
    for cy in 0..cells {
        for cx in 0..cells {
            let mut acc = 0.0;
            for (y, wy) in wts[cy].iter().enumerate() {
                if *wy == 0.0 {
                    continue;
                }
                let row = &field[y * g..(y + 1) * g];
                let s: f64 = row.iter().zip(&wts[cx]).map(|(v, wx)| v * wx).sum();
                acc += wy * s;
            }
            out[cy * cells + cx] = acc * norm;
        }
    }
    Ok(out)
}
