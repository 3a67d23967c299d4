//! C ABI over the simulator, the PDE solver and the closed-form
//! coefficients.
//!
//! Every fallible function returns an [`AplgStatus`]; on failure the message
//! is available from [`aplg_last_error_message`] on the same thread. Handles
//! are opaque, created by `*_new` functions and released with the matching
//! `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aplg::kmc::{SimParams, Simulation};
use aplg::lattice::Tag;
use aplg::micro::{build_generator, spectral_gap, CanonicalState};
use aplg::pde::{moments, FieldState, PdeGrid, PdeParams, PdeSolver, TimeStep};
use aplg::sampling::{sample_initial, DensityProfile};
use aplg::transport;
use aplg::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AplgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CflViolation = 3,
    NumericalFailure = 4,
    Io = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AplgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Cfl { .. } => AplgStatus::CflViolation,
            Error::NonFinite { .. }
            | Error::ExclusionViolated { .. }
            | Error::EigenNotConverged { .. } => AplgStatus::NumericalFailure,
            Error::Io { .. } | Error::Csv { .. } | Error::Json(_) => AplgStatus::Io,
            _ => AplgStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AplgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AplgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AplgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AplgStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AplgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn aplg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn aplg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Microscopic model constants.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AplgSimParams {
    pub n: u32,
    pub d_t: f64,
    pub v0: f64,
    pub d_r: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl From<AplgSimParams> for SimParams {
    fn from(p: AplgSimParams) -> Self {
        SimParams {
            n: p.n as usize,
            d_t: p.d_t,
            v0: p.v0,
            d_r: p.d_r,
            t_end: p.t_end,
            seed: p.seed,
        }
    }
}

/// Opaque KMC trajectory.
pub struct AplgSimulation {
    inner: Simulation,
}

/// Start a trajectory from a configuration sampled from `profile`
/// (`family:key=value,...`), using random stream `stream`.
///
/// # Safety
/// `params` and `profile` must be valid pointers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aplg_simulation_new(
    params: *const AplgSimParams,
    profile: *const c_char,
    stream: u64,
    out: *mut *mut AplgSimulation,
) -> AplgStatus {
    guard(|| {
        let p: SimParams = (*in_ref(params, "params")?).into();
        let profile: DensityProfile = c_str(profile, "profile")?.parse()?;
        let out = out_ref(out, "out")?;
        p.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(stream);
        let cfg = sample_initial(&profile, p.n, &mut rng)?;
        let sim = Simulation::new(cfg, p, stream)?;
        *out = Box::into_raw(Box::new(AplgSimulation { inner: sim }));
        Ok(())
    })
}

/// Advance to macroscopic time `t` (not past the horizon).
///
/// # Safety
/// `sim` must come from [`aplg_simulation_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn aplg_simulation_advance(sim: *mut AplgSimulation, t: f64) -> AplgStatus {
    guard(|| {
        let sim = out_ref(sim, "sim")?;
        let (now, end) = (sim.inner.time(), sim.inner.params().t_end);
        if !(t.is_finite() && t >= now && t <= end) {
            return Err(Failure(
                AplgStatus::InvalidArgument,
                format!("target time {t} outside [{now}, {end}]"),
            ));
        }
        sim.inner.advance_to(t);
        Ok(())
    })
}

/// Current time, accepted-event count and species counts.
///
/// # Safety
/// `sim` must be live; each output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn aplg_simulation_status(
    sim: *const AplgSimulation,
    time: *mut f64,
    events: *mut u64,
    active: *mut usize,
    passive: *mut usize,
) -> AplgStatus {
    guard(|| {
        let sim = in_ref(sim, "sim")?;
        let (a, p) = sim.inner.configuration_raw().counts();
        if let Some(t) = time.as_mut() {
            *t = sim.inner.time();
        }
        if let Some(e) = events.as_mut() {
            *e = sim.inner.clock().event_count;
        }
        if let Some(x) = active.as_mut() {
            *x = a;
        }
        if let Some(x) = passive.as_mut() {
            *x = p;
        }
        Ok(())
    })
}

/// Copy the site states into `tags` (0 empty, 1 active, 2 passive) and
/// `angles`, both of length `len = n²`, row-major with `x` fastest.
///
/// # Safety
/// `sim` must be live; `tags` and `angles` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn aplg_simulation_sites(
    sim: *mut AplgSimulation,
    tags: *mut u8,
    angles: *mut f64,
    len: usize,
) -> AplgStatus {
    guard(|| {
        let sim = out_ref(sim, "sim")?;
        let cfg = sim.inner.synchronized();
        let n2 = cfg.n() * cfg.n();
        if len != n2 {
            return Err(Failure(
                AplgStatus::InvalidArgument,
                format!("buffer length {len}, need {n2}"),
            ));
        }
        let tags = slice_mut(tags, len, "tags")?;
        let angles = slice_mut(angles, len, "angles")?;
        for (i, s) in cfg.sites().iter().enumerate() {
            tags[i] = match s.tag() {
                Tag::Empty => 0,
                Tag::Active => 1,
                Tag::Passive => 2,
            };
            angles[i] = s.angle();
        }
        Ok(())
    })
}

/// # Safety
/// `sim` must come from [`aplg_simulation_new`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn aplg_simulation_free(sim: *mut AplgSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Macroscopic model constants.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AplgPdeParams {
    pub d_t: f64,
    pub v0: f64,
    pub d_r: f64,
    /// Nonzero adds Lax-Friedrichs dissipation to the drift flux.
    pub llf: u8,
}

/// Opaque PDE solver together with its current state.
pub struct AplgPdeSolver {
    solver: PdeSolver,
    state: FieldState,
}

/// Create a solver on a `g × g × ntheta` grid initialized from `profile`.
///
/// # Safety
/// `params` and `profile` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aplg_pde_new(
    g: u32,
    ntheta: u32,
    params: *const AplgPdeParams,
    profile: *const c_char,
    out: *mut *mut AplgPdeSolver,
) -> AplgStatus {
    guard(|| {
        let p = *in_ref(params, "params")?;
        let profile: DensityProfile = c_str(profile, "profile")?.parse()?;
        let out = out_ref(out, "out")?;
        let grid = PdeGrid::new(g as usize, ntheta as usize)?;
        let params = PdeParams {
            d_t: p.d_t,
            v0: p.v0,
            d_r: p.d_r,
            llf: p.llf != 0,
        };
        let solver = PdeSolver::new(grid, params)?;
        let state = FieldState::from_profile(grid, &profile)?;
        *out = Box::into_raw(Box::new(AplgPdeSolver { solver, state }));
        Ok(())
    })
}

/// Integrate to time `t`; `dt <= 0` picks the step from the stability bound.
///
/// # Safety
/// `pde` must be live.
#[no_mangle]
pub unsafe extern "C" fn aplg_pde_advance(pde: *mut AplgPdeSolver, t: f64, dt: f64) -> AplgStatus {
    guard(|| {
        let pde = out_ref(pde, "pde")?;
        let step = if dt > 0.0 {
            TimeStep::Fixed(dt)
        } else {
            TimeStep::Auto
        };
        pde.solver.advance(&mut pde.state, t, step)?;
        Ok(())
    })
}

/// Current time, species masses and stability bound; null outputs are skipped.
///
/// # Safety
/// `pde` must be live.
#[no_mangle]
pub unsafe extern "C" fn aplg_pde_status(
    pde: *const AplgPdeSolver,
    time: *mut f64,
    mass_a: *mut f64,
    mass_p: *mut f64,
    cfl_bound: *mut f64,
) -> AplgStatus {
    guard(|| {
        let pde = in_ref(pde, "pde")?;
        let (ma, mp) = pde.state.masses();
        for (ptr, v) in [
            (time, pde.state.t),
            (mass_a, ma),
            (mass_p, mp),
            (cfl_bound, pde.solver.cfl_bound()),
        ] {
            if let Some(x) = ptr.as_mut() {
                *x = v;
            }
        }
        Ok(())
    })
}

/// Copy `ρ^a`, `ρ^p` (length `g²`, row-major) into the given buffers.
///
/// # Safety
/// `pde` must be live and both buffers must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn aplg_pde_densities(
    pde: *const AplgPdeSolver,
    rho_a: *mut f64,
    rho_p: *mut f64,
    len: usize,
) -> AplgStatus {
    guard(|| {
        let pde = in_ref(pde, "pde")?;
        let m = moments(&pde.state);
        if len != m.rho_a.len() {
            return Err(Failure(
                AplgStatus::InvalidArgument,
                format!("buffer length {len}, need {}", m.rho_a.len()),
            ));
        }
        slice_mut(rho_a, len, "rho_a")?.copy_from_slice(&m.rho_a);
        slice_mut(rho_p, len, "rho_p")?.copy_from_slice(&m.rho_p);
        Ok(())
    })
}

/// # Safety
/// `pde` must come from [`aplg_pde_new`] or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn aplg_pde_free(pde: *mut AplgPdeSolver) {
    if !pde.is_null() {
        drop(Box::from_raw(pde));
    }
}

fn coefficient(f: fn(f64) -> aplg::Result<f64>, alpha: f64, out: *mut f64) -> AplgStatus {
    guard(|| {
        let v = f(alpha)?;
        // SAFETY: checked for null by out_ref; caller guarantees writability.
        unsafe { *out_ref(out, "out")? = v };
        Ok(())
    })
}

/// Self-diffusion coefficient `d_s(α)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aplg_d_s(alpha: f64, out: *mut f64) -> AplgStatus {
    coefficient(transport::d_s, alpha, out)
}

/// Derivative `d_s'(α)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aplg_d_s_prime(alpha: f64, out: *mut f64) -> AplgStatus {
    coefficient(transport::d_s_prime, alpha, out)
}

/// `𝒟(α) = (1 − d_s(α))/α`, continuously extended to 0.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aplg_big_d(alpha: f64, out: *mut f64) -> AplgStatus {
    coefficient(transport::big_d, alpha, out)
}

/// `s(α) = 𝒟(α) − 1`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aplg_s(alpha: f64, out: *mut f64) -> AplgStatus {
    coefficient(transport::s, alpha, out)
}

/// Mobility block coefficients `[aa, ap, pp]`.
///
/// # Safety
/// `out` must hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn aplg_mobility(alpha_a: f64, alpha_p: f64, out: *mut f64) -> AplgStatus {
    guard(|| {
        let m = transport::mobility(alpha_a, alpha_p)?;
        slice_mut(out, 3, "out")?.copy_from_slice(&[m.aa, m.ap, m.pp]);
        Ok(())
    })
}

/// Spectral gap of the confined generator on `B_l` with the given angle lists.
///
/// # Safety
/// `theta_a`/`theta_p` must hold `ka`/`kp` doubles (may be null when zero);
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aplg_spectral_gap(
    l: u32,
    theta_a: *const f64,
    ka: usize,
    theta_p: *const f64,
    kp: usize,
    out: *mut f64,
) -> AplgStatus {
    guard(|| {
        let a = slice(theta_a, ka, "theta_a")?.to_vec();
        let p = slice(theta_p, kp, "theta_p")?.to_vec();
        let out = out_ref(out, "out")?;
        let cs = CanonicalState::new(l as usize, a, p)?;
        *out = spectral_gap(&build_generator(&cs)?)?.gap;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(aplg_last_error_message()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn coefficients_and_errors() {
        let mut v = 0.0;
        assert_eq!(unsafe { aplg_d_s(0.0, &mut v) }, AplgStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(
            unsafe { aplg_d_s(1.5, &mut v) },
            AplgStatus::InvalidArgument
        );
        assert!(last_error().contains("1.5"));
        assert_eq!(
            unsafe { aplg_d_s(0.5, ptr::null_mut()) },
            AplgStatus::NullPointer
        );
        let mut m = [0.0; 3];
        assert_eq!(
            unsafe { aplg_mobility(0.0, 0.0, m.as_mut_ptr()) },
            AplgStatus::InvalidArgument
        );
    }

    #[test]
    fn simulation_round_trip() {
        let params = AplgSimParams {
            n: 16,
            d_t: 1.0,
            v0: 1.0,
            d_r: 1.0,
            t_end: 0.01,
            seed: 3,
        };
        let profile = CString::new("constant:rho_a=0.3,rho_p=0.2").unwrap();
        let mut sim = ptr::null_mut();
        unsafe {
            assert_eq!(
                aplg_simulation_new(&params, profile.as_ptr(), 0, &mut sim),
                AplgStatus::Ok
            );
            let (mut a0, mut p0) = (0usize, 0usize);
            aplg_simulation_status(sim, ptr::null_mut(), ptr::null_mut(), &mut a0, &mut p0);
            assert_eq!(aplg_simulation_advance(sim, 0.01), AplgStatus::Ok);
            assert_eq!(
                aplg_simulation_advance(sim, 0.5),
                AplgStatus::InvalidArgument
            );
            let (mut t, mut ev, mut a1, mut p1) = (0.0, 0u64, 0usize, 0usize);
            aplg_simulation_status(sim, &mut t, &mut ev, &mut a1, &mut p1);
            assert_eq!((t, a1, p1), (0.01, a0, p0));
            assert!(ev > 0);
            let mut tags = vec![0u8; 256];
            let mut angles = vec![0.0; 256];
            assert_eq!(
                aplg_simulation_sites(sim, tags.as_mut_ptr(), angles.as_mut_ptr(), 256),
                AplgStatus::Ok
            );
            assert_eq!(tags.iter().filter(|&&x| x == 1).count(), a0);
            assert_eq!(
                aplg_simulation_sites(sim, tags.as_mut_ptr(), angles.as_mut_ptr(), 10),
                AplgStatus::InvalidArgument
            );
            aplg_simulation_free(sim);
        }
    }

    #[test]
    fn pde_round_trip() {
        let params = AplgPdeParams {
            d_t: 1.0,
            v0: 1.0,
            d_r: 1.0,
            llf: 0,
        };
        let profile = CString::new("fourier:rho_a=0.3,rho_p=0.2,amp=0.2").unwrap();
        let mut pde = ptr::null_mut();
        unsafe {
            assert_eq!(
                aplg_pde_new(16, 8, &params, profile.as_ptr(), &mut pde),
                AplgStatus::Ok
            );
            let (mut m0, mut bound) = (0.0, 0.0);
            aplg_pde_status(pde, ptr::null_mut(), &mut m0, ptr::null_mut(), &mut bound);
            assert_eq!(
                aplg_pde_advance(pde, 0.001, 10.0 * bound),
                AplgStatus::CflViolation
            );
            assert_eq!(aplg_pde_advance(pde, 0.001, 0.0), AplgStatus::Ok);
            let mut m1 = 0.0;
            aplg_pde_status(
                pde,
                ptr::null_mut(),
                &mut m1,
                ptr::null_mut(),
                ptr::null_mut(),
            );
            assert!((m1 - m0).abs() < 1e-12);
            let mut a = vec![0.0; 256];
            let mut p = vec![0.0; 256];
            assert_eq!(
                aplg_pde_densities(pde, a.as_mut_ptr(), p.as_mut_ptr(), 256),
                AplgStatus::Ok
            );
            assert!(a.iter().all(|v| *v > 0.0));
            aplg_pde_free(pde);
        }
    }

    #[test]
    fn gap_of_single_walker() {
        let mut g = 0.0;
        let a = [0.5];
        assert_eq!(
            unsafe { aplg_spectral_gap(1, a.as_ptr(), 1, ptr::null(), 0, &mut g) },
            AplgStatus::Ok
        );
        assert!((g - 1.0).abs() < 1e-9);
        assert_eq!(
            unsafe { aplg_spectral_gap(1, ptr::null(), 1, ptr::null(), 0, &mut g) },
            AplgStatus::NullPointer
        );
    }
}
