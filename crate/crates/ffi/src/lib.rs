//! C ABI over `mimo_gfm`.
//!
//! Every fallible function returns an [`MgStatus`]; on failure the message is
//! available from [`mg_last_error`] on the same thread. Sessions and traces
//! are opaque handles released with their `_free` functions. Matrices are
//! passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mimo_gfm::closedloop::{find_equilibrium, flat_start, Disturbance, GainSet, N_STATES};
use mimo_gfm::config::Config;
use mimo_gfm::hinf::{
    evaluate, hinf_norm_bisection, synthesize, ObjectiveContext, SynthesisProblem,
};
use mimo_gfm::linear::LtiSystem;
use mimo_gfm::plant::{plant_deriv, ControlInput, PlantParams, PlantState};
use mimo_gfm::sim::simulate;
use mimo_gfm::Error;
use nalgebra::DMatrix;

/// Number of closed-loop states written by [`mg_equilibrium`].
pub const MG_N_STATES: usize = 17;
/// Number of power-stage states used by [`mg_plant_deriv`].
pub const MG_N_PLANT_STATES: usize = 10;
/// Length of the gain vector written by [`mg_synthesize`].
pub const MG_N_GAINS: usize = 17;
/// Capacity of [`MgAnalysis::channel_norms`].
pub const MG_MAX_CHANNELS: usize = 4;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    NonConvergence = 4,
    Infeasible = 5,
    BlowUp = 6,
    Unstable = 7,
    Numerical = 8,
    Panic = 9,
}

/// Per-unit plant parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgPlantParams {
    pub l_f: f64,
    pub c_f: f64,
    pub l_g: f64,
    pub r_g: f64,
    pub c_dc: f64,
    pub t_sw: f64,
    pub omega_b: f64,
    pub v_g: f64,
    pub omega_g: f64,
}

impl From<PlantParams> for MgPlantParams {
    fn from(p: PlantParams) -> Self {
        Self {
            l_f: p.l_f,
            c_f: p.c_f,
            l_g: p.l_g,
            r_g: p.r_g,
            c_dc: p.c_dc,
            t_sw: p.t_sw,
            omega_b: p.omega_b,
            v_g: p.v_g,
            omega_g: p.omega_g,
        }
    }
}

impl From<MgPlantParams> for PlantParams {
    fn from(p: MgPlantParams) -> Self {
        Self {
            l_f: p.l_f,
            c_f: p.c_f,
            l_g: p.l_g,
            r_g: p.r_g,
            c_dc: p.c_dc,
            t_sw: p.t_sw,
            omega_b: p.omega_b,
            v_g: p.v_g,
            omega_g: p.omega_g,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MgAnalysis {
    pub spectral_abscissa: f64,
    /// Max of the channel norms, or the instability penalty.
    pub objective: f64,
    /// First `n_channels` entries are valid when `stable` is set.
    pub channel_norms: [f64; MG_MAX_CHANNELS],
    pub n_channels: u32,
    pub stable: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MgSynthesis {
    pub objective: f64,
    pub initial_objective: f64,
    pub evaluations: u64,
    pub iterations: u64,
}

/// Loaded configuration.
pub struct MgSession {
    cfg: Config,
    names: Vec<CString>,
}

/// Sampled simulation trace.
pub struct MgTrace {
    columns: Vec<CString>,
    /// Row-major, `1 + columns` values per row, time first.
    data: Vec<f64>,
    rows: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } | Error::Parse(_) | Error::Scenario(_) | Error::Io(_) => {
                MgStatus::Config
            }
            Error::NonConvergence { .. } | Error::SingularJacobian | Error::DcLinkCollapse(_) => {
                MgStatus::NonConvergence
            }
            Error::InfeasibleStart(_) => MgStatus::Infeasible,
            Error::BlowUp { .. } => MgStatus::BlowUp,
            Error::Unstable(_) => MgStatus::Unstable,
            Error::Domain(_) | Error::ImproperWeight { .. } => MgStatus::InvalidArgument,
            _ => MgStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MgStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MgStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| {
        Failure(
            MgStatus::InvalidArgument,
            "string is not valid UTF-8".into(),
        )
    })
}

unsafe fn session<'a>(s: *const MgSession) -> Result<&'a MgSession, Failure> {
    s.as_ref().ok_or_else(|| null("session"))
}

fn nominal(cfg: &Config) -> Disturbance {
    Disturbance {
        omega_g: cfg.params.omega_g,
        v_g: cfg.params.v_g,
    }
}

fn context(cfg: &Config, g: &GainSet) -> ObjectiveContext {
    let mut ctx =
        ObjectiveContext::standard(cfg.refs, nominal(cfg), cfg.params, g.gfm.d_p, g.gfm.d_q);
    ctx.channels = cfg.synthesis.channels.clone();
    ctx.norm = cfg.synthesis.norm;
    ctx
}

fn boxed_session(cfg: Config, out: *mut *mut MgSession) {
    let names = cfg
        .gain_sets
        .iter()
        .map(|(n, _)| CString::new(n.as_str()).unwrap_or_default())
        .collect();
    // SAFETY: checked non-null by the caller.
    unsafe { *out = Box::into_raw(Box::new(MgSession { cfg, names })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn mg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a configuration file (includes resolve relative to it).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_session_from_file(
    path: *const c_char,
    out: *mut *mut MgSession,
) -> MgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = opt_str(path)?.ok_or_else(|| null("path"))?;
        boxed_session(Config::load(&[PathBuf::from(path)])?, out);
        Ok(())
    })
}

/// Session with the shipped reference configuration (both published gain
/// sets, both step scenarios, the standard synthesis settings).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_session_reference(out: *mut *mut MgSession) -> MgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        boxed_session(Config::reference(), out);
        Ok(())
    })
}

/// # Safety
/// `s` must come from a session constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mg_session_free(s: *mut MgSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live session or NULL.
#[no_mangle]
pub unsafe extern "C" fn mg_session_gain_set_count(s: *const MgSession) -> usize {
    s.as_ref().map_or(0, |s| s.names.len())
}

/// Name of the `index`-th gain set, owned by the session; NULL when out of
/// range.
///
/// # Safety
/// `s` must be a live session or NULL.
#[no_mangle]
pub unsafe extern "C" fn mg_session_gain_set_name(
    s: *const MgSession,
    index: usize,
) -> *const c_char {
    s.as_ref()
        .and_then(|s| s.names.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Solves the closed-loop equilibrium. `gains` may be NULL to use the
/// session's active set. Writes `MG_N_STATES` values.
///
/// # Safety
/// `states` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mg_equilibrium(
    s: *const MgSession,
    gains: *const c_char,
    states: *mut f64,
    len: usize,
) -> MgStatus {
    guard(|| {
        let s = session(s)?;
        if states.is_null() {
            return Err(null("states"));
        }
        if len < N_STATES {
            return Err(Failure(
                MgStatus::InvalidArgument,
                format!("need room for {N_STATES} states, got {len}"),
            ));
        }
        let (_, g) = s.cfg.select_gains(opt_str(gains)?)?;
        let cfg = &s.cfg;
        let z = find_equilibrium(
            &cfg.refs,
            &nominal(cfg),
            &g,
            &cfg.params,
            &flat_start(&cfg.refs, &g, &cfg.params),
        )?;
        std::slice::from_raw_parts_mut(states, N_STATES).copy_from_slice(&z.0);
        Ok(())
    })
}

/// Stability and weighted channel norms of one gain set.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_analyze(
    s: *const MgSession,
    gains: *const c_char,
    out: *mut MgAnalysis,
) -> MgStatus {
    guard(|| {
        let s = session(s)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (_, g) = s.cfg.select_gains(opt_str(gains)?)?;
        let e = evaluate(&g, &context(&s.cfg, &g))?;
        let mut norms = [0.0; MG_MAX_CHANNELS];
        for (slot, v) in norms.iter_mut().zip(&e.channel_norms) {
            *slot = *v;
        }
        *out = MgAnalysis {
            spectral_abscissa: e.spectral_abscissa,
            objective: e.objective,
            channel_norms: norms,
            n_channels: e.channel_norms.len().min(MG_MAX_CHANNELS) as u32,
            stable: e.stable(),
        };
        Ok(())
    })
}

/// Runs a configured scenario. Release the trace with [`mg_trace_free`].
///
/// # Safety
/// `scenario` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_simulate(
    s: *const MgSession,
    scenario: *const c_char,
    gains: *const c_char,
    out: *mut *mut MgTrace,
) -> MgStatus {
    guard(|| {
        let s = session(s)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let name = opt_str(scenario)?.ok_or_else(|| null("scenario"))?;
        let scn = s.cfg.scenario(name)?;
        let (_, g) = s.cfg.select_gains(opt_str(gains)?)?;
        let trace = simulate(scn, &g, &s.cfg.refs, &s.cfg.params)?;
        let mut data = Vec::with_capacity(trace.len() * (trace.columns.len() + 1));
        for (t, row) in trace.time.iter().zip(&trace.rows) {
            data.push(*t);
            data.extend_from_slice(row);
        }
        let columns = trace
            .columns
            .iter()
            .map(|c| CString::new(c.as_str()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(MgTrace {
            columns,
            data,
            rows: trace.len(),
        }));
        Ok(())
    })
}

/// # Safety
/// `t` must be a live trace or NULL.
#[no_mangle]
pub unsafe extern "C" fn mg_trace_rows(t: *const MgTrace) -> usize {
    t.as_ref().map_or(0, |t| t.rows)
}

/// Number of signal columns, excluding time.
///
/// # Safety
/// `t` must be a live trace or NULL.
#[no_mangle]
pub unsafe extern "C" fn mg_trace_columns(t: *const MgTrace) -> usize {
    t.as_ref().map_or(0, |t| t.columns.len())
}

/// # Safety
/// `t` must be a live trace or NULL.
#[no_mangle]
pub unsafe extern "C" fn mg_trace_column_name(t: *const MgTrace, index: usize) -> *const c_char {
    t.as_ref()
        .and_then(|t| t.columns.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Row-major samples, `1 + mg_trace_columns` values per row, time first.
///
/// # Safety
/// `t` must be a live trace or NULL.
#[no_mangle]
pub unsafe extern "C" fn mg_trace_data(t: *const MgTrace) -> *const f64 {
    t.as_ref().map_or(ptr::null(), |t| t.data.as_ptr())
}

/// # Safety
/// `t` must come from [`mg_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mg_trace_free(t: *mut MgTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Per-unit parameters of the reference setup.
#[no_mangle]
pub extern "C" fn mg_plant_params_reference() -> MgPlantParams {
    PlantParams::nominal().into()
}

/// Power-stage derivative for state `x` (`MG_N_PLANT_STATES` values),
/// voltage command `(e_dref, e_qref)` and controller input
/// `(i_u, omega_u, e_u)`.
///
/// # Safety
/// `x` and `dx` must hold `MG_N_PLANT_STATES` doubles; `params` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mg_plant_deriv(
    x: *const f64,
    e_dref: f64,
    e_qref: f64,
    i_u: f64,
    omega_u: f64,
    e_u: f64,
    params: *const MgPlantParams,
    dx: *mut f64,
) -> MgStatus {
    guard(|| {
        if x.is_null() || dx.is_null() {
            return Err(null("state buffer"));
        }
        let p: PlantParams = (*params.as_ref().ok_or_else(|| null("params"))?).into();
        let state = PlantState::from_slice(std::slice::from_raw_parts(x, PlantState::LEN));
        let d = plant_deriv(
            &state,
            (e_dref, e_qref),
            &ControlInput { i_u, omega_u, e_u },
            &p,
        )?;
        std::slice::from_raw_parts_mut(dx, PlantState::LEN).copy_from_slice(&d.to_array());
        Ok(())
    })
}

/// H-infinity norm of a stable system by Hamiltonian bisection. `a` is
/// `n x n`, `b` is `n x m`, `c` is `p x n`, `d` is `p x m`, all row-major.
///
/// # Safety
/// Matrix pointers must hold the stated number of doubles (may be NULL when
/// that count is zero).
#[no_mangle]
pub unsafe extern "C" fn mg_hinf_norm(
    n: usize,
    m: usize,
    p: usize,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    d: *const f64,
    tol: f64,
    out: *mut f64,
) -> MgStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mat =
            |ptr: *const f64, r: usize, k: usize, name: &str| -> Result<DMatrix<f64>, Failure> {
                if r * k == 0 {
                    return Ok(DMatrix::zeros(r, k));
                }
                if ptr.is_null() {
                    return Err(null(name));
                }
                Ok(DMatrix::from_row_slice(
                    r,
                    k,
                    std::slice::from_raw_parts(ptr, r * k),
                ))
            };
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Failure(
                MgStatus::InvalidArgument,
                format!("tolerance must be in (0, 1), got {tol}"),
            ));
        }
        let sys = LtiSystem::new(
            mat(a, n, n, "a")?,
            mat(b, n, m, "b")?,
            mat(c, p, n, "c")?,
            mat(d, p, m, "d")?,
        )?;
        *out = hinf_norm_bisection(&sys, tol)?;
        Ok(())
    })
}

/// Runs the configured synthesis. `initial` may be NULL to use the configured
/// start set; negative `budget` or `seed` keep the configured values. Writes
/// `MG_N_GAINS` gains in the library's gain order.
///
/// # Safety
/// `theta` must hold `MG_N_GAINS` doubles; `out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mg_synthesize(
    s: *const MgSession,
    initial: *const c_char,
    budget: i64,
    seed: i64,
    theta: *mut f64,
    out: *mut MgSynthesis,
) -> MgStatus {
    guard(|| {
        let s = session(s)?;
        if theta.is_null() {
            return Err(null("theta"));
        }
        let settings = &s.cfg.synthesis;
        let name = opt_str(initial)?.unwrap_or(&settings.initial);
        let g0 = *s.cfg.gain_set(name)?;
        let frozen: Vec<&str> = settings.frozen.iter().map(String::as_str).collect();
        let mut problem = SynthesisProblem::new(g0).freeze(&frozen)?;
        problem.options = settings.options;
        if budget >= 0 {
            problem.options.max_evaluations = budget as usize;
        }
        if seed >= 0 {
            problem.options.seed = seed as u64;
        }
        let r = synthesize(&problem, &context(&s.cfg, &g0))?;
        std::slice::from_raw_parts_mut(theta, MG_N_GAINS).copy_from_slice(&r.gains.to_theta());
        if let Some(o) = out.as_mut() {
            *o = MgSynthesis {
                objective: r.objective,
                initial_objective: r.initial_objective,
                evaluations: r.evaluations as u64,
                iterations: r.iterations as u64,
            };
        }
        Ok(())
    })
}
