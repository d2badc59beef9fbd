//! C ABI over the simulator, the attractor catalog, the basin classifier and
//! trained policies.
//!
//! Every fallible function returns an [`ArStatus`]; on failure a
//! human-readable message is available from [`ar_last_error`] on the same
//! thread. Objects loaded from files are opaque handles released with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use attractor_rl::boa::BoaModel;
use attractor_rl::dynamics::{self, DuffingParams, IntegratorConfig, SimState};
use attractor_rl::env::Policy;
use attractor_rl::oracle::{AttractorCatalog, AttractorLabel};
use attractor_rl::Error;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Diverged = 5,
    Internal = 6,
}

/// Attractor label.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArLabel {
    /// Small-amplitude attractor.
    Sa = 0,
    /// Large-amplitude attractor.
    La = 1,
}

impl From<AttractorLabel> for ArLabel {
    fn from(l: AttractorLabel) -> Self {
        match l {
            AttractorLabel::SA => ArLabel::Sa,
            AttractorLabel::LA => ArLabel::La,
        }
    }
}

impl From<ArLabel> for AttractorLabel {
    fn from(l: ArLabel) -> Self {
        match l {
            ArLabel::Sa => AttractorLabel::SA,
            ArLabel::La => AttractorLabel::LA,
        }
    }
}

/// Oscillator state: position, velocity and forcing phase in `[0, 2pi)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArState {
    pub x: f64,
    pub v: f64,
    pub phi: f64,
}

impl From<SimState> for ArState {
    fn from(s: SimState) -> Self {
        ArState {
            x: s.x,
            v: s.v,
            phi: s.phi,
        }
    }
}

impl From<ArState> for SimState {
    fn from(s: ArState) -> Self {
        SimState::new(s.x, s.v, s.phi)
    }
}

/// `x'' + delta x' + alpha x + beta x^3 = gamma_f cos(phi + phi0) + a`,
/// with `phi' = omega`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArDuffingParams {
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_f: f64,
    pub omega: f64,
    pub phi0: f64,
}

impl From<DuffingParams> for ArDuffingParams {
    fn from(p: DuffingParams) -> Self {
        ArDuffingParams {
            delta: p.delta,
            alpha: p.alpha,
            beta: p.beta,
            gamma_f: p.gamma_f,
            omega: p.omega,
            phi0: p.phi0,
        }
    }
}

impl From<ArDuffingParams> for DuffingParams {
    fn from(p: ArDuffingParams) -> Self {
        DuffingParams {
            delta: p.delta,
            alpha: p.alpha,
            beta: p.beta,
            gamma_f: p.gamma_f,
            omega: p.omega,
            phi0: p.phi0,
        }
    }
}

/// RK4 step and control (zero-order hold) interval.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArIntegrator {
    pub dt_inner: f64,
    pub dt_control: f64,
}

impl From<IntegratorConfig> for ArIntegrator {
    fn from(c: IntegratorConfig) -> Self {
        ArIntegrator {
            dt_inner: c.dt_inner,
            dt_control: c.dt_control,
        }
    }
}

impl From<ArIntegrator> for IntegratorConfig {
    fn from(c: ArIntegrator) -> Self {
        IntegratorConfig {
            dt_inner: c.dt_inner,
            dt_control: c.dt_control,
        }
    }
}

/// Opaque attractor catalog.
pub struct ArCatalog(AttractorCatalog);

/// Opaque basin classifier.
pub struct ArBoaModel(BoaModel);

/// Opaque policy network with its action bound.
pub struct ArPolicy(Policy);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> ArStatus {
    match e {
        Error::Io { .. } | Error::Missing { .. } => ArStatus::Io,
        Error::Parse { .. } | Error::Version { .. } => ArStatus::Parse,
        Error::Diverged { .. } => ArStatus::Diverged,
        Error::Config(_) | Error::Shape(_) => ArStatus::InvalidArgument,
        _ => ArStatus::Internal,
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (ArStatus, String)>) -> ArStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ArStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ArStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (ArStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (ArStatus, String) {
    (ArStatus::NullPointer, format!("{name} is null"))
}

/// # Safety
/// `p` must be null or point to a valid `T`.
unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, (ArStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (ArStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| {
        (
            ArStatus::InvalidArgument,
            "path is not valid UTF-8".to_string(),
        )
    })?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `out` must be null or valid for a write of `T`.
unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), (ArStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn ar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ar_default_params() -> ArDuffingParams {
    DuffingParams::default().into()
}

#[no_mangle]
pub extern "C" fn ar_default_integrator() -> ArIntegrator {
    IntegratorConfig::default().into()
}

/// Advances `state` by one control interval under the constant force
/// `action`.
///
/// # Safety
/// All pointers must be valid; `out` may alias `state`.
#[no_mangle]
pub unsafe extern "C" fn ar_step_control(
    params: *const ArDuffingParams,
    integrator: *const ArIntegrator,
    state: *const ArState,
    action: f64,
    out: *mut ArState,
) -> ArStatus {
    guard(|| {
        let p: DuffingParams = (*deref(params, "params")?).into();
        let c: IntegratorConfig = (*deref(integrator, "integrator")?).into();
        let s: SimState = (*deref(state, "state")?).into();
        p.validate().map_err(lib_err)?;
        c.validate().map_err(lib_err)?;
        let next = dynamics::advance_control_step(&s, action, &c, &p).map_err(lib_err)?;
        write_out(out, next.into())
    })
}

/// Integrates for `duration` time units under the constant force `action`.
///
/// # Safety
/// All pointers must be valid; `out` may alias `state`.
#[no_mangle]
pub unsafe extern "C" fn ar_integrate(
    params: *const ArDuffingParams,
    integrator: *const ArIntegrator,
    state: *const ArState,
    action: f64,
    duration: f64,
    out: *mut ArState,
) -> ArStatus {
    guard(|| {
        let p: DuffingParams = (*deref(params, "params")?).into();
        let c: IntegratorConfig = (*deref(integrator, "integrator")?).into();
        let s: SimState = (*deref(state, "state")?).into();
        p.validate().map_err(lib_err)?;
        c.validate().map_err(lib_err)?;
        if duration.is_nan() || duration < 0.0 {
            return Err((ArStatus::InvalidArgument, "duration must be >= 0".into()));
        }
        let end = dynamics::integrate(&s, action, duration, &c, &p).map_err(lib_err)?;
        write_out(out, end.into())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_catalog_load(
    path: *const c_char,
    out: *mut *mut ArCatalog,
) -> ArStatus {
    guard(|| {
        let path = path_arg(path)?;
        let c = AttractorCatalog::load(&path).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(ArCatalog(c))))
    })
}

/// # Safety
/// `catalog` must be null or a handle from [`ar_catalog_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_catalog_free(catalog: *mut ArCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Steady-state amplitude `max |x|` of one attractor.
///
/// # Safety
/// `catalog` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_catalog_amplitude(
    catalog: *const ArCatalog,
    label: ArLabel,
    out: *mut f64,
) -> ArStatus {
    guard(|| {
        let c = deref(catalog, "catalog")?;
        write_out(out, c.0.record(label.into()).amplitude)
    })
}

/// Amplitude separating the two attractors.
///
/// # Safety
/// `catalog` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_catalog_threshold(
    catalog: *const ArCatalog,
    out: *mut f64,
) -> ArStatus {
    guard(|| {
        let c = deref(catalog, "catalog")?;
        write_out(out, c.0.threshold)
    })
}

/// Point of the attractor's orbit at forcing phase 0.
///
/// # Safety
/// `catalog` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_catalog_anchor(
    catalog: *const ArCatalog,
    label: ArLabel,
    out: *mut ArState,
) -> ArStatus {
    guard(|| {
        let c = deref(catalog, "catalog")?;
        write_out(out, c.0.anchor(label.into()).into())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_boa_load(path: *const c_char, out: *mut *mut ArBoaModel) -> ArStatus {
    guard(|| {
        let path = path_arg(path)?;
        let m = BoaModel::load(&path).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(ArBoaModel(m))))
    })
}

/// # Safety
/// `model` must be null or a handle from [`ar_boa_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_boa_free(model: *mut ArBoaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicted basin of `state`.
///
/// # Safety
/// `model` must be a live handle, `state` valid and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_boa_predict(
    model: *const ArBoaModel,
    state: *const ArState,
    out: *mut ArLabel,
) -> ArStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s: SimState = (*deref(state, "state")?).into();
        write_out(out, m.0.predict(&s).into())
    })
}

/// Kernel decision value; positive means LA.
///
/// # Safety
/// `model` must be a live handle, `state` valid and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_boa_decision(
    model: *const ArBoaModel,
    state: *const ArState,
    out: *mut f64,
) -> ArStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let s: SimState = (*deref(state, "state")?).into();
        write_out(out, m.0.decision(&s))
    })
}

/// Loads a policy network and binds it to the action bound `bound`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_policy_load(
    path: *const c_char,
    bound: f64,
    out: *mut *mut ArPolicy,
) -> ArStatus {
    guard(|| {
        let path = path_arg(path)?;
        if !(bound > 0.0 && bound.is_finite()) {
            return Err((ArStatus::InvalidArgument, "bound must be positive".into()));
        }
        let p = Policy::load(&path, bound).map_err(lib_err)?;
        if p.net.input_len() != 4 || p.net.output_len() != 1 || p.net.inject_at().is_some() {
            return Err((
                ArStatus::InvalidArgument,
                format!(
                    "{} is not a 4-input, 1-output policy network",
                    path.display()
                ),
            ));
        }
        write_out(out, Box::into_raw(Box::new(ArPolicy(p))))
    })
}

/// # Safety
/// `policy` must be null or a handle from [`ar_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_policy_free(policy: *mut ArPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Noise-free action `F pi(state)`, within `[-F, F]`.
///
/// # Safety
/// `policy` must be a live handle, `state` valid and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_policy_action(
    policy: *const ArPolicy,
    state: *const ArState,
    out: *mut f64,
) -> ArStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        let s: SimState = (*deref(state, "state")?).into();
        write_out(out, p.0.action(&s).map_err(lib_err)?)
    })
}

/// Action bound the policy was loaded with.
///
/// # Safety
/// `policy` must be a live handle and `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ar_policy_bound(policy: *const ArPolicy, out: *mut f64) -> ArStatus {
    guard(|| {
        let p = deref(policy, "policy")?;
        write_out(out, p.0.bound)
    })
}
