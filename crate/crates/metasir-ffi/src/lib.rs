//! C ABI for the metasir toolkit.
//!
//! Conventions:
//! * Every fallible function returns a [`MetasirStatus`] code and writes its
//!   result through out-pointers; `METASIR_OK` (0) signals success.
//! * `MetasirParams` is an opaque handle created by [`metasir_params_new`]
//!   and released by [`metasir_params_free`]. Handles are immutable and may
//!   be shared across threads.
//! * Infinite mean local delay is reported as `INFINITY`; a network with no
//!   delay phase transition is reported through an explicit flag.
//! * Any panic inside the library is caught and mapped to
//!   `METASIR_STATUS_INTERNAL` — no unwinding crosses the FFI boundary.

use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use metasir::geometry::{db_to_linear, NetworkParams, UserClass};
use metasir::metadist::{meta_distribution_on, InversionMethod};
use metasir::moments::{
    critical_activity, mean_local_delay, moment_ccu, moment_ceu, ActivityModel, Criticality,
    MomentOrder,
};
use metasir::specialfn::SeriesControl;
use metasir::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetasirStatus {
    /// Success.
    MetasirStatusOk = 0,
    /// A parameter violated its domain (density, exponent, probability...).
    MetasirStatusDomain = 1,
    /// A series or quadrature failed to converge to tolerance.
    MetasirStatusNumeric = 2,
    /// A null pointer was passed where a value was required.
    MetasirStatusNullArgument = 3,
    /// Unexpected internal failure (caught panic).
    MetasirStatusInternal = 4,
}

/// User class selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetasirClass {
    MetasirClassCellCenter = 0,
    MetasirClassCellEdge = 1,
}

impl From<MetasirClass> for UserClass {
    fn from(c: MetasirClass) -> UserClass {
        match c {
            MetasirClass::MetasirClassCellCenter => UserClass::CellCenter,
            MetasirClass::MetasirClassCellEdge => UserClass::CellEdge,
        }
    }
}

/// Meta-distribution inversion method selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetasirMethod {
    /// Exact Gil-Pelaez inversion of the complex-order moment.
    MetasirMethodGilPelaez = 0,
    /// Two-moment beta approximation.
    MetasirMethodBeta = 1,
}

impl From<MetasirMethod> for InversionMethod {
    fn from(m: MetasirMethod) -> InversionMethod {
        match m {
            MetasirMethod::MetasirMethodGilPelaez => InversionMethod::GilPelaez,
            MetasirMethod::MetasirMethodBeta => InversionMethod::BetaApprox,
        }
    }
}

/// Opaque network-parameter handle.
pub struct MetasirParams {
    params: NetworkParams,
}

fn status_of(err: &Error) -> MetasirStatus {
    match err {
        Error::Domain(_) | Error::Config(_) => MetasirStatus::MetasirStatusDomain,
        Error::SeriesNonConvergence { .. }
        | Error::QuadratureNonConvergence { .. }
        | Error::Evaluation(_)
        | Error::InternalConsistency(_)
        | Error::Instability(_) => MetasirStatus::MetasirStatusNumeric,
        _ => MetasirStatus::MetasirStatusInternal,
    }
}

fn guarded<F: FnOnce() -> MetasirStatus>(f: F) -> MetasirStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(MetasirStatus::MetasirStatusInternal)
}

/// Create a parameter handle.
///
/// `sir_threshold_db` is the SIR decoding threshold in dB; the remaining
/// arguments use linear units (densities per m², unitless exponent and
/// ratio threshold).  On success writes the new handle to `out` and returns
/// `MetasirStatusOk`; the handle must be released with
/// [`metasir_params_free`].
///
/// # Safety
/// `out` must be a valid pointer to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn metasir_params_new(
    bs_density: f64,
    user_density: f64,
    pathloss_exponent: f64,
    ratio_threshold: f64,
    sir_threshold_db: f64,
    out: *mut *mut MetasirParams,
) -> MetasirStatus {
    if out.is_null() {
        return MetasirStatus::MetasirStatusNullArgument;
    }
    guarded(|| {
        let params = NetworkParams {
            bs_density,
            user_density,
            pathloss_exponent,
            ratio_threshold,
            sir_threshold: db_to_linear(sir_threshold_db),
            ..NetworkParams::default()
        };
        match params.validate() {
            Ok(()) => {
                *out = Box::into_raw(Box::new(MetasirParams { params }));
                MetasirStatus::MetasirStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Release a handle created by [`metasir_params_new`]. Passing null is a
/// no-op.
///
/// # Safety
/// `handle` must be null or a pointer returned by `metasir_params_new` that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn metasir_params_free(handle: *mut MetasirParams) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn params_of<'a>(handle: *const MetasirParams) -> Option<&'a NetworkParams> {
    handle.as_ref().map(|h| &h.params)
}

/// Compute the b-th moment of the conditional success probability for the
/// given class at base-station activity `q`, writing it to `out`.
///
/// # Safety
/// `handle` must be a live handle; `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn metasir_moment(
    handle: *const MetasirParams,
    order: f64,
    activity: f64,
    class: MetasirClass,
    out: *mut f64,
) -> MetasirStatus {
    let (Some(params), false) = (params_of(handle), out.is_null()) else {
        return MetasirStatus::MetasirStatusNullArgument;
    };
    guarded(|| {
        let model = ActivityModel::fixed(activity);
        let ctrl = SeriesControl::default();
        let b = MomentOrder::real(order);
        let result = match UserClass::from(class) {
            UserClass::CellCenter => moment_ccu(b, params, &model, &ctrl),
            UserClass::CellEdge => moment_ceu(b, params, &model, &ctrl),
        };
        match result {
            Ok(m) => {
                *out = m.value.re;
                MetasirStatus::MetasirStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Mean local delay (average retransmissions until first success) for the
/// class at activity `q`; `INFINITY` marks the diverged phase.
///
/// # Safety
/// `handle` must be a live handle; `out` must point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn metasir_mean_local_delay(
    handle: *const MetasirParams,
    activity: f64,
    class: MetasirClass,
    out: *mut f64,
) -> MetasirStatus {
    let (Some(params), false) = (params_of(handle), out.is_null()) else {
        return MetasirStatus::MetasirStatusNullArgument;
    };
    guarded(|| {
        match mean_local_delay(params, &ActivityModel::fixed(activity), class.into()) {
            Ok(d) => {
                *out = d;
                MetasirStatus::MetasirStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Critical activity of the delay phase transition.  When a transition
/// exists, writes it to `out_q` and sets `*out_finite_everywhere` to 0;
/// when the delay is finite for every q in (0,1], sets the flag to 1 and
/// `out_q` to 1.
///
/// # Safety
/// `handle` must be a live handle; both out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn metasir_critical_activity(
    handle: *const MetasirParams,
    class: MetasirClass,
    out_q: *mut f64,
    out_finite_everywhere: *mut i32,
) -> MetasirStatus {
    let (Some(params), false) = (
        params_of(handle),
        out_q.is_null() || out_finite_everywhere.is_null(),
    ) else {
        return MetasirStatus::MetasirStatusNullArgument;
    };
    guarded(|| match critical_activity(params, class.into()) {
        Ok(Criticality::Transition(q)) => {
            *out_q = q;
            *out_finite_everywhere = 0;
            MetasirStatus::MetasirStatusOk
        }
        Ok(Criticality::FiniteEverywhere) => {
            *out_q = 1.0;
            *out_finite_everywhere = 1;
            MetasirStatus::MetasirStatusOk
        }
        Err(e) => status_of(&e),
    })
}

/// Evaluate the meta-distribution CCDF at `len` reliability thresholds
/// `xs[0..len]` (each in (0,1), ascending), writing the values to
/// `out[0..len]`.
///
/// # Safety
/// `handle` must be a live handle; `xs` and `out` must each point to `len`
/// readable/writable doubles.
#[no_mangle]
pub unsafe extern "C" fn metasir_meta_ccdf(
    handle: *const MetasirParams,
    activity: f64,
    class: MetasirClass,
    method: MetasirMethod,
    xs: *const f64,
    len: usize,
    out: *mut f64,
) -> MetasirStatus {
    let (Some(params), false) = (params_of(handle), xs.is_null() || out.is_null()) else {
        return MetasirStatus::MetasirStatusNullArgument;
    };
    guarded(|| {
        let grid = std::slice::from_raw_parts(xs, len);
        let result = meta_distribution_on(
            params,
            &ActivityModel::fixed(activity),
            class.into(),
            method.into(),
            grid,
        );
        match result {
            Ok(curve) => {
                let out = std::slice::from_raw_parts_mut(out, len);
                for (o, &x) in out.iter_mut().zip(grid) {
                    *o = curve.eval(x);
                }
                MetasirStatus::MetasirStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn metasir_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
