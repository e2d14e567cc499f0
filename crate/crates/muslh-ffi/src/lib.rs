//! C ABI over the muslh pipeline.
//!
//! Every entry point returns a [`MuslhStatus`]. Results are written through
//! out-pointers. Handles are opaque and must be released with their `_free`
//! function; strings returned by the library must be released with
//! [`muslh_string_free`]. After a failing call, [`muslh_last_error`] holds a
//! message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use muslh::absint::{prepare, AbsConfig};
use muslh::hardener::{harden_linked, lower_flag, Outcome};
use muslh::lang::{parse_policy, parse_program, Policy, Program};
use muslh::oracle::{check_sni, check_ss, Bounds};

/// Status codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuslhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    PolicyError = 4,
    AnalysisError = 5,
    InvalidArgument = 6,
    /// A property check found a counterexample.
    Violation = 7,
    /// A property check hit its bounds before deciding.
    Inconclusive = 8,
    Panic = 9,
}

/// Properties accepted by [`muslh_check`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuslhProperty {
    SpeculativeSafety = 0,
    SpeculativeNonInterference = 1,
}

/// A parsed and linked program with its policy and analysis settings.
pub struct MuslhSession {
    program: Program,
    policy: Policy,
    config: AbsConfig,
}

/// The result of analysing and hardening a session's program.
pub struct MuslhOutcome {
    outcome: Outcome,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MuslhStatus, msg: impl Into<String>) -> MuslhStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MuslhStatus) -> MuslhStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MuslhStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, MuslhStatus> {
    if p.is_null() {
        return Err(fail(MuslhStatus::NullPointer, format!("{} is null", what)));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(MuslhStatus::InvalidUtf8, format!("{} is not UTF-8", what)))
}

fn give_string(s: String, out: *mut *mut c_char) -> MuslhStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            MuslhStatus::Ok
        }
        Err(_) => fail(MuslhStatus::InvalidArgument, "output contains a NUL byte"),
    }
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn muslh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn muslh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses `program` and `policy` sources and links them. `default_width`
/// applies when the policy has no `width` line.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_session_new(
    program: *const c_char,
    policy: *const c_char,
    default_width: u32,
    out: *mut *mut MuslhSession,
) -> MuslhStatus {
    guard(|| {
        if out.is_null() {
            return fail(MuslhStatus::NullPointer, "out is null");
        }
        let src = match str_arg(program, "program") {
            Ok(s) => s,
            Err(e) => return e,
        };
        let pol = match str_arg(policy, "policy") {
            Ok(s) => s,
            Err(e) => return e,
        };
        let parsed = match parse_program(src) {
            Ok(p) => p,
            Err(e) => return fail(MuslhStatus::ParseError, e.to_string()),
        };
        let policy = match parse_policy(pol) {
            Ok(p) => p,
            Err(e) => return fail(MuslhStatus::PolicyError, e.to_string()),
        };
        let program = match prepare(&parsed, &policy, default_width) {
            Ok(p) => p,
            Err(e) => return fail(MuslhStatus::PolicyError, e.to_string()),
        };
        let config = AbsConfig::for_width(program.width());
        *out = Box::into_raw(Box::new(MuslhSession { program, policy, config }));
        MuslhStatus::Ok
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `s` must come from [`muslh_session_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn muslh_session_free(s: *mut MuslhSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Word width of the session's program.
///
/// # Safety
/// `s` must be a live session; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_session_width(s: *const MuslhSession, out: *mut u32) -> MuslhStatus {
    guard(|| match (s.as_ref(), out.is_null()) {
        (Some(s), false) => {
            *out = s.program.width();
            MuslhStatus::Ok
        }
        _ => fail(MuslhStatus::NullPointer, "session or out is null"),
    })
}

/// Sets the observed address bits `lo..=hi`.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn muslh_session_set_obs_bits(s: *mut MuslhSession, lo: u32, hi: u32) -> MuslhStatus {
    guard(|| {
        let Some(s) = s.as_mut() else {
            return fail(MuslhStatus::NullPointer, "session is null");
        };
        match muslh::concrete::check_bits((lo, hi), s.program.width()) {
            Ok(bits) => {
                s.config.obs_bits = bits;
                MuslhStatus::Ok
            }
            Err(e) => fail(MuslhStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Sets the number of growing updates a location gets before widening.
///
/// # Safety
/// `s` must be a live session.
#[no_mangle]
pub unsafe extern "C" fn muslh_session_set_widen_threshold(s: *mut MuslhSession, threshold: u32) -> MuslhStatus {
    guard(|| match s.as_mut() {
        Some(s) => {
            s.config.widen_threshold = threshold;
            MuslhStatus::Ok
        }
        None => fail(MuslhStatus::NullPointer, "session is null"),
    })
}

/// Runs the analysis and computes the hardened program.
///
/// # Safety
/// `s` must be a live session; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_harden(s: *const MuslhSession, out: *mut *mut MuslhOutcome) -> MuslhStatus {
    guard(|| {
        let (Some(s), false) = (s.as_ref(), out.is_null()) else {
            return fail(MuslhStatus::NullPointer, "session or out is null");
        };
        match harden_linked(&s.program, &s.policy, s.config) {
            Ok(outcome) => {
                *out = Box::into_raw(Box::new(MuslhOutcome { outcome }));
                MuslhStatus::Ok
            }
            Err(e) => fail(MuslhStatus::AnalysisError, e.to_string()),
        }
    })
}

/// Releases an outcome. Null is ignored.
///
/// # Safety
/// `o` must come from [`muslh_harden`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn muslh_outcome_free(o: *mut MuslhOutcome) {
    if !o.is_null() {
        drop(Box::from_raw(o));
    }
}

/// Number of instructions in the hardening list.
///
/// # Safety
/// `o` must be a live outcome; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_outcome_hardened_count(o: *const MuslhOutcome, out: *mut usize) -> MuslhStatus {
    guard(|| match (o.as_ref(), out.is_null()) {
        (Some(o), false) => {
            *out = o.outcome.report().hardened.len();
            MuslhStatus::Ok
        }
        _ => fail(MuslhStatus::NullPointer, "outcome or out is null"),
    })
}

/// Source location of the `index`-th hardened instruction, in ascending
/// order.
///
/// # Safety
/// `o` must be a live outcome; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_outcome_hardened_location(
    o: *const MuslhOutcome,
    index: usize,
    out: *mut usize,
) -> MuslhStatus {
    guard(|| {
        let (Some(o), false) = (o.as_ref(), out.is_null()) else {
            return fail(MuslhStatus::NullPointer, "outcome or out is null");
        };
        match o.outcome.report().hardened.get(index) {
            Some(e) => {
                *out = e.location;
                MuslhStatus::Ok
            }
            None => fail(MuslhStatus::InvalidArgument, format!("index {} out of range", index)),
        }
    })
}

/// The hardening report as JSON.
///
/// # Safety
/// `o` must be a live outcome; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_outcome_report_json(o: *const MuslhOutcome, out: *mut *mut c_char) -> MuslhStatus {
    guard(|| match (o.as_ref(), out.is_null()) {
        (Some(o), false) => give_string(serde_json::to_string(&o.outcome.report()).expect("report serializes"), out),
        _ => fail(MuslhStatus::NullPointer, "outcome or out is null"),
    })
}

/// The hardened program as source text, with `hardened` markers, or in the
/// flag-masking form when `lowered` is true.
///
/// # Safety
/// `o` must be a live outcome; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_outcome_program(
    o: *const MuslhOutcome,
    lowered: bool,
    out: *mut *mut c_char,
) -> MuslhStatus {
    guard(|| match (o.as_ref(), out.is_null()) {
        (Some(o), false) => {
            let text = if lowered { lower_flag(&o.outcome.hardened) } else { o.outcome.hardened.render() };
            give_string(text, out)
        }
        _ => fail(MuslhStatus::NullPointer, "outcome or out is null"),
    })
}

/// Checks a property of the session's program by bounded enumeration,
/// or of its hardened form when `hardened` is true. Returns `Ok`,
/// `Violation` or `Inconclusive`; the verdict JSON goes to `out` when it is
/// not null.
///
/// # Safety
/// `s` must be a live session; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn muslh_check(
    s: *const MuslhSession,
    property: MuslhProperty,
    hardened: bool,
    max_steps: usize,
    out: *mut *mut c_char,
) -> MuslhStatus {
    guard(|| {
        let Some(s) = s.as_ref() else {
            return fail(MuslhStatus::NullPointer, "session is null");
        };
        let program = if hardened {
            match harden_linked(&s.program, &s.policy, s.config) {
                Ok(o) => o.hardened,
                Err(e) => return fail(MuslhStatus::AnalysisError, e.to_string()),
            }
        } else {
            s.program.clone()
        };
        let mut bounds = Bounds::for_width(program.width());
        bounds.obs_bits = s.config.obs_bits;
        if max_steps > 0 {
            bounds.max_steps = max_steps;
        }
        let (json, pass, violation) = match property {
            MuslhProperty::SpeculativeSafety => {
                let v = check_ss(&program, &s.policy, &bounds);
                (serde_json::to_string(&v), v.is_pass(), v.is_violation())
            }
            MuslhProperty::SpeculativeNonInterference => {
                let v = check_sni(&program, &s.policy, &bounds);
                (serde_json::to_string(&v), v.is_pass(), v.is_violation())
            }
        };
        if !out.is_null() {
            let st = give_string(json.expect("verdict serializes"), out);
            if st != MuslhStatus::Ok {
                return st;
            }
        }
        if pass {
            MuslhStatus::Ok
        } else if violation {
            MuslhStatus::Violation
        } else {
            MuslhStatus::Inconclusive
        }
    })
}
