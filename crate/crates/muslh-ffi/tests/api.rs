use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use muslh_ffi::*;

const NESTED: &str =
    "0: t <- (x Lshr 3)\n1: beqz t, 3\n2: jmp end\n3: load y, (a Add x)\n4: load z, (b Add y)\n5: load w, (c Add z)\n";
const NESTED_POLICY: &str =
    "width 16\nreg x public 0..15\nregion a 8 public 0..255\nregion b 256 public 0..255\nregion c 256 public 0..255\n";
const GADGET: &str = "0: x <- 0\n1: beqz x, end\n2: load y, s\n";
const GADGET_POLICY: &str = "width 4\nreg s secret\nregion m 4 public 0..1\n";

fn session(src: &str, pol: &str) -> *mut MuslhSession {
    let (src, pol) = (CString::new(src).unwrap(), CString::new(pol).unwrap());
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { muslh_session_new(src.as_ptr(), pol.as_ptr(), 8, &mut s) }, MuslhStatus::Ok);
    s
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    muslh_string_free(s);
    out
}

#[test]
fn nested_loads_through_the_c_interface() {
    let s = session(NESTED, NESTED_POLICY);
    unsafe {
        let mut w = 0;
        assert_eq!(muslh_session_width(s, &mut w), MuslhStatus::Ok);
        assert_eq!(w, 16);
        let mut o = ptr::null_mut();
        assert_eq!(muslh_harden(s, &mut o), MuslhStatus::Ok);
        let mut count = 0;
        assert_eq!(muslh_outcome_hardened_count(o, &mut count), MuslhStatus::Ok);
        assert_eq!(count, 1);
        let mut loc = 0;
        assert_eq!(muslh_outcome_hardened_location(o, 0, &mut loc), MuslhStatus::Ok);
        assert_eq!(loc, 4);
        assert_eq!(muslh_outcome_hardened_location(o, 1, &mut loc), MuslhStatus::InvalidArgument);
        let mut text = ptr::null_mut();
        assert_eq!(muslh_outcome_report_json(o, &mut text), MuslhStatus::Ok);
        let json = take(text);
        assert!(json.contains("\"reason\":\"H-observation\""), "{}", json);
        assert_eq!(muslh_outcome_program(o, false, &mut text), MuslhStatus::Ok);
        assert!(take(text).contains("4: hardened load z, (b Add y)"));
        assert_eq!(muslh_outcome_program(o, true, &mut text), MuslhStatus::Ok);
        assert!(take(text).contains("4: load z, ((b Add y) Or flag)"));
        muslh_outcome_free(o);
        muslh_session_free(s);
    }
}

#[test]
fn checks_report_violation_and_pass() {
    let s = session(GADGET, GADGET_POLICY);
    unsafe {
        let mut text = ptr::null_mut();
        assert_eq!(muslh_check(s, MuslhProperty::SpeculativeSafety, false, 0, &mut text), MuslhStatus::Violation);
        assert!(take(text).contains("\"verdict\":\"violation\""));
        assert_eq!(
            muslh_check(s, MuslhProperty::SpeculativeNonInterference, false, 0, ptr::null_mut()),
            MuslhStatus::Violation
        );
        assert_eq!(muslh_check(s, MuslhProperty::SpeculativeSafety, true, 0, ptr::null_mut()), MuslhStatus::Ok);
        assert_eq!(
            muslh_check(s, MuslhProperty::SpeculativeNonInterference, true, 0, ptr::null_mut()),
            MuslhStatus::Ok
        );
        muslh_session_free(s);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let bad = CString::new("0: frob x\n").unwrap();
    let pol = CString::new("").unwrap();
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(muslh_session_new(bad.as_ptr(), pol.as_ptr(), 8, &mut s), MuslhStatus::ParseError);
        assert!(s.is_null());
        assert!(!CStr::from_ptr(muslh_last_error()).to_bytes().is_empty());
        let good = CString::new("0: x <- 1\n").unwrap();
        let bad_pol = CString::new("reg x sideways\n").unwrap();
        assert_eq!(muslh_session_new(good.as_ptr(), bad_pol.as_ptr(), 8, &mut s), MuslhStatus::PolicyError);
        let invalid = [0xffu8, 0];
        assert_eq!(muslh_session_new(invalid.as_ptr().cast(), pol.as_ptr(), 8, &mut s), MuslhStatus::InvalidUtf8);
        let s = session("0: x <- 1\n", "");
        assert_eq!(muslh_session_set_obs_bits(s, 5, 2), MuslhStatus::InvalidArgument);
        assert_eq!(muslh_session_set_obs_bits(s, 0, 7), MuslhStatus::Ok);
        assert_eq!(muslh_session_set_widen_threshold(s, 2), MuslhStatus::Ok);
        muslh_session_free(s);
        muslh_session_free(ptr::null_mut());
        muslh_outcome_free(ptr::null_mut());
        muslh_string_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_declares_the_api() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/muslh.h")).unwrap();
    for name in [
        "muslh_session_new",
        "muslh_session_free",
        "muslh_harden",
        "muslh_outcome_free",
        "muslh_outcome_report_json",
        "muslh_check",
        "muslh_last_error",
        "muslh_string_free",
        "typedef struct MuslhSession MuslhSession",
        "MUSLH_STATUS_VIOLATION = 7",
    ] {
        assert!(header.contains(name), "header lacks {}", name);
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let probe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("probe.c");
    std::fs::write(
        &probe,
        "#include \"muslh.h\"\nint main(void) { MuslhSession *s = 0; return muslh_session_new(\"\", \"\", 8, &s) == MUSLH_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&probe)
        .status();
    match status {
        Ok(st) => assert!(st.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler found; skipping"),
    }
}
