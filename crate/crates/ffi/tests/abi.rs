//! The exported functions against the Rust API they wrap.

use std::ffi::CStr;
use std::ptr;

use pcswitch::bias::{solve_bias, AppliedBias};
use pcswitch::microwave::{s21, PortEnvironment};
use pcswitch::model::{BridgeParams, SquidParams};
use pcswitch_ffi::*;

fn handle() -> *mut PcsBridge {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pcs_bridge_new(32.5e-12, 1.2, 20, 650e-12, 15e-12, &mut h) }, PcsStatus::Ok);
    h
}

fn reference() -> BridgeParams {
    BridgeParams::new(SquidParams::from_beta(32.5e-12, 1.2).unwrap(), 20, 650e-12, 15e-12).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pcs_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn periods_match() {
    let h = handle();
    let mut p = PcsPeriods::default();
    assert_eq!(unsafe { pcs_bridge_periods(h, &mut p) }, PcsStatus::Ok);
    assert_eq!(p.quanta, 120);
    let b = reference();
    assert_eq!(p.i_c, 4.0 * std::f64::consts::PI * b.squid.i0() / 1.2);
    unsafe { pcs_bridge_free(h) };
}

#[test]
fn solve_and_transmission_match() {
    let h = handle();
    let b = reference();
    let mut s = PcsBiasState::default();
    assert_eq!(unsafe { pcs_solve_fluxoid(h, 17, 0.3, 40e-6, &mut s) }, PcsStatus::Ok);
    let r = solve_bias(&AppliedBias::fluxoid(17, 0.3, 40e-6), &b).unwrap();
    assert_eq!(s.junction_phases, r.junction_phases);
    assert_eq!(s.i_c, r.i_c());

    let port = PcsPort { z0: 50.0, insertion_loss_db: 6.0 };
    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(unsafe { pcs_s21_fluxoid(h, 17, 0.3, 40e-6, 5.1e9, port, &mut re, &mut im) }, PcsStatus::Ok);
    let t = s21(&r, 5.1e9, &PortEnvironment::default());
    assert_eq!((re, im), (t.re, t.im));

    let mut c = PcsBiasState::default();
    assert_eq!(unsafe { pcs_solve_current(h, 40e-6, s.i_c, &mut c) }, PcsStatus::Ok);
    for k in 0..4 {
        assert!((c.junction_phases[k] - s.junction_phases[k]).abs() < 1e-9);
    }
    unsafe { pcs_bridge_free(h) };
}

#[test]
fn trap_selects_nearest_branch() {
    let h = handle();
    let mut i5 = 0.0;
    assert_eq!(unsafe { pcs_i_c_of_j(h, 5, 0.0, 0.0, &mut i5) }, PcsStatus::Ok);
    let mut t = PcsTrap::default();
    assert_eq!(unsafe { pcs_trap_ideal(h, i5 + 1e-9, &mut t) }, PcsStatus::Ok);
    assert_eq!(t.j, 5);
    assert_eq!(t.i_c, i5);
    unsafe { pcs_bridge_free(h) };
}

#[test]
fn errors_are_reported() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { pcs_bridge_new(-1.0, 1.2, 20, 0.0, 0.0, &mut h) }, PcsStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { pcs_bridge_new(32.5e-12, 1.2, 20, 0.0, 0.0, ptr::null_mut()) }, PcsStatus::NullPointer);

    let mut s = PcsBiasState::default();
    assert_eq!(unsafe { pcs_solve_fluxoid(ptr::null(), 0, 0.0, 0.0, &mut s) }, PcsStatus::NullPointer);
    let h = handle();
    assert_eq!(unsafe { pcs_solve_fluxoid(h, 0, f64::NAN, 0.0, &mut s) }, PcsStatus::SolverFailed);
    assert!(last_error().contains("non-finite"), "{}", last_error());
    let port = PcsPort { z0: 50.0, insertion_loss_db: 0.0 };
    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(unsafe { pcs_s21_fluxoid(h, 0, 0.0, 0.0, -1.0, port, &mut re, &mut im) }, PcsStatus::InvalidArgument);
    unsafe { pcs_bridge_free(h) };
    unsafe { pcs_bridge_free(ptr::null_mut()) };
    let v = unsafe { CStr::from_ptr(pcs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
