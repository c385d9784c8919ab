//! C ABI over the bridge model.
//!
//! Every function returns a [`PcsStatus`]; results go through out-pointers.
//! On failure, [`pcs_last_error`] returns a message for the calling thread.
//! Handles come from [`pcs_bridge_new`] and must be released with
//! [`pcs_bridge_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pcswitch::bias::{solve_bias, AppliedBias, BiasState};
use pcswitch::microwave::{s21, PortEnvironment};
use pcswitch::model::{periods, BridgeParams, SquidParams};
use pcswitch::trap::{i_c_of_j, quanta_per_period, trap, TrapProtocol};

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverFailed = 3,
    Panic = 4,
}

/// Opaque device handle.
pub struct PcsBridge {
    params: BridgeParams,
}

/// Response periods.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcsPeriods {
    /// Circulating-current period (A).
    pub i_c: f64,
    /// Loop-phase period (rad).
    pub phi_c: f64,
    /// Actuation-current period (A).
    pub i_z: f64,
    /// Fluxoid quanta per period.
    pub quanta: i64,
}

/// Solved operating point. Arrays are ordered NW, SW, SE, NE; `mode_phases`
/// is X, Y, Z, C.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcsBiasState {
    pub mode_phases: [f64; 4],
    pub junction_phases: [f64; 4],
    pub arm_currents: [f64; 4],
    pub arm_inductances: [f64; 4],
    pub i_c: f64,
    pub residual_norm: f64,
}

/// Port environment for transmission queries.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcsPort {
    /// Reference impedance (Ω).
    pub z0: f64,
    /// Insertion loss applied to |τ| (dB).
    pub insertion_loss_db: f64,
}

/// Trapped state.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcsTrap {
    pub j: i64,
    pub phi_ext: f64,
    pub i_c: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(PcsStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PcsStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            PcsStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(PcsStatus::NullPointer, "null pointer argument".into())
}

fn invalid(e: impl std::fmt::Display) -> Fail {
    Fail(PcsStatus::InvalidArgument, e.to_string())
}

fn solver(e: impl std::fmt::Display) -> Fail {
    Fail(PcsStatus::SolverFailed, e.to_string())
}

unsafe fn bridge_ref<'a>(b: *const PcsBridge) -> Result<&'a BridgeParams, Fail> {
    b.as_ref().map(|b| &b.params).ok_or_else(null)
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null());
    }
    out.write(v);
    Ok(())
}

fn bias_out(s: &BiasState) -> PcsBiasState {
    PcsBiasState {
        mode_phases: s.phases.as_array(),
        junction_phases: s.junction_phases,
        arm_currents: s.arm_currents,
        arm_inductances: s.arm_inductances,
        i_c: s.i_c(),
        residual_norm: s.residual_norm,
    }
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pcs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pcs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a device. `beta` is the screening parameter `L_sh I_0 / φ0r`;
/// inductances are in henry.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_bridge_new(
    l_sh: f64,
    beta: f64,
    n: u32,
    l_str: f64,
    l_pcs: f64,
    out: *mut *mut PcsBridge,
) -> PcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let squid = SquidParams::from_beta(l_sh, beta).map_err(invalid)?;
        let params = BridgeParams::new(squid, n, l_str, l_pcs).map_err(invalid)?;
        out.write(Box::into_raw(Box::new(PcsBridge { params })));
        Ok(())
    })
}

/// Releases a device. Null is ignored.
///
/// # Safety
/// `bridge` must come from [`pcs_bridge_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pcs_bridge_free(bridge: *mut PcsBridge) {
    if !bridge.is_null() {
        drop(Box::from_raw(bridge));
    }
}

/// # Safety
/// `bridge` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_bridge_periods(bridge: *const PcsBridge, out: *mut PcsPeriods) -> PcsStatus {
    guard(|| {
        let b = bridge_ref(bridge)?;
        let p = periods(b);
        write(
            out,
            PcsPeriods {
                i_c: p.i_c,
                phi_c: p.phi_c,
                i_z: p.i_z,
                quanta: quanta_per_period(b),
            },
        )
    })
}

/// Operating point on fluxoid branch `j`.
///
/// # Safety
/// `bridge` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_solve_fluxoid(
    bridge: *const PcsBridge,
    j: i64,
    phi_ext: f64,
    i_z: f64,
    out: *mut PcsBiasState,
) -> PcsStatus {
    guard(|| {
        let b = bridge_ref(bridge)?;
        let s = solve_bias(&AppliedBias::fluxoid(j, phi_ext, i_z), b).map_err(solver)?;
        write(out, bias_out(&s))
    })
}

/// Operating point with the circulating current prescribed.
///
/// # Safety
/// `bridge` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_solve_current(
    bridge: *const PcsBridge,
    i_z: f64,
    i_c: f64,
    out: *mut PcsBiasState,
) -> PcsStatus {
    guard(|| {
        let b = bridge_ref(bridge)?;
        let s = solve_bias(&AppliedBias::current_driven(i_z, i_c), b).map_err(solver)?;
        write(out, bias_out(&s))
    })
}

/// Transmission τ on fluxoid branch `j` at frequency `freq` (Hz).
///
/// # Safety
/// `bridge` must be a live handle; `tau_re` and `tau_im` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_s21_fluxoid(
    bridge: *const PcsBridge,
    j: i64,
    phi_ext: f64,
    i_z: f64,
    freq: f64,
    port: PcsPort,
    tau_re: *mut f64,
    tau_im: *mut f64,
) -> PcsStatus {
    guard(|| {
        let b = bridge_ref(bridge)?;
        if tau_re.is_null() || tau_im.is_null() {
            return Err(null());
        }
        let env = PortEnvironment {
            z0: port.z0,
            freq_grid: vec![freq],
            insertion_loss_db: port.insertion_loss_db,
        };
        env.validate().map_err(invalid)?;
        if !(freq > 0.0 && freq.is_finite()) {
            return Err(invalid(format!("frequency {freq} must be positive")));
        }
        let s = solve_bias(&AppliedBias::fluxoid(j, phi_ext, i_z), b).map_err(solver)?;
        let t = s21(&s, freq, &env);
        tau_re.write(t.re);
        tau_im.write(t.im);
        Ok(())
    })
}

/// Circulating current on branch `j` (A).
///
/// # Safety
/// `bridge` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_i_c_of_j(
    bridge: *const PcsBridge,
    j: i64,
    phi_ext: f64,
    i_z: f64,
    out: *mut f64,
) -> PcsStatus {
    guard(|| {
        let b = bridge_ref(bridge)?;
        write(out, i_c_of_j(j, phi_ext, i_z, b).map_err(solver)?)
    })
}

/// Deterministic trap at target current `i_trg` (no failures, sharp
/// boundaries).
///
/// # Safety
/// `bridge` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pcs_trap_ideal(bridge: *const PcsBridge, i_trg: f64, out: *mut PcsTrap) -> PcsStatus {
    guard(|| {
        let b = bridge_ref(bridge)?;
        if !i_trg.is_finite() {
            return Err(invalid("non-finite target current"));
        }
        let s = trap(i_trg, &TrapProtocol::ideal(), b).map_err(solver)?;
        write(
            out,
            PcsTrap {
                j: s.j,
                phi_ext: s.phi_ext,
                i_c: s.i_c,
            },
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;
    use std::ptr;

    #[test]
    fn error_message_is_cleared_on_success() {
        let mut h = ptr::null_mut();
        let st = unsafe { pcs_bridge_new(32.5e-12, 2.5, 20, 0.0, 0.0, &mut h) };
        assert_eq!(st, PcsStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(pcs_last_error()) }.to_str().unwrap().to_owned();
        assert!(msg.contains("beta"), "{msg}");
        let st = unsafe { pcs_bridge_new(32.5e-12, 1.2, 20, 0.0, 0.0, &mut h) };
        assert_eq!(st, PcsStatus::Ok);
        assert!(unsafe { CStr::from_ptr(pcs_last_error()) }.to_bytes().is_empty());
        unsafe { pcs_bridge_free(h) };
    }
}
