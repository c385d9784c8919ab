//! Closed-form physics of one rf-SQUID and of the four-arm bridge built from
//! series arrays of them.
//!
//! Phases are dimensionless (radians) and are converted to flux with the
//! reduced flux quantum [`PHI0_REDUCED`] = ħ/2e. One trapped flux quantum
//! corresponds to 2π of loop phase.
//!
//! The per-squid potential is `-E_J cos(φ) + (φ0r²/L_sh) φ²` with no factor
//! 1/2 on the inductive term, so the current-phase relation reads
//! `I/I_0 = sin φ + 2φ/β` with `β = L_sh I_0 / φ0r`, and the single-valued
//! (non-hysteretic) regime is `β < 2`.
//!
//! # Expansion prefactors
//!
//! Writing `x = φ_X/(√2 N)`, `y = φ_Y/(√2 N)`, `z = φ_Z/N`, `c = φ_C/(4N)`,
//! the stray-free bridge energy is
//!
//! ```text
//! H = φ0r²/(N L_sh) (φ_C²/4 + 2φ_X² + 2φ_Y² + 4φ_Z²)
//!     - 4 N E_J [cos c cos x cos y cos z - sin c sin x sin y sin z]
//! ```
//!
//! Its mixed second derivative at `φ_X = φ_Y = 0` is the bilinear coupling
//! `g_XY = (2 E_J / N) sin(φ_Z/N) sin(φ_C/4N)`, and the `φ_X⁴` Taylor
//! coefficient is the Kerr term `K_XY = -(E_J / 24 N³) cos(φ_Z/N) cos(φ_C/4N)`
//! (the `φ_X² φ_Y²` coefficient is `6 K_XY`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planck constant (J·s), exact SI value.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Elementary charge (C), exact SI value.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced flux quantum ħ/2e (Wb).
pub const PHI0_REDUCED: f64 = PLANCK / (4.0 * PI * ELEMENTARY_CHARGE);
/// Flux quantum h/2e (Wb).
pub const PHI0: f64 = PLANCK / (2.0 * ELEMENTARY_CHARGE);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    Invalid {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> ParamError {
    ParamError::Invalid {
        name,
        value,
        reason,
    }
}

/// Physical constants of one rf-SQUID. `β` is derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSquid", into = "RawSquid")]
pub struct SquidParams {
    i0: f64,
    l_sh: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSquid {
    i0: f64,
    l_sh: f64,
}

impl TryFrom<RawSquid> for SquidParams {
    type Error = ParamError;
    fn try_from(raw: RawSquid) -> Result<Self, ParamError> {
        SquidParams::new(raw.i0, raw.l_sh)
    }
}

impl From<SquidParams> for RawSquid {
    fn from(p: SquidParams) -> Self {
        RawSquid {
            i0: p.i0,
            l_sh: p.l_sh,
        }
    }
}

impl SquidParams {
    /// Critical current `i0` (A) and shunt inductance `l_sh` (H).
    pub fn new(i0: f64, l_sh: f64) -> Result<Self, ParamError> {
        if !(i0.is_finite() && i0 > 0.0) {
            return Err(invalid("i0", i0, "critical current must be positive"));
        }
        if !(l_sh.is_finite() && l_sh > 0.0) {
            return Err(invalid("l_sh", l_sh, "shunt inductance must be positive"));
        }
        let beta = l_sh * i0 / PHI0_REDUCED;
        if beta >= 2.0 {
            return Err(invalid(
                "beta",
                beta,
                "screening ratio must stay below 2 (hysteretic otherwise)",
            ));
        }
        Ok(Self { i0, l_sh })
    }

    /// Build from a shunt inductance and a target screening ratio.
    pub fn from_beta(l_sh: f64, beta: f64) -> Result<Self, ParamError> {
        Self::new(beta * PHI0_REDUCED / l_sh, l_sh)
    }

    pub fn i0(&self) -> f64 {
        self.i0
    }

    pub fn l_sh(&self) -> f64 {
        self.l_sh
    }

    /// Screening ratio `L_sh I_0 / φ0r`.
    pub fn beta(&self) -> f64 {
        self.l_sh * self.i0 / PHI0_REDUCED
    }

    /// Josephson energy `φ0r I_0` (J).
    pub fn josephson_energy(&self) -> f64 {
        PHI0_REDUCED * self.i0
    }
}

/// The assembled bridge: `n` identical squids per arm, stray loop inductance
/// `l_str` (split evenly over the four arms) and the PCS shunt inductance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBridge", into = "RawBridge")]
pub struct BridgeParams {
    pub squid: SquidParams,
    n: u32,
    l_str: f64,
    l_pcs: f64,
    iz_to_phic: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBridge {
    squid: SquidParams,
    n: u32,
    l_str: f64,
    l_pcs: f64,
    #[serde(default)]
    iz_to_phic: f64,
}

impl TryFrom<RawBridge> for BridgeParams {
    type Error = ParamError;
    fn try_from(raw: RawBridge) -> Result<Self, ParamError> {
        BridgeParams::new(raw.squid, raw.n, raw.l_str, raw.l_pcs)?.with_cross_coupling(raw.iz_to_phic)
    }
}

impl From<BridgeParams> for RawBridge {
    fn from(b: BridgeParams) -> Self {
        RawBridge {
            squid: b.squid,
            n: b.n,
            l_str: b.l_str,
            l_pcs: b.l_pcs,
            iz_to_phic: b.iz_to_phic,
        }
    }
}

impl BridgeParams {
    pub fn new(squid: SquidParams, n: u32, l_str: f64, l_pcs: f64) -> Result<Self, ParamError> {
        if n == 0 {
            return Err(invalid("n", 0.0, "at least one rf-SQUID per arm"));
        }
        if !(l_str.is_finite() && l_str >= 0.0) {
            return Err(invalid("l_str", l_str, "stray inductance must be non-negative"));
        }
        if !(l_pcs.is_finite() && l_pcs >= 0.0) {
            return Err(invalid("l_pcs", l_pcs, "PCS inductance must be non-negative"));
        }
        Ok(Self {
            squid,
            n,
            l_str,
            l_pcs,
            iz_to_phic: 0.0,
        })
    }

    /// Linear `I_Z → φ_C` cross-coupling (rad/A). Zero by default; the
    /// physical value of the layout skew is unknown.
    pub fn with_cross_coupling(mut self, rad_per_amp: f64) -> Result<Self, ParamError> {
        if !rad_per_amp.is_finite() {
            return Err(invalid("iz_to_phic", rad_per_amp, "must be finite"));
        }
        self.iz_to_phic = rad_per_amp;
        Ok(self)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn l_str(&self) -> f64 {
        self.l_str
    }

    pub fn l_pcs(&self) -> f64 {
        self.l_pcs
    }

    pub fn cross_coupling(&self) -> f64 {
        self.iz_to_phic
    }

    pub fn with_l_str(mut self, l_str: f64) -> Result<Self, ParamError> {
        if !(l_str.is_finite() && l_str >= 0.0) {
            return Err(invalid("l_str", l_str, "stray inductance must be non-negative"));
        }
        self.l_str = l_str;
        Ok(self)
    }

    /// Stray phase per ampere on one arm, `L_str / (4 φ0r)`.
    pub(crate) fn stray_phase_per_amp(&self) -> f64 {
        self.l_str / (4.0 * PHI0_REDUCED)
    }
}

/// Mode phases X, Y (signal), Z (actuation) and C (circulating constraint).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModePhases {
    pub phi_x: f64,
    pub phi_y: f64,
    pub phi_z: f64,
    pub phi_c: f64,
}

impl ModePhases {
    pub fn new(phi_x: f64, phi_y: f64, phi_z: f64, phi_c: f64) -> Self {
        Self {
            phi_x,
            phi_y,
            phi_z,
            phi_c,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.phi_x, self.phi_y, self.phi_z, self.phi_c]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Inverse of [`ArmPhases::from_modes`]; exact because the arm patterns
    /// are mutually orthogonal.
    pub fn from_arms(arms: &ArmPhases) -> Self {
        let a = arms.as_array();
        let mut out = [0.0; 4];
        for (k, row) in ARM_PATTERN.iter().enumerate() {
            let norm2: f64 = row.iter().map(|p| p * p).sum();
            out[k] = row.iter().zip(a.iter()).map(|(p, x)| p * x).sum::<f64>() / norm2;
        }
        Self::from_array(out)
    }
}

/// Branch phases across the four arms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmPhases {
    pub phi_nw: f64,
    pub phi_sw: f64,
    pub phi_se: f64,
    pub phi_ne: f64,
}

impl ArmPhases {
    pub fn as_array(&self) -> [f64; 4] {
        [self.phi_nw, self.phi_sw, self.phi_se, self.phi_ne]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            phi_nw: a[0],
            phi_sw: a[1],
            phi_se: a[2],
            phi_ne: a[3],
        }
    }

    /// `φ_l = Σ_k (∂φ_l/∂φ_k) φ_k`.
    pub fn from_modes(m: &ModePhases) -> Self {
        let modes = m.as_array();
        let mut out = [0.0; 4];
        for (k, row) in ARM_PATTERN.iter().enumerate() {
            for (l, p) in row.iter().enumerate() {
                out[l] += p * modes[k];
            }
        }
        Self::from_array(out)
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// Arm ordering used by every per-arm array in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    NorthWest,
    SouthWest,
    SouthEast,
    NorthEast,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::NorthWest, Arm::SouthWest, Arm::SouthEast, Arm::NorthEast];
}

const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `ARM_PATTERN[k][l] = ∂φ_l/∂φ_k` for modes `k ∈ {X, Y, Z, C}` and arms
/// `l ∈ {NW, SW, SE, NE}`, read off the node definitions
/// `φ_X = (φ_W − φ_E)/√2`, `φ_Y = (φ_N − φ_S)/√2`,
/// `φ_Z = (φ_N + φ_S − φ_E − φ_W)/2` and the `φ_C/4` per-arm share.
pub const ARM_PATTERN: [[f64; 4]; 4] = [
    [-H, H, H, -H],
    [H, H, -H, -H],
    [1.0, -1.0, 1.0, -1.0],
    [0.25, 0.25, 0.25, 0.25],
];

/// Mode currents `I_k = (1/φ0r) ∂H/∂φ_k` (A).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeCurrents {
    pub i_x: f64,
    pub i_y: f64,
    pub i_z: f64,
    pub i_c: f64,
}

impl ModeCurrents {
    pub fn as_array(&self) -> [f64; 4] {
        [self.i_x, self.i_y, self.i_z, self.i_c]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            i_x: a[0],
            i_y: a[1],
            i_z: a[2],
            i_c: a[3],
        }
    }

    /// Arm currents carrying these mode currents. Inverse of
    /// `I_k = Σ_l (∂φ_l/∂φ_k) I_l`.
    pub fn to_arm_currents(&self) -> [f64; 4] {
        let modes = self.as_array();
        let mut out = [0.0; 4];
        for (k, row) in ARM_PATTERN.iter().enumerate() {
            let norm2: f64 = row.iter().map(|p| p * p).sum();
            for (l, p) in row.iter().enumerate() {
                out[l] += p * modes[k] / norm2;
            }
        }
        out
    }

    pub fn from_arm_currents(arms: &[f64; 4]) -> Self {
        let mut out = [0.0; 4];
        for (k, row) in ARM_PATTERN.iter().enumerate() {
            out[k] = row.iter().zip(arms).map(|(p, i)| p * i).sum();
        }
        Self::from_array(out)
    }
}

/// Current through one rf-SQUID at junction phase `phi`:
/// `I_0 (sin φ + 2φ/β)`.
pub fn squid_current(phi: f64, p: &SquidParams) -> f64 {
    p.i0 * (phi.sin() + 2.0 * phi / p.beta())
}

/// `dI/dφ` of [`squid_current`] (A/rad). Positive for `β < 2`.
pub fn squid_current_slope(phi: f64, p: &SquidParams) -> f64 {
    p.i0 * (phi.cos() + 2.0 / p.beta())
}

/// Differential inductance of one squid, `φ0r (dφ/dI) = L_sh / (β cos φ + 2)`.
pub fn squid_diff_inductance(phi: f64, p: &SquidParams) -> f64 {
    PHI0_REDUCED / squid_current_slope(phi, p)
}

/// Junction phase carrying current `current` through one squid. The
/// current-phase relation is strictly monotone, so the root is unique.
pub fn squid_phase_for_current(current: f64, p: &SquidParams) -> f64 {
    let beta = p.beta();
    let i = current / p.i0;
    // |sin φ| ≤ 1 brackets the root.
    let lo = (i - 1.0) * beta / 2.0;
    let hi = (i + 1.0) * beta / 2.0;
    solve_monotone(
        |phi| phi.sin() + 2.0 * phi / beta - i,
        |phi| phi.cos() + 2.0 / beta,
        lo,
        hi,
        i * beta / 2.0,
    )
}

/// Differential inductance of one arm at junction phase `phi_j`:
/// `N L_sq(φ_J) + L_str/4`.
pub fn arm_inductance(phi_j: f64, b: &BridgeParams) -> f64 {
    b.nf() * squid_diff_inductance(phi_j, &b.squid) + b.l_str / 4.0
}

/// Junction phase on an arm whose total branch phase is `arm_phase`, with
/// the stray phase `L_str I / 4φ0r` subtracted self-consistently.
pub fn junction_phase_for_arm_phase(arm_phase: f64, b: &BridgeParams) -> f64 {
    let n = b.nf();
    if b.l_str == 0.0 {
        return arm_phase / n;
    }
    let beta = b.squid.beta();
    let a = b.stray_phase_per_amp() * b.squid.i0;
    let slope = n + 2.0 * a / beta;
    let lo = (arm_phase - a) / slope;
    let hi = (arm_phase + a) / slope;
    solve_monotone(
        |phi| n * phi + a * (phi.sin() + 2.0 * phi / beta) - arm_phase,
        |phi| n + a * (phi.cos() + 2.0 / beta),
        lo,
        hi,
        arm_phase / slope,
    )
}

/// Total branch phase of an arm whose squids sit at `phi_j`.
pub fn arm_phase_for_junction_phase(phi_j: f64, b: &BridgeParams) -> f64 {
    b.nf() * phi_j + b.stray_phase_per_amp() * squid_current(phi_j, &b.squid)
}

/// Safeguarded Newton iteration for a strictly increasing scalar function
/// with a known bracket `[lo, hi]`.
pub(crate) fn solve_monotone<F, D>(f: F, df: D, mut lo: f64, mut hi: f64, guess: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut x = guess.clamp(lo, hi);
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let step = fx / df(x);
        let mut next = x - step;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) || hi - lo <= f64::EPSILON * x.abs().max(1.0)
        {
            return next;
        }
        x = next;
    }
    x
}

/// Stray-free bridge energy in the branch-flux form (J).
pub fn hamiltonian_branch(m: &ModePhases, b: &BridgeParams) -> f64 {
    let n = b.nf();
    let ej = b.squid.josephson_energy();
    let quad = PHI0_REDUCED * PHI0_REDUCED / b.squid.l_sh;
    ArmPhases::from_modes(m)
        .as_array()
        .iter()
        .map(|phi| {
            let pj = phi / n;
            n * (-ej * pj.cos() + quad * pj * pj)
        })
        .sum()
}

/// Stray-free bridge energy in the eigenmode form (J). Agrees with
/// [`hamiltonian_branch`] to rounding.
pub fn hamiltonian_eigenmode(m: &ModePhases, b: &BridgeParams) -> f64 {
    let n = b.nf();
    let ej = b.squid.josephson_energy();
    let quad = PHI0_REDUCED * PHI0_REDUCED / (n * b.squid.l_sh);
    let s2n = std::f64::consts::SQRT_2 * n;
    let (x, y, z, c) = (m.phi_x / s2n, m.phi_y / s2n, m.phi_z / n, m.phi_c / (4.0 * n));
    quad * (m.phi_c * m.phi_c / 4.0
        + 2.0 * m.phi_x * m.phi_x
        + 2.0 * m.phi_y * m.phi_y
        + 4.0 * m.phi_z * m.phi_z)
        - 4.0 * n * ej * (c.cos() * x.cos() * y.cos() * z.cos() - c.sin() * x.sin() * y.sin() * z.sin())
}

/// Bridge energy (J). With stray inductance the stray phase on each arm is
/// eliminated at its stationary point, so `(1/φ0r) ∂H/∂φ_k` is still the
/// mode current returned by [`mode_currents`].
pub fn hamiltonian(m: &ModePhases, b: &BridgeParams) -> f64 {
    if b.l_str == 0.0 {
        return hamiltonian_branch(m, b);
    }
    let n = b.nf();
    let ej = b.squid.josephson_energy();
    let quad = PHI0_REDUCED * PHI0_REDUCED / b.squid.l_sh;
    let l_arm_str = b.l_str / 4.0;
    ArmPhases::from_modes(m)
        .as_array()
        .iter()
        .map(|&phi| {
            let pj = junction_phase_for_arm_phase(phi, b);
            let i = squid_current(pj, &b.squid);
            n * (-ej * pj.cos() + quad * pj * pj) + 0.5 * l_arm_str * i * i
        })
        .sum()
}

/// Current on each arm (A) at the given mode phases.
pub fn arm_currents(m: &ModePhases, b: &BridgeParams) -> [f64; 4] {
    ArmPhases::from_modes(m)
        .as_array()
        .map(|phi| squid_current(junction_phase_for_arm_phase(phi, b), &b.squid))
}

/// `I_k = (1/φ0r) Σ_l (∂H/∂φ_l)(∂φ_l/∂φ_k)`.
pub fn mode_currents(m: &ModePhases, b: &BridgeParams) -> ModeCurrents {
    ModeCurrents::from_arm_currents(&arm_currents(m, b))
}

/// Bilinear X–Y coupling coefficient `∂²H/∂φ_X∂φ_Y` at `φ_X = φ_Y = 0` (J/rad²).
pub fn coupling_gxy(phi_z: f64, phi_c: f64, b: &BridgeParams) -> f64 {
    let n = b.nf();
    2.0 * b.squid.josephson_energy() / n * (phi_z / n).sin() * (phi_c / (4.0 * n)).sin()
}

/// Coefficient of the `φ_X⁴` term of `H` at `φ_X = φ_Y = 0` (J/rad⁴).
pub fn kerr_kxy(phi_z: f64, phi_c: f64, b: &BridgeParams) -> f64 {
    let n = b.nf();
    -b.squid.josephson_energy() / (24.0 * n * n * n) * (phi_z / n).cos() * (phi_c / (4.0 * n)).cos()
}

/// Periods of the bridge response in the control variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Periods {
    /// Circulating-current period `4π I_0 / β` (A); independent of `L_str`.
    pub i_c: f64,
    /// Loop-phase period `8πN + 4π L_str / L_sh` (rad).
    pub phi_c: f64,
    /// Actuation-current period at fixed fluxoid (A): the `I_Z` increment
    /// that advances `φ_Z/N` by 2π.
    pub i_z: f64,
}

pub fn periods(b: &BridgeParams) -> Periods {
    let beta = b.squid.beta();
    let i_c = 4.0 * PI * b.squid.i0 / beta;
    Periods {
        i_c,
        phi_c: 8.0 * PI * b.nf() + 4.0 * PI * b.l_str / b.squid.l_sh,
        i_z: 4.0 * i_c,
    }
}
