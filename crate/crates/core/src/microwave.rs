//! Two-port microwave response of the bridge, modelled as a symmetric
//! lattice of the four arm differential inductances.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias::{solve_bias, AppliedBias, BiasState};
use crate::model::{junction_phase_for_arm_phase, squid_current, BridgeParams, PHI0_REDUCED};
use crate::trap::{trap_record, TrapProtocol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicrowaveError {
    #[error("invalid port environment: {0}")]
    InvalidEnvironment(String),
    #[error("contrast never exceeds {threshold_db} dB on the frequency grid")]
    EmptyBand { threshold_db: f64 },
    #[error("no 1 dB compression between {p_min_dbm} and {p_max_dbm} dBm")]
    NoCompressionInRange { p_min_dbm: f64, p_max_dbm: f64 },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PortEnvironment {
    pub z0: f64,
    pub freq_grid: Vec<f64>,
    pub insertion_loss_db: f64,
}

impl Default for PortEnvironment {
    fn default() -> Self {
        Self {
            z0: 50.0,
            freq_grid: linspace(4.0e9, 6.0e9, 201),
            insertion_loss_db: 6.0,
        }
    }
}

impl PortEnvironment {
    pub fn validate(&self) -> Result<(), MicrowaveError> {
        if !(self.z0 > 0.0 && self.z0.is_finite()) {
            return Err(MicrowaveError::InvalidEnvironment(format!("z0 must be positive, got {}", self.z0)));
        }
        if !self.insertion_loss_db.is_finite() {
            return Err(MicrowaveError::InvalidEnvironment("insertion_loss_db must be finite".into()));
        }
        if self.freq_grid.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(MicrowaveError::InvalidEnvironment("frequencies must be positive".into()));
        }
        if self.freq_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MicrowaveError::InvalidEnvironment("freq_grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Amplitude factor of the flat insertion loss.
    pub fn loss_factor(&self) -> f64 {
        10f64.powf(-self.insertion_loss_db / 20.0)
    }
}

/// `n` evenly spaced points from `start` to `stop`; a single point yields
/// `[start]`.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Transmission of a symmetric lattice with series impedance `z_a` and
/// cross impedance `z_b` between matched ports `z0`.
pub fn lattice_tau(z_a: Complex64, z_b: Complex64, z0: f64) -> Complex64 {
    z0 * (z_b - z_a) / ((z_a + z0) * (z_b + z0))
}

/// Series (NW/SE) and cross (SW/NE) inductances, each the mean of its pair.
pub fn lattice_inductances(bias: &BiasState) -> (f64, f64) {
    let l = bias.arm_inductances;
    (0.5 * (l[0] + l[2]), 0.5 * (l[1] + l[3]))
}

fn tau_from_inductances(l_a: f64, l_b: f64, f: f64, z0: f64) -> Complex64 {
    let w = 2.0 * PI * f;
    lattice_tau(Complex64::new(0.0, w * l_a), Complex64::new(0.0, w * l_b), z0)
}

/// Small-signal transmission at frequency `f`, including insertion loss.
pub fn s21(bias: &BiasState, f: f64, env: &PortEnvironment) -> Complex64 {
    let (l_a, l_b) = lattice_inductances(bias);
    tau_from_inductances(l_a, l_b, f, env.z0) * env.loss_factor()
}

/// How the C axis of a sweep is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CAxis {
    /// Circulating current imposed directly (no trapping).
    Continuous,
    /// Trap target current; each column is trapped once, then `I_Z` is swept
    /// on the closed loop.
    Trapped { protocol: TrapProtocol },
    /// External flux (rad) on a fixed fluxoid branch.
    Flux { j: i64 },
}

impl CAxis {
    pub fn unit(&self) -> &'static str {
        match self {
            CAxis::Flux { .. } => "rad",
            _ => "A",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionGrid {
    pub i_z_axis: Vec<f64>,
    pub c_axis: Vec<f64>,
    pub c_mode: CAxis,
    pub frequency: f64,
    /// Row-major, `tau[iz * c_axis.len() + ic]`.
    pub tau: Vec<Complex64>,
    /// True where the bias solve failed; the τ entry is then zero.
    pub flagged: Vec<bool>,
    /// Trapped fluxoid per column, when known.
    pub j: Option<Vec<i64>>,
}

impl TransmissionGrid {
    pub fn rows(&self) -> usize {
        self.i_z_axis.len()
    }

    pub fn cols(&self) -> usize {
        self.c_axis.len()
    }

    pub fn at(&self, iz: usize, ic: usize) -> Complex64 {
        self.tau[iz * self.cols() + ic]
    }

    /// τ along the C axis at one `I_Z` row.
    pub fn row(&self, iz: usize) -> &[Complex64] {
        let c = self.cols();
        &self.tau[iz * c..(iz + 1) * c]
    }

    pub fn column(&self, ic: usize) -> Vec<Complex64> {
        (0..self.rows()).map(|iz| self.at(iz, ic)).collect()
    }

    pub fn check_shape(&self) -> Result<(), String> {
        let n = self.rows() * self.cols();
        if self.tau.len() != n || self.flagged.len() != n {
            return Err(format!("grid holds {} values for a {}x{} shape", self.tau.len(), self.rows(), self.cols()));
        }
        if let Some(j) = &self.j {
            if j.len() != self.cols() {
                return Err("fluxoid labels do not match the C axis".into());
            }
        }
        if self.tau.iter().any(|t| !(t.re.is_finite() && t.im.is_finite())) {
            return Err("grid contains non-finite entries".into());
        }
        Ok(())
    }
}

/// Transmission over an `I_Z` × C grid at one frequency. Points are solved in
/// parallel and stored in axis order.
pub fn sweep_grid(
    i_z_axis: &[f64],
    c_axis: &[f64],
    c_mode: &CAxis,
    f: f64,
    b: &BridgeParams,
    env: &PortEnvironment,
) -> Result<TransmissionGrid, MicrowaveError> {
    env.validate()?;
    if i_z_axis.is_empty() || c_axis.is_empty() {
        return Err(MicrowaveError::InvalidSweep("axes must be non-empty".into()));
    }
    if !(f > 0.0) {
        return Err(MicrowaveError::InvalidSweep(format!("frequency must be positive, got {f}")));
    }
    let j: Option<Vec<i64>> = match c_mode {
        CAxis::Trapped { protocol } => Some(
            c_axis
                .par_iter()
                .enumerate()
                .map(|(k, &i_trg)| {
                    trap_record(i_trg, protocol, b, k as u64)
                        .map(|r| r.state.j)
                        .unwrap_or(i64::MIN)
                })
                .collect(),
        ),
        CAxis::Flux { j } => Some(vec![*j; c_axis.len()]),
        CAxis::Continuous => None,
    };
    let cols = c_axis.len();
    let points: Vec<Option<Complex64>> = (0..i_z_axis.len() * cols)
        .into_par_iter()
        .map(|idx| {
            let (iz, ic) = (idx / cols, idx % cols);
            let i_z = i_z_axis[iz];
            let applied = match c_mode {
                CAxis::Continuous => AppliedBias::current_driven(i_z, c_axis[ic]),
                CAxis::Trapped { .. } => {
                    let jj = j.as_ref().expect("trapped labels")[ic];
                    if jj == i64::MIN {
                        return None;
                    }
                    AppliedBias::fluxoid(jj, 0.0, i_z)
                }
                CAxis::Flux { j } => AppliedBias::fluxoid(*j, c_axis[ic], i_z),
            };
            solve_bias(&applied, b).ok().map(|s| s21(&s, f, env))
        })
        .collect();
    Ok(TransmissionGrid {
        i_z_axis: i_z_axis.to_vec(),
        c_axis: c_axis.to_vec(),
        c_mode: c_mode.clone(),
        frequency: f,
        flagged: points.iter().map(Option::is_none).collect(),
        tau: points.into_iter().map(|p| p.unwrap_or_default()).collect(),
        j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastOptions {
    pub threshold_db: f64,
    /// Value reported where the off transmission vanishes.
    pub floor_db: f64,
}

impl Default for ContrastOptions {
    fn default() -> Self {
        Self {
            threshold_db: 20.0,
            floor_db: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub freqs: Vec<f64>,
    pub contrast_db: Vec<f64>,
    /// True where the contrast was clipped to the floor.
    pub clipped: Vec<bool>,
    /// Edges of the widest contiguous run above threshold.
    pub band: (f64, f64),
    pub bandwidth_hz: f64,
}

/// On/off contrast per frequency and the widest contiguous band above the
/// threshold. `tau_on` and `tau_off` are sampled on `freqs`.
pub fn on_off_contrast(
    freqs: &[f64],
    tau_on: &[Complex64],
    tau_off: &[Complex64],
    opts: &ContrastOptions,
) -> Result<ContrastReport, MicrowaveError> {
    if freqs.len() != tau_on.len() || freqs.len() != tau_off.len() {
        return Err(MicrowaveError::InvalidSweep("on/off traces must match the frequency grid".into()));
    }
    let mut contrast_db = Vec::with_capacity(freqs.len());
    let mut clipped = Vec::with_capacity(freqs.len());
    for (on, off) in tau_on.iter().zip(tau_off) {
        let (on, off) = (on.norm(), off.norm());
        if on == off {
            contrast_db.push(0.0);
            clipped.push(false);
            continue;
        }
        let c = if off == 0.0 { f64::INFINITY } else { 20.0 * (on / off).log10() };
        if c > opts.floor_db {
            contrast_db.push(opts.floor_db);
            clipped.push(true);
        } else {
            contrast_db.push(c);
            clipped.push(false);
        }
    }
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for k in 0..=freqs.len() {
        let above = k < freqs.len() && contrast_db[k] > opts.threshold_db;
        match (above, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                let width = freqs[k - 1] - freqs[s];
                if best.is_none_or(|(a, e)| width > freqs[e] - freqs[a]) {
                    best = Some((s, k - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    let (s, e) = best.ok_or(MicrowaveError::EmptyBand {
        threshold_db: opts.threshold_db,
    })?;
    Ok(ContrastReport {
        freqs: freqs.to_vec(),
        contrast_db,
        clipped,
        band: (freqs[s], freqs[e]),
        bandwidth_hz: freqs[e] - freqs[s],
    })
}

/// Transmission of two bias points over the environment's frequency grid.
pub fn contrast_sweep(
    on: &BiasState,
    off: &BiasState,
    env: &PortEnvironment,
    opts: &ContrastOptions,
) -> Result<ContrastReport, MicrowaveError> {
    env.validate()?;
    let tau_on: Vec<_> = env.freq_grid.iter().map(|&f| s21(on, f, env)).collect();
    let tau_off: Vec<_> = env.freq_grid.iter().map(|&f| s21(off, f, env)).collect();
    on_off_contrast(&env.freq_grid, &tau_on, &tau_off, opts)
}

/// Arm response used for large-signal evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmNonlinearity {
    /// Full rf-SQUID current-phase relation plus linear stray inductance.
    Josephson,
    /// Arms frozen at their small-signal inductance.
    Linear,
}

/// Input power (dBm) at drive phase amplitude `a` on the X port,
/// `P = (A φ0r ω)² / 2Z0`.
pub fn drive_power_dbm(a: f64, f: f64, z0: f64) -> f64 {
    let v = a * PHI0_REDUCED * 2.0 * PI * f;
    10.0 * (v * v / (2.0 * z0) / 1e-3).log10()
}

/// Inverse of [`drive_power_dbm`].
pub fn drive_amplitude(p_dbm: f64, f: f64, z0: f64) -> f64 {
    let p = 1e-3 * 10f64.powf(p_dbm / 10.0);
    (2.0 * z0 * p).sqrt() / (PHI0_REDUCED * 2.0 * PI * f)
}

const FOURIER_SAMPLES: usize = 512;

/// Describing-function inductance of one arm biased at `arm_phase` and
/// driven with phase amplitude `delta`: the ratio of flux amplitude to the
/// fundamental Fourier component of the arm current.
fn arm_effective_inductance(arm_phase: f64, delta: f64, b: &BridgeParams) -> f64 {
    let current = |theta: f64| squid_current(junction_phase_for_arm_phase(theta, b), &b.squid);
    let i0 = current(arm_phase);
    let mut fundamental = 0.0;
    for k in 0..FOURIER_SAMPLES {
        let s = (2.0 * PI * (k as f64 + 0.5) / FOURIER_SAMPLES as f64).sin();
        fundamental += (current(arm_phase + delta * s) - i0) * s;
    }
    fundamental *= 2.0 / FOURIER_SAMPLES as f64;
    PHI0_REDUCED * delta / fundamental
}

/// Transmission magnitude at drive amplitude `a` (rad on the X mode),
/// before insertion loss.
pub fn large_signal_tau(bias: &BiasState, b: &BridgeParams, f: f64, z0: f64, a: f64, nl: ArmNonlinearity) -> Complex64 {
    let l = match nl {
        ArmNonlinearity::Linear => bias.arm_inductances,
        ArmNonlinearity::Josephson => {
            // An X-mode amplitude A moves every arm by A/√2.
            let delta = a / 2f64.sqrt();
            let arms = bias.arm_phases.as_array();
            arms.map(|p| arm_effective_inductance(p, delta, b))
        }
    };
    tau_from_inductances(0.5 * (l[0] + l[2]), 0.5 * (l[1] + l[3]), f, z0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveRange {
    pub p_min_dbm: f64,
    pub p_max_dbm: f64,
    pub points: usize,
}

impl Default for DriveRange {
    fn default() -> Self {
        Self {
            p_min_dbm: -110.0,
            p_max_dbm: -30.0,
            points: 161,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub frequency: f64,
    pub p1db_dbm: f64,
    pub p1db_watts: f64,
    pub amplitude_rad: f64,
    /// `|τ|` in the small-signal limit, including insertion loss.
    pub small_signal: f64,
    pub sweep_dbm: Vec<f64>,
    pub sweep_gain_db: Vec<f64>,
}

/// Input power at which `|τ|` has dropped 1 dB below its small-signal value.
pub fn compression_point(
    bias: &BiasState,
    b: &BridgeParams,
    f: f64,
    env: &PortEnvironment,
    drive: &DriveRange,
    nl: ArmNonlinearity,
) -> Result<CompressionReport, MicrowaveError> {
    env.validate()?;
    if drive.points < 2 || !(drive.p_max_dbm > drive.p_min_dbm) {
        return Err(MicrowaveError::InvalidSweep("drive range must span at least two powers".into()));
    }
    let tau_at = |p: f64| large_signal_tau(bias, b, f, env.z0, drive_amplitude(p, f, env.z0), nl).norm();
    let reference = large_signal_tau(bias, b, f, env.z0, 1e-6, nl).norm();
    let gain_db = |p: f64| 20.0 * (tau_at(p) / reference).log10();
    let sweep_dbm = linspace(drive.p_min_dbm, drive.p_max_dbm, drive.points);
    let sweep_gain_db: Vec<f64> = sweep_dbm.iter().map(|&p| gain_db(p)).collect();
    let knee = sweep_gain_db.iter().position(|g| *g <= -1.0);
    let no_compression = MicrowaveError::NoCompressionInRange {
        p_min_dbm: drive.p_min_dbm,
        p_max_dbm: drive.p_max_dbm,
    };
    let k = match knee {
        Some(0) | None => return Err(no_compression),
        Some(k) => k,
    };
    let (mut lo, mut hi) = (sweep_dbm[k - 1], sweep_dbm[k]);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if gain_db(mid) <= -1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p1db_dbm = 0.5 * (lo + hi);
    Ok(CompressionReport {
        frequency: f,
        p1db_dbm,
        p1db_watts: 1e-3 * 10f64.powf(p1db_dbm / 10.0),
        amplitude_rad: drive_amplitude(p1db_dbm, f, env.z0),
        small_signal: reference * env.loss_factor(),
        sweep_dbm,
        sweep_gain_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{periods, SquidParams};
    use proptest::prelude::*;

    fn bridge() -> BridgeParams {
        let squid = SquidParams::from_beta(32.5e-12, 1.2).unwrap();
        BridgeParams::new(squid, 20, 20.0 * 32.5e-12, 15e-12).unwrap()
    }

    fn env() -> PortEnvironment {
        PortEnvironment::default()
    }

    #[test]
    fn balanced_bridge_is_null() {
        let b = bridge();
        for i_c in [0.0, 3e-6, -20e-6, 1e-4] {
            let s = solve_bias(&AppliedBias::current_driven(0.0, i_c), &b).unwrap();
            assert_eq!(s21(&s, 5.1e9, &env()), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn matched_limit_is_lossless() {
        // Reactances with x_a x_b = -z0² give unit transmission.
        let z0 = 50.0;
        for x in [0.3, 1.0, 7.0, 120.0] {
            let t = lattice_tau(Complex64::new(0.0, x), Complex64::new(0.0, -z0 * z0 / x), z0);
            assert!((t.norm() - 1.0).abs() < 1e-12);
        }
        let t = lattice_tau(Complex64::new(0.0, 1e-9), Complex64::new(0.0, -z0 * z0 / 1e-9), z0);
        assert!((t.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn insertion_loss_scales_transmission() {
        let b = bridge();
        let s = solve_bias(&AppliedBias::current_driven(30e-6, 12e-6), &b).unwrap();
        let lossless = PortEnvironment {
            insertion_loss_db: 0.0,
            ..env()
        };
        let ratio = s21(&s, 5e9, &env()).norm() / s21(&s, 5e9, &lossless).norm();
        assert!((20.0 * ratio.log10() + 6.0).abs() < 1e-12);
    }

    #[test]
    fn sign_follows_inductance_imbalance() {
        let b = bridge();
        let lossless = PortEnvironment {
            insertion_loss_db: 0.0,
            ..env()
        };
        for k in 0..40 {
            let i_z = -90e-6 + 4.7e-6 * k as f64;
            let s = solve_bias(&AppliedBias::current_driven(i_z, 9e-6), &b).unwrap();
            let (la, lb) = lattice_inductances(&s);
            let t = s21(&s, 5.1e9, &lossless);
            assert!(t.norm() <= 1.0);
            if la != lb {
                assert_eq!(t.re > 0.0, lb > la);
            }
        }
    }

    #[test]
    fn sign_flips_across_balance() {
        let b = bridge();
        let re = |i_z: f64| {
            let s = solve_bias(&AppliedBias::current_driven(i_z, 8e-6), &b).unwrap();
            s21(&s, 5.1e9, &env()).re
        };
        assert!(re(5e-6) * re(-5e-6) < 0.0);
        let half_c = periods(&b).i_c / 2.0;
        let re_c = |i_c: f64| {
            let s = solve_bias(&AppliedBias::current_driven(20e-6, i_c), &b).unwrap();
            s21(&s, 5.1e9, &env()).re
        };
        assert!(re_c(half_c - 1e-6) * re_c(half_c + 1e-6) < 0.0);
    }

    #[test]
    fn continuous_grid_is_periodic_checkerboard() {
        let b = bridge();
        let p = periods(&b);
        let i_z: Vec<f64> = linspace(-p.i_z / 2.0, p.i_z / 2.0, 9).iter().map(|x| x + 1e-7).collect();
        let c: Vec<f64> = linspace(0.0, p.i_c, 9).iter().map(|x| x + 1e-7).collect();
        let g = sweep_grid(&i_z, &c, &CAxis::Continuous, 5.1e9, &b, &env()).unwrap();
        g.check_shape().unwrap();
        let shifted: Vec<f64> = i_z.iter().map(|x| x + p.i_z).collect();
        let g2 = sweep_grid(&shifted, &c, &CAxis::Continuous, 5.1e9, &b, &env()).unwrap();
        for (a, c) in g.tau.iter().zip(&g2.tau) {
            assert!((a - c).norm() < 1e-9);
        }
        // Sign alternates between the quadrants of the (I_Z, I_C) cell.
        let q = |iz: usize, ic: usize| g.at(iz, ic).re.signum();
        assert_eq!(q(6, 2), -q(2, 2));
        assert_eq!(q(6, 2), -q(6, 6));
        assert_eq!(q(6, 2), q(2, 6));
    }

    #[test]
    fn trapped_grid_has_steps() {
        let b = bridge();
        let protocol = TrapProtocol::ideal();
        let c = linspace(0.0, 15e-6, 61);
        let g = sweep_grid(&[30e-6], &c, &CAxis::Trapped { protocol }, 5.1e9, &b, &env()).unwrap();
        let j = g.j.as_ref().unwrap();
        let steps = j.windows(2).filter(|w| w[1] != w[0]).count();
        assert!(steps >= 3);
        for w in 0..c.len() - 1 {
            if j[w] == j[w + 1] {
                assert_eq!(g.at(0, w), g.at(0, w + 1));
            }
        }
    }

    #[test]
    fn degenerate_sweep_single_column() {
        let b = bridge();
        let g = sweep_grid(&linspace(1e-5, 1e-5, 1), &[2e-6], &CAxis::Continuous, 5.1e9, &b, &env()).unwrap();
        assert_eq!((g.rows(), g.cols()), (1, 1));
    }

    #[test]
    fn contrast_examples() {
        let freqs = linspace(4e9, 6e9, 5);
        let on = vec![Complex64::new(0.3, 0.1); 5];
        let same = on_off_contrast(&freqs, &on, &on, &ContrastOptions::default());
        assert!(matches!(same, Err(MicrowaveError::EmptyBand { .. })));
        let zero = vec![Complex64::default(); 5];
        let r = on_off_contrast(&freqs, &on, &zero, &ContrastOptions::default()).unwrap();
        assert!(r.clipped.iter().all(|c| *c));
        assert!(r.contrast_db.iter().all(|c| *c == 80.0));
        assert_eq!(r.bandwidth_hz, 2e9);
        let off: Vec<_> = [0.1, 0.01, 0.001, 0.1, 0.001]
            .iter()
            .map(|m| Complex64::new(*m * 0.3, *m * 0.1))
            .collect();
        let r = on_off_contrast(&freqs, &on, &off, &ContrastOptions::default()).unwrap();
        assert_eq!(r.band, (4.5e9, 5e9));
        assert!((r.contrast_db[1] - 40.0).abs() < 1e-9);
    }

    #[test]
    fn small_signal_limit_matches_s21() {
        let b = bridge();
        let s = solve_bias(&AppliedBias::current_driven(25e-6, 10e-6), &b).unwrap();
        let ls = large_signal_tau(&s, &b, 5.1e9, 50.0, 1e-6, ArmNonlinearity::Josephson) * env().loss_factor();
        let ss = s21(&s, 5.1e9, &env());
        assert!((ls - ss).norm() < 1e-4 * ss.norm());
    }

    #[test]
    fn linear_arms_never_compress() {
        let b = bridge();
        let s = solve_bias(&AppliedBias::current_driven(25e-6, 10e-6), &b).unwrap();
        let r = compression_point(&s, &b, 5.1e9, &env(), &DriveRange::default(), ArmNonlinearity::Linear);
        assert!(matches!(r, Err(MicrowaveError::NoCompressionInRange { .. })));
    }

    #[test]
    fn josephson_arms_compress() {
        let b = bridge();
        let s = solve_bias(&AppliedBias::current_driven(25e-6, 10e-6), &b).unwrap();
        let r = compression_point(&s, &b, 5.1e9, &env(), &DriveRange::default(), ArmNonlinearity::Josephson).unwrap();
        assert!(r.p1db_dbm > -110.0 && r.p1db_dbm < -30.0);
        let back = drive_power_dbm(r.amplitude_rad, 5.1e9, 50.0);
        assert!((back - r.p1db_dbm).abs() < 1e-9);
    }

    #[test]
    fn environment_validation() {
        let bad = PortEnvironment {
            freq_grid: vec![5e9, 4e9],
            ..env()
        };
        assert!(bad.validate().is_err());
        assert!(env().validate().is_ok());
    }

    proptest! {
        #[test]
        fn passive_and_antisymmetric(la in 1e-12..1e-8f64, lb in 1e-12..1e-8f64, f in 1e8..2e10f64) {
            let t = tau_from_inductances(la, lb, f, 50.0);
            prop_assert!(t.norm() <= 1.0 + 1e-15);
            let swapped = tau_from_inductances(lb, la, f, 50.0);
            prop_assert!((t + swapped).norm() <= 1e-15);
        }

        #[test]
        fn odd_in_actuation(i_z in -200e-6..200e-6f64) {
            let b = bridge();
            let a = solve_bias(&AppliedBias::current_driven(i_z, 7e-6), &b).unwrap();
            let c = solve_bias(&AppliedBias::current_driven(-i_z, 7e-6), &b).unwrap();
            let (ta, tc) = (s21(&a, 5.1e9, &env()), s21(&c, 5.1e9, &env()));
            prop_assert!((ta + tc).norm() <= 1e-12 * (1.0 + ta.norm()));
        }

        #[test]
        fn monotone_in_imbalance(la in 1e-10..3e-9f64, d1 in 0.0..1e-9f64, d2 in 0.0..1e-9f64) {
            let (small, large) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let t1 = tau_from_inductances(la, la + small, 5.1e9, 50.0).norm();
            let t2 = tau_from_inductances(la, la + large, 5.1e9, 50.0).norm();
            prop_assert!(t2 + 1e-15 >= t1);
        }
    }
}
