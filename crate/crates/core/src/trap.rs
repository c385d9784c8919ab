//! Persistent-current-switch trapping: fluxoid branches, step widths, loop
//! differential inductance and the stochastic trap-failure channel.
//!
//! The heat pulse is collapsed to an instantaneous event. While the PCS is
//! normal the target current flows straight into the bridge; on cooling the
//! loop closes on the fluxoid branch whose circulating current is nearest to
//! the target, with a logistic transition of configurable width around each
//! branch boundary.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::bias::{solve_bias, AppliedBias, BiasError, BiasState};
use crate::model::{arm_phase_for_junction_phase, periods, BridgeParams, PHI0, PHI0_REDUCED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapProtocol {
    /// Heater current that drives the Z lines normal (A). Metadata only.
    pub heater_threshold: f64,
    /// Ramp duration of the heat pulse (s). Metadata only.
    pub ramp_duration: f64,
    /// Probability that a single trap lands on the wrong branch.
    pub failure_probability: f64,
    /// Relative weights of failure offsets of magnitude 1, 2 and 3 quanta.
    pub failure_weights: [f64; 3],
    /// Logistic width of the stochastic branch boundary, as a fraction of
    /// the local step width. Zero makes trapping deterministic.
    pub boundary_width: f64,
    pub rng_seed: u64,
}

impl Default for TrapProtocol {
    fn default() -> Self {
        Self {
            heater_threshold: 4.8e-3,
            ramp_duration: 200e-6,
            failure_probability: 0.023,
            failure_weights: [1.0, 0.7, 0.49],
            boundary_width: 0.05,
            rng_seed: 0,
        }
    }
}

impl TrapProtocol {
    /// Deterministic nearest-branch trapping: no failures, sharp boundaries.
    pub fn ideal() -> Self {
        Self {
            failure_probability: 0.0,
            boundary_width: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.failure_probability) {
            return Err(format!(
                "failure_probability must lie in [0, 1), got {}",
                self.failure_probability
            ));
        }
        if !(self.boundary_width >= 0.0 && self.boundary_width.is_finite()) {
            return Err(format!("boundary_width must be non-negative, got {}", self.boundary_width));
        }
        if self.failure_weights.iter().any(|w| !(*w >= 0.0)) || self.failure_weights.iter().sum::<f64>() <= 0.0 {
            return Err("failure_weights must be non-negative with a positive sum".into());
        }
        if !(self.heater_threshold > 0.0 && self.ramp_duration > 0.0) {
            return Err("heater_threshold and ramp_duration must be positive".into());
        }
        Ok(())
    }
}

/// A closed loop holding `j` fluxoids under external flux `phi_ext`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapState {
    pub j: i64,
    pub phi_ext: f64,
    pub i_c: f64,
}

impl TrapState {
    pub fn new(j: i64, phi_ext: f64, b: &BridgeParams) -> Result<Self, BiasError> {
        Ok(Self {
            j,
            phi_ext,
            i_c: i_c_of_j(j, phi_ext, 0.0, b)?,
        })
    }

    /// Same fluxoid, with the C source now acting as a flux bias through the
    /// superconducting PCS: `φ_ext = L_PCS I_src / φ0r`.
    pub fn with_source(&self, i_src: f64, b: &BridgeParams) -> Result<Self, BiasError> {
        Self::new(self.j, b.l_pcs() * i_src / PHI0_REDUCED, b)
    }
}

/// Full outcome of one trap attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapRecord {
    pub i_trg: f64,
    /// Branch selected by the (possibly stochastic) boundary before failures.
    pub intended_j: i64,
    /// Nonzero when the failure channel fired.
    pub failure_offset: i64,
    pub state: TrapState,
}

/// Circulating current on fluxoid branch `j`.
pub fn i_c_of_j(j: i64, phi_ext: f64, i_z: f64, b: &BridgeParams) -> Result<f64, BiasError> {
    Ok(solve_bias(&AppliedBias::fluxoid(j, phi_ext, i_z), b)?.i_c())
}

/// Loop phase carried by `i_c` flowing around the open loop (PCS normal).
pub fn open_loop_phase(i_c: f64, i_z: f64, b: &BridgeParams) -> Result<f64, BiasError> {
    Ok(solve_bias(&AppliedBias::current_driven(i_z, i_c), b)?.arm_phases.sum())
}

/// Differential inductance of the bridge loop at a current-driven bias.
pub fn loop_diff_inductance(i_c: f64, i_z: f64, b: &BridgeParams) -> Result<f64, BiasError> {
    Ok(solve_bias(&AppliedBias::current_driven(i_z, i_c), b)?.loop_inductance())
}

/// C-bias increment that adds one fluxoid at this bias,
/// `I_stp = 2π φ0r / L_loop`.
pub fn step_width(i_trg: f64, i_z: f64, b: &BridgeParams) -> Result<f64, BiasError> {
    Ok(2.0 * PI * PHI0_REDUCED / loop_diff_inductance(i_trg, i_z, b)?)
}

/// Differential inductance read out from a step width, in both flux-quantum
/// conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInductance {
    /// `(h/2e) / I_stp` (H); equals the loop differential inductance.
    pub h_over_2e: f64,
    /// `(ħ/2e) / I_stp` (H).
    pub hbar_over_2e: f64,
}

impl StepInductance {
    pub fn from_step(i_stp: f64) -> Self {
        Self {
            h_over_2e: PHI0 / i_stp,
            hbar_over_2e: PHI0_REDUCED / i_stp,
        }
    }
}

/// Trapped flux quanta per transmission period, `round(φ̃_C / 2π)`.
pub fn quanta_per_period(b: &BridgeParams) -> i64 {
    (periods(b).phi_c / (2.0 * PI)).round() as i64
}

/// Stray inductance implied by a counted number of quanta per period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrayReadout {
    /// From the loop-period identity `count = 4N + 2 L_str/L_sh`.
    pub loop_period: f64,
    /// From the step-counting relation `L_str = (count − 4N) L_sh`.
    pub step_count: f64,
}

pub fn stray_from_quanta(count: i64, n: u32, l_sh: f64) -> StrayReadout {
    let excess = (count - 4 * n as i64) as f64;
    StrayReadout {
        loop_period: excess * l_sh / 2.0,
        step_count: excess * l_sh,
    }
}

/// Operating point with every junction at `π/2` (maximal `g_XY`, vanishing
/// `K_XY`) at zero actuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalBias {
    pub i_c: f64,
    pub phi_c: f64,
    /// `φ_C / 2π` at `φ_ext = 0`.
    pub j_exact: f64,
    pub j_nearest: i64,
}

pub fn optimal_bias(b: &BridgeParams) -> OptimalBias {
    let phi_c = 4.0 * arm_phase_for_junction_phase(PI / 2.0, b);
    let j_exact = phi_c / (2.0 * PI);
    OptimalBias {
        i_c: crate::model::squid_current(PI / 2.0, &b.squid),
        phi_c,
        j_exact,
        j_nearest: j_exact.round() as i64,
    }
}

/// Branch nearest in circulating current to `i_trg` (at `φ_ext = 0`,
/// `I_Z = 0`), together with its neighbours' currents.
fn nearest_branch(i_trg: f64, b: &BridgeParams) -> Result<(i64, f64, f64, f64), BiasError> {
    let guess = (open_loop_phase(i_trg, 0.0, b)? / (2.0 * PI)).round() as i64;
    let ic = |j: i64| i_c_of_j(j, 0.0, 0.0, b);
    let mut j = guess;
    let (mut lo, mut mid, mut hi) = (ic(j - 1)?, ic(j)?, ic(j + 1)?);
    loop {
        if (i_trg - hi).abs() < (i_trg - mid).abs() {
            j += 1;
            (lo, mid, hi) = (mid, hi, ic(j + 1)?);
        } else if (i_trg - lo).abs() < (i_trg - mid).abs() {
            j -= 1;
            (lo, mid, hi) = (ic(j - 1)?, lo, mid);
        } else {
            return Ok((j, lo, mid, hi));
        }
    }
}

fn draw_failure_offset<R: Rng>(weights: &[f64; 3], rng: &mut R) -> i64 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut magnitude = 3;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            magnitude = k as i64 + 1;
            break;
        }
        u -= w;
    }
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

fn trap_with_rng<R: Rng>(
    i_trg: f64,
    protocol: &TrapProtocol,
    b: &BridgeParams,
    rng: &mut R,
) -> Result<TrapRecord, BiasError> {
    let (nearest, lo, mid, hi) = nearest_branch(i_trg, b)?;
    let mut intended = nearest;
    if protocol.boundary_width > 0.0 {
        // Logistic crossover around the boundary on the side of i_trg.
        let (neighbour, boundary, width) = if i_trg >= mid {
            (nearest + 1, 0.5 * (mid + hi), hi - mid)
        } else {
            (nearest - 1, 0.5 * (lo + mid), mid - lo)
        };
        let z = (i_trg - boundary).abs() / (protocol.boundary_width * width);
        let p_neighbour = 1.0 / (1.0 + z.exp());
        if rng.random::<f64>() < p_neighbour {
            intended = neighbour;
        }
    }
    let mut failure_offset = 0;
    if protocol.failure_probability > 0.0 && rng.random::<f64>() < protocol.failure_probability {
        failure_offset = draw_failure_offset(&protocol.failure_weights, rng);
    }
    let j = intended + failure_offset;
    Ok(TrapRecord {
        i_trg,
        intended_j: intended,
        failure_offset,
        state: TrapState::new(j, 0.0, b)?,
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One trap attempt on a private stream seeded from `protocol.rng_seed`.
pub fn trap(i_trg: f64, protocol: &TrapProtocol, b: &BridgeParams) -> Result<TrapState, BiasError> {
    Ok(trap_record(i_trg, protocol, b, 0)?.state)
}

/// Trap attempt number `index` of a sweep. Each index draws from its own
/// stream, so results do not depend on evaluation order.
pub fn trap_record(i_trg: f64, protocol: &TrapProtocol, b: &BridgeParams, index: u64) -> Result<TrapRecord, BiasError> {
    let mut rng = stream_rng(protocol.rng_seed, index);
    trap_with_rng(i_trg, protocol, b, &mut rng)
}

/// Schedule and disturbances for a long-term persistence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftScenario {
    pub epochs: usize,
    pub cadence_hours: f64,
    pub initial_j: i64,
    /// Rate of spontaneous ±1 fluxoid jumps (per hour).
    pub jump_rate: f64,
    /// Deterministic jumps: `(epoch, Δj)` applied from that epoch on.
    pub injected_jumps: Vec<(usize, i64)>,
    /// Fractional linear decay of the circulating current per day.
    pub decay_per_day: f64,
}

impl Default for DriftScenario {
    fn default() -> Self {
        Self {
            epochs: 168,
            cadence_hours: 1.0,
            initial_j: 34,
            jump_rate: 0.0,
            injected_jumps: Vec::new(),
            decay_per_day: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub times: Vec<f64>,
    pub states: Vec<TrapState>,
}

/// Time series of the trapped state with Poisson-distributed spontaneous
/// jumps between epochs.
pub fn drift_monitor(scenario: &DriftScenario, seed: u64, b: &BridgeParams) -> Result<DriftSeries, BiasError> {
    if !(scenario.jump_rate >= 0.0) {
        return Err(BiasError::NonFinite);
    }
    let mut rng = stream_rng(seed, u64::MAX);
    let poisson = (scenario.jump_rate > 0.0)
        .then(|| Poisson::new(scenario.jump_rate * scenario.cadence_hours).expect("positive rate"));
    let mut j = scenario.initial_j;
    let mut times = Vec::with_capacity(scenario.epochs);
    let mut states = Vec::with_capacity(scenario.epochs);
    let mut cache = std::collections::HashMap::new();
    for epoch in 0..scenario.epochs {
        if epoch > 0 {
            if let Some(p) = &poisson {
                let jumps = p.sample(&mut rng) as i64;
                for _ in 0..jumps {
                    j += if rng.random::<bool>() { 1 } else { -1 };
                }
            }
        }
        for &(at, dj) in &scenario.injected_jumps {
            if at == epoch {
                j += dj;
            }
        }
        let t = epoch as f64 * scenario.cadence_hours;
        let i_c = match cache.get(&j) {
            Some(&v) => v,
            None => {
                let v = i_c_of_j(j, 0.0, 0.0, b)?;
                cache.insert(j, v);
                v
            }
        };
        times.push(t);
        states.push(TrapState {
            j,
            phi_ext: 0.0,
            i_c: i_c * (1.0 - scenario.decay_per_day * t / 24.0),
        });
    }
    Ok(DriftSeries { times, states })
}

/// Bias state on branch `j` at actuation `i_z`.
pub fn branch_state(state: &TrapState, i_z: f64, b: &BridgeParams) -> Result<BiasState, BiasError> {
    solve_bias(&AppliedBias::fluxoid(state.j, state.phi_ext, i_z), b)
}
