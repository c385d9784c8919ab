//! DC operating point of the bridge by damped Newton iteration on the four
//! per-arm junction phases.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    arm_inductance, arm_phase_for_junction_phase, solve_monotone, squid_current, squid_current_slope,
    squid_phase_for_current, ArmPhases, BridgeParams, ModeCurrents, ModePhases, ARM_PATTERN, PHI0_REDUCED,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BiasError {
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e} A)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("non-finite bias input")]
    NonFinite,
}

/// Applied control currents. The signal modes default to zero current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AppliedBias {
    /// All four mode currents prescribed.
    CurrentDriven { i_x: f64, i_y: f64, i_z: f64, i_c: f64 },
    /// Signal and actuation currents prescribed; the loop phase is pinned to
    /// `φ_C = 2πj + φ_ext (+ κ I_Z)` by fluxoid quantization.
    FluxoidConstrained {
        i_x: f64,
        i_y: f64,
        i_z: f64,
        j: i64,
        phi_ext: f64,
    },
}

impl AppliedBias {
    pub fn current_driven(i_z: f64, i_c: f64) -> Self {
        AppliedBias::CurrentDriven {
            i_x: 0.0,
            i_y: 0.0,
            i_z,
            i_c,
        }
    }

    pub fn fluxoid(j: i64, phi_ext: f64, i_z: f64) -> Self {
        AppliedBias::FluxoidConstrained {
            i_x: 0.0,
            i_y: 0.0,
            i_z,
            j,
            phi_ext,
        }
    }

    pub fn with_signal(self, sx: f64, sy: f64) -> Self {
        match self {
            AppliedBias::CurrentDriven { i_z, i_c, .. } => AppliedBias::CurrentDriven {
                i_x: sx,
                i_y: sy,
                i_z,
                i_c,
            },
            AppliedBias::FluxoidConstrained { i_z, j, phi_ext, .. } => AppliedBias::FluxoidConstrained {
                i_x: sx,
                i_y: sy,
                i_z,
                j,
                phi_ext,
            },
        }
    }

    fn signal_currents(&self) -> [f64; 3] {
        match *self {
            AppliedBias::CurrentDriven { i_x, i_y, i_z, .. }
            | AppliedBias::FluxoidConstrained { i_x, i_y, i_z, .. } => [i_x, i_y, i_z],
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            AppliedBias::CurrentDriven { i_x, i_y, i_z, i_c } => {
                [i_x, i_y, i_z, i_c].iter().all(|v| v.is_finite())
            }
            AppliedBias::FluxoidConstrained {
                i_x, i_y, i_z, phi_ext, ..
            } => [i_x, i_y, i_z, phi_ext].iter().all(|v| v.is_finite()),
        }
    }
}

/// Target loop phase `2πj + φ_ext + κ I_Z` for a fluxoid-constrained bias.
pub fn loop_phase_target(j: i64, phi_ext: f64, i_z: f64, b: &BridgeParams) -> f64 {
    2.0 * PI * j as f64 + phi_ext + b.cross_coupling() * i_z
}

/// Solved operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasState {
    pub phases: ModePhases,
    pub arm_phases: ArmPhases,
    /// Junction phase of each squid on an arm (all squids on an arm are equal).
    pub junction_phases: [f64; 4],
    pub arm_currents: [f64; 4],
    /// Differential inductance of each arm, including `L_str/4`.
    pub arm_inductances: [f64; 4],
    /// Largest current-equation residual (A).
    pub residual_norm: f64,
    pub iterations: usize,
}

impl BiasState {
    fn from_junction_phases(phi_j: [f64; 4], b: &BridgeParams, residual_norm: f64, iterations: usize) -> Self {
        let arm_phases = ArmPhases::from_array(phi_j.map(|p| arm_phase_for_junction_phase(p, b)));
        Self {
            phases: ModePhases::from_arms(&arm_phases),
            arm_phases,
            junction_phases: phi_j,
            arm_currents: phi_j.map(|p| squid_current(p, &b.squid)),
            arm_inductances: phi_j.map(|p| arm_inductance(p, b)),
            residual_norm,
            iterations,
        }
    }

    pub fn mode_currents(&self) -> ModeCurrents {
        ModeCurrents::from_arm_currents(&self.arm_currents)
    }

    pub fn i_c(&self) -> f64 {
        self.mode_currents().i_c
    }

    /// Differential inductance of the closed bridge loop, `φ0r dφ_C/dI_C`,
    /// i.e. the four arms in series.
    pub fn loop_inductance(&self) -> f64 {
        self.arm_inductances.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Absolute current tolerance in units of `I_0`.
    pub current_tol: f64,
    /// Absolute loop-phase tolerance (rad).
    pub phase_tol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            current_tol: 1e-12,
            phase_tol: 1e-10,
            max_iterations: 200,
            max_halvings: 60,
        }
    }
}

/// Arm currents `[NW, SW, SE, NE]` carrying actuation `i_z` and circulation
/// `i_c`: opposite arms carry equal current, `I_C ± I_Z/4`, so that the
/// mode projection `Σ_l (∂φ_l/∂φ_Z) I_l` returns exactly `I_Z`.
pub fn arm_current_split(i_z: f64, i_c: f64) -> [f64; 4] {
    ModeCurrents {
        i_x: 0.0,
        i_y: 0.0,
        i_z,
        i_c,
    }
    .to_arm_currents()
}

pub fn solve_bias(applied: &AppliedBias, b: &BridgeParams) -> Result<BiasState, BiasError> {
    solve_bias_with(applied, b, &SolverOptions::default(), None)
}

/// Solve with explicit options and optional initial junction phases.
pub fn solve_bias_with(
    applied: &AppliedBias,
    b: &BridgeParams,
    opts: &SolverOptions,
    init: Option<[f64; 4]>,
) -> Result<BiasState, BiasError> {
    if !applied.is_finite() || init.is_some_and(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(BiasError::NonFinite);
    }
    let i0 = b.squid.i0();
    let [tx, ty, tz] = applied.signal_currents().map(|v| v / i0);
    let mut phi_j = init.unwrap_or_else(|| initial_guess(applied, b));

    let residual = |phi_j: &[f64; 4]| -> Vector4<f64> {
        let currents = phi_j.map(|p| squid_current(p, &b.squid) / i0);
        let m = ModeCurrents::from_arm_currents(&currents);
        let last = match *applied {
            AppliedBias::CurrentDriven { i_c, .. } => m.i_c - i_c / i0,
            AppliedBias::FluxoidConstrained { i_z, j, phi_ext, .. } => {
                let total: f64 = phi_j.iter().map(|&p| arm_phase_for_junction_phase(p, b)).sum();
                total - loop_phase_target(j, phi_ext, i_z, b)
            }
        };
        Vector4::new(m.i_x - tx, m.i_y - ty, m.i_z - tz, last)
    };
    let converged = |r: &Vector4<f64>| {
        let last_tol = match applied {
            AppliedBias::CurrentDriven { .. } => opts.current_tol,
            AppliedBias::FluxoidConstrained { .. } => opts.phase_tol,
        };
        r[0].abs() <= opts.current_tol
            && r[1].abs() <= opts.current_tol
            && r[2].abs() <= opts.current_tol
            && r[3].abs() <= last_tol
    };
    let current_residual = |r: &Vector4<f64>| {
        let mut worst = r[0].abs().max(r[1].abs()).max(r[2].abs());
        if matches!(applied, AppliedBias::CurrentDriven { .. }) {
            worst = worst.max(r[3].abs());
        }
        worst * i0
    };

    let mut r = residual(&phi_j);
    for iteration in 0..=opts.max_iterations {
        if converged(&r) {
            return Ok(BiasState::from_junction_phases(phi_j, b, current_residual(&r), iteration));
        }
        if iteration == opts.max_iterations {
            break;
        }
        let jac = jacobian(applied, b, &phi_j);
        let Some(step) = jac.lu().solve(&r) else {
            break;
        };
        let merit = r.norm_squared();
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: [f64; 4] = std::array::from_fn(|l| phi_j[l] - lambda * step[l]);
            let rt = residual(&trial);
            if rt.norm_squared() < merit || converged(&rt) {
                phi_j = trial;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(BiasError::NoConvergence {
        iterations: opts.max_iterations,
        residual: r.amax() * i0,
    })
}

fn jacobian(applied: &AppliedBias, b: &BridgeParams, phi_j: &[f64; 4]) -> Matrix4<f64> {
    let i0 = b.squid.i0();
    let slopes = phi_j.map(|p| squid_current_slope(p, &b.squid) / i0);
    let mut jac = Matrix4::zeros();
    for k in 0..4 {
        for l in 0..4 {
            jac[(k, l)] = ARM_PATTERN[k][l] * slopes[l];
        }
    }
    if let AppliedBias::FluxoidConstrained { .. } = applied {
        let a = b.stray_phase_per_amp() * i0;
        for l in 0..4 {
            jac[(3, l)] = b.nf() + a * slopes[l];
        }
    }
    jac
}

/// Starting point that already lies on the requested fluxoid branch.
///
/// Current-driven: invert each arm's monotone current-phase relation.
/// Fluxoid-constrained: the loop phase is strictly increasing in `I_C` at
/// fixed signal/actuation currents, so bracket and solve that scalar
/// equation first.
fn initial_guess(applied: &AppliedBias, b: &BridgeParams) -> [f64; 4] {
    let per_arm = |i_x: f64, i_y: f64, i_z: f64, i_c: f64| {
        ModeCurrents { i_x, i_y, i_z, i_c }
            .to_arm_currents()
            .map(|i| squid_phase_for_current(i, &b.squid))
    };
    match *applied {
        AppliedBias::CurrentDriven { i_x, i_y, i_z, i_c } => per_arm(i_x, i_y, i_z, i_c),
        AppliedBias::FluxoidConstrained {
            i_x,
            i_y,
            i_z,
            j,
            phi_ext,
        } => {
            let target = loop_phase_target(j, phi_ext, i_z, b);
            let i0 = b.squid.i0();
            let loop_phase = |i_c: f64| -> f64 {
                per_arm(i_x, i_y, i_z, i_c)
                    .iter()
                    .map(|&p| arm_phase_for_junction_phase(p, b))
                    .sum()
            };
            // Linear part of the loop phase per unit I_C and its worst-case
            // nonlinear excursion bound the root.
            let lin = 4.0 * (b.nf() * b.squid.beta() / 2.0 + b.stray_phase_per_amp() * i0) / i0;
            let spread = [i_x, i_y, i_z].iter().map(|v| v.abs()).sum::<f64>() + 2.0 * i0;
            let centre = target / lin;
            let mut lo = centre - spread;
            let mut hi = centre + spread;
            while loop_phase(lo) > target {
                lo -= 2.0 * spread;
            }
            while loop_phase(hi) < target {
                hi += 2.0 * spread;
            }
            let i_c = solve_monotone(
                |i| loop_phase(i) - target,
                |i| {
                    let h = 1e-7 * i0;
                    (loop_phase(i + h) - loop_phase(i - h)) / (2.0 * h)
                },
                lo,
                hi,
                centre.clamp(lo, hi),
            );
            per_arm(i_x, i_y, i_z, i_c)
        }
    }
}

/// Mode phases at which the bridge carries exactly `currents`; convenience
/// wrapper around a current-driven solve.
pub fn phases_for_currents(currents: &ModeCurrents, b: &BridgeParams) -> Result<ModePhases, BiasError> {
    let applied = AppliedBias::CurrentDriven {
        i_x: currents.i_x,
        i_y: currents.i_y,
        i_z: currents.i_z,
        i_c: currents.i_c,
    };
    solve_bias(&applied, b).map(|s| s.phases)
}

/// `φ0r Σ_k I_k φ_k`, the work done by the sources at the given phases.
pub fn source_work(m: &ModePhases, currents: &ModeCurrents) -> f64 {
    PHI0_REDUCED
        * m.as_array()
            .iter()
            .zip(currents.as_array())
            .map(|(p, i)| p * i)
            .sum::<f64>()
}
