//! Command orchestration shared by the CLI, the FFI layer and the
//! acceptance suite. Every function is deterministic in `(config, seed)`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze_steps, monitor, AnalysisError, DriftRecord, LinecutSet, StepReport};
use crate::bias::{solve_bias, AppliedBias, BiasError, BiasState};
use crate::config::{AnalysisConfig, CMode, ConfigError, RunConfig};
use crate::io::IoError;
use crate::microwave::{
    compression_point, contrast_sweep, s21, sweep_grid, ArmNonlinearity, CAxis, CompressionReport, ContrastReport,
    MicrowaveError, TransmissionGrid,
};
use crate::model::{periods, BridgeParams};
use crate::modulation::{
    cable_zeta, cosine_decompose, fit_zeta, sideband_amplitude, sideband_spectrum_timedomain,
    CarrierSweep, CosineSeries, ModulationError, ZetaFit,
};
use crate::trap::{drift_monitor, loop_diff_inductance, optimal_bias, DriftSeries, StepInductance};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bias solver: {0}")]
    Solver(#[from] BiasError),
    #[error("microwave: {0}")]
    Microwave(#[from] MicrowaveError),
    #[error("modulation: {0}")]
    Modulation(#[from] ModulationError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl PipelineError {
    /// Process exit code: 2 config, 3 solver, 4 analysis, 6 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Solver(_) => 3,
            PipelineError::Microwave(_) | PipelineError::Modulation(_) | PipelineError::Analysis(_) => 4,
            PipelineError::Io(_) => 6,
        }
    }

    /// Extra hint for errors with a known remedy.
    pub fn guidance(&self) -> Option<&'static str> {
        match self {
            PipelineError::Analysis(AnalysisError::UnimodalHistogram) => Some(
                "the χ histogram has no separate intra-step peak; sample the C axis more densely \
                 or set analysis.threshold explicitly",
            ),
            PipelineError::Microwave(MicrowaveError::NoCompressionInRange { .. }) => {
                Some("widen compression.drive or check that the arms are not linear")
            }
            _ => None,
        }
    }
}

/// Transmission grid for the configured sweep.
pub fn simulate_grid(cfg: &RunConfig) -> Result<TransmissionGrid, PipelineError> {
    let b = cfg.bridge_params();
    let s = &cfg.sweep;
    let mode = match s.c_mode {
        CMode::Trapped => CAxis::Trapped {
            protocol: cfg.trap_protocol(),
        },
        CMode::Continuous => CAxis::Continuous,
        CMode::Flux => CAxis::Flux { j: s.flux_j },
    };
    Ok(sweep_grid(
        &s.i_z_axis(&b),
        &s.c.values(),
        &mode,
        s.frequency,
        &b,
        &cfg.port_environment(),
    )?)
}

/// Differential inductance read from one fully bounded step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InductancePoint {
    /// Step midpoint on the C axis (A).
    pub c_center: f64,
    /// Step width `I_stp` (A).
    pub i_stp: f64,
    pub from_step: StepInductance,
    /// Analytic loop differential inductance at the step centre (H).
    pub analytic: Option<f64>,
}

/// Comparison against the trapped fluxoid indices stored in the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCheck {
    /// Offset between step ordinal and fluxoid index.
    pub j_offset: i64,
    /// Fraction of linecuts whose flux label equals the stored index.
    pub flux_agreement: f64,
    /// Fraction of linecuts on their nearest branch (stored index equals the
    /// index implied by the segment they sit in).
    pub intended_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAnalysis {
    pub report: StepReport,
    pub inductance: Vec<InductancePoint>,
    pub truth: Option<TruthCheck>,
}

/// Histogram threshold, step grouping and the `φ0/I_stp` series. With a
/// bridge, each step is also compared with the analytic inductance.
pub fn analyze_grid(
    grid: &TransmissionGrid,
    opts: &AnalysisConfig,
    bridge: Option<&BridgeParams>,
) -> Result<StepAnalysis, PipelineError> {
    let set = LinecutSet::from_grid(grid);
    let report = analyze_steps(&set, &opts.histogram, &opts.steps, opts.threshold)?;
    let inductance = report
        .step_widths
        .iter()
        .zip(&report.step_centers)
        .map(|(&w, &c)| {
            let analytic = match bridge {
                Some(b) if w > 0.0 => Some(loop_diff_inductance(c, 0.0, b)).transpose(),
                _ => Ok(None),
            }?;
            Ok(InductancePoint {
                c_center: c,
                i_stp: w,
                from_step: StepInductance::from_step(w.abs()),
                analytic,
            })
        })
        .collect::<Result<Vec<_>, BiasError>>()?;
    let truth = grid.j.as_ref().and_then(|j| truth_check(&report, j));
    Ok(StepAnalysis {
        report,
        inductance,
        truth,
    })
}

fn truth_check(report: &StepReport, j: &[i64]) -> Option<TruthCheck> {
    let first = report.groups.first()?;
    let j_offset = j[first.medoid];
    let n = j.len() as f64;
    let flux = (0..j.len())
        .filter(|&m| report.flux_labels[m].map(|l| l as i64 + j_offset) == Some(j[m]))
        .count();
    let segment = |m: usize| report.boundaries.iter().filter(|&&b| m as f64 > b).count() as i64;
    let intended = (0..j.len()).filter(|&m| segment(m) + j_offset == j[m]).count();
    Some(TruthCheck {
        j_offset,
        flux_agreement: flux as f64 / n,
        intended_fraction: intended as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRun {
    pub series: DriftSeries,
    pub record: DriftRecord,
}

/// `I_Z` × flux grid seen on branch `j` with a flux offset `phi_offset`.
/// The stored flux axis is the applied one, `[0, φ̃_C)`.
pub fn epoch_grid(
    j: i64,
    phi_offset: f64,
    rows: usize,
    cols: usize,
    f: f64,
    b: &BridgeParams,
    cfg: &RunConfig,
) -> Result<TransmissionGrid, PipelineError> {
    let p = periods(b);
    let i_z: Vec<f64> = (0..rows).map(|k| p.i_z * k as f64 / rows as f64).collect();
    let applied: Vec<f64> = (0..cols).map(|k| p.phi_c * k as f64 / cols as f64).collect();
    let shifted: Vec<f64> = applied.iter().map(|a| a + phi_offset).collect();
    let mut g = sweep_grid(&i_z, &shifted, &CAxis::Flux { j }, f, b, &cfg.port_environment())?;
    g.c_axis = applied;
    Ok(g)
}

/// Simulated long-term persistence run and its shift analysis.
pub fn run_monitor(cfg: &RunConfig) -> Result<MonitorRun, PipelineError> {
    let b = cfg.bridge_params();
    let m = &cfg.monitor;
    let series = drift_monitor(&m.scenario, cfg.seed, &b)?;
    let mut grids = Vec::with_capacity(series.states.len());
    let mut cache: Vec<(i64, f64, TransmissionGrid)> = Vec::new();
    for (epoch, st) in series.states.iter().enumerate() {
        let clean = match cache.iter().find(|(j, phi, _)| *j == st.j && phi.to_bits() == st.phi_ext.to_bits()) {
            Some((_, _, g)) => g.clone(),
            None => {
                let g = epoch_grid(st.j, st.phi_ext, m.rows, m.cols, m.frequency, &b, cfg)?;
                cache.push((st.j, st.phi_ext, g.clone()));
                g
            }
        };
        grids.push(add_noise(clean, m.noise_rms, cfg.seed, epoch as u64));
    }
    let record = monitor(&grids, m.scenario.cadence_hours)?;
    Ok(MonitorRun { series, record })
}

fn add_noise(mut g: TransmissionGrid, rms: f64, seed: u64, stream: u64) -> TransmissionGrid {
    if rms > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6e69_746f_72);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, rms).expect("finite rms");
        for t in g.tau.iter_mut() {
            *t += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    g
}

fn operating_j(j: Option<i64>, b: &BridgeParams) -> i64 {
    j.unwrap_or_else(|| optimal_bias(b).j_nearest)
}

fn branch(j: i64, i_z: f64, b: &BridgeParams) -> Result<BiasState, BiasError> {
    solve_bias(&AppliedBias::fluxoid(j, 0.0, i_z), b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRun {
    pub j: i64,
    pub i_z_on: f64,
    pub i_z_off: f64,
    pub contrast: ContrastReport,
}

/// On/off contrast across the environment's frequency grid.
pub fn sweep_freq(cfg: &RunConfig) -> Result<ContrastRun, PipelineError> {
    let b = cfg.bridge_params();
    let c = &cfg.contrast;
    let j = operating_j(c.j, &b);
    let i_z_on = c.i_z_on.unwrap_or(periods(&b).i_z / 4.0);
    let on = branch(j, i_z_on, &b)?;
    let off = branch(j, c.i_z_off, &b)?;
    let contrast = contrast_sweep(&on, &off, &cfg.port_environment(), &c.options)?;
    Ok(ContrastRun {
        j,
        i_z_on,
        i_z_off: c.i_z_off,
        contrast,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRun {
    pub j: i64,
    pub i_z: f64,
    pub linear: bool,
    /// `|s21|` at the same bias, for the small-signal comparison.
    pub s21_abs: f64,
    pub report: CompressionReport,
}

/// 1 dB compression point at the configured operating point.
pub fn compression(cfg: &RunConfig) -> Result<CompressionRun, PipelineError> {
    let b = cfg.bridge_params();
    let c = &cfg.compression;
    let env = cfg.port_environment();
    let j = operating_j(c.j, &b);
    let i_z = c.i_z.unwrap_or(periods(&b).i_z / 4.0);
    let bias = branch(j, i_z, &b)?;
    let nl = if c.linear {
        ArmNonlinearity::Linear
    } else {
        ArmNonlinearity::Josephson
    };
    let report = compression_point(&bias, &b, c.frequency, &env, &c.drive, nl)?;
    Ok(CompressionRun {
        j,
        i_z,
        linear: c.linear,
        s21_abs: s21(&bias, c.frequency, &env).norm(),
        report,
    })
}

/// Static transmission `τ(I_Z)` on one branch, decomposed over one period.
pub fn static_series(cfg: &RunConfig) -> Result<(i64, CosineSeries), PipelineError> {
    let b = cfg.bridge_params();
    let m = &cfg.modulation;
    let env = cfg.port_environment();
    let j = operating_j(m.j, &b);
    let p = periods(&b).i_z;
    let i_z: Vec<f64> = (0..m.static_points).map(|k| p * k as f64 / m.static_points as f64).collect();
    let tau = i_z
        .par_iter()
        .map(|&i| branch(j, i, &b).map(|s| s21(&s, m.frequency, &env)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((j, cosine_decompose(&i_z, &tau, p, m.n_max)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandLine {
    pub order: i64,
    pub timedomain: Complex64,
    pub bessel: Complex64,
    pub gain_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationLine {
    pub f_m: f64,
    pub zeta: f64,
    /// Drive amplitude at the source (A).
    pub i_z0: f64,
    pub carrier: Complex64,
    /// Carrier level relative to a unit incident carrier (dB).
    pub feedthrough_db: f64,
    pub sidebands: Vec<SidebandLine>,
    /// Largest time-domain vs Bessel discrepancy over the listed orders.
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationRun {
    pub j: i64,
    pub period: f64,
    pub lines: Vec<ModulationLine>,
}

/// Sideband spectra of sinusoidal actuation through the configured cable.
/// The time-domain spectrum evaluates the full bias solve at every sample.
pub fn modulate(cfg: &RunConfig) -> Result<ModulationRun, PipelineError> {
    let b = cfg.bridge_params();
    let m = &cfg.modulation;
    let env = cfg.port_environment();
    let (j, series) = static_series(cfg)?;
    let i_z0 = m.i_z0_periods * series.period;
    let exact = |i: f64| {
        branch(j, i, &b)
            .map(|s| s21(&s, m.frequency, &env))
            .unwrap_or(Complex64::new(f64::NAN, f64::NAN))
    };
    let mut lines = Vec::with_capacity(m.f_m.len());
    for &f_m in &m.f_m {
        let zeta = cable_zeta(f_m, m.cable_db_at_5ghz);
        let spectrum = sideband_spectrum_timedomain(&exact, zeta * i_z0, f_m, m.frequency, m.samples, m.max_order)?;
        if !spectrum.carrier.is_finite() {
            return Err(BiasError::NonFinite.into());
        }
        let sidebands: Vec<SidebandLine> = (-(m.max_order as i64)..=m.max_order as i64)
            .map(|k| SidebandLine {
                order: k,
                timedomain: spectrum.amplitude(k),
                bessel: sideband_amplitude(&series, i_z0, zeta, k as i32),
                gain_db: spectrum.modulation_gain_db(k),
            })
            .collect();
        let max_deviation = sidebands
            .iter()
            .map(|s| (s.timedomain - s.bessel).norm())
            .fold(0.0, f64::max);
        lines.push(ModulationLine {
            f_m,
            zeta,
            i_z0,
            carrier: spectrum.carrier,
            feedthrough_db: 20.0 * spectrum.carrier.norm().log10(),
            sidebands,
            max_deviation,
        });
    }
    Ok(ModulationRun {
        j,
        period: series.period,
        lines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaRun {
    pub fit: ZetaFit,
    /// Injected `ζ(f_m)` when the sweeps were synthesised.
    pub injected: Option<Vec<f64>>,
    /// Largest relative fit error against `injected`.
    pub max_relative_error: Option<f64>,
}

/// Carrier sweeps synthesised from time-domain spectra through the cable
/// profile.
pub fn synthetic_carrier_sweeps(cfg: &RunConfig, series: &CosineSeries) -> Result<Vec<CarrierSweep>, PipelineError> {
    let m = &cfg.modulation;
    let amps: Vec<f64> = m.fit_i_z0_periods.values().iter().map(|a| a * series.period).collect();
    m.f_m
        .iter()
        .map(|&f_m| {
            let zeta = cable_zeta(f_m, m.cable_db_at_5ghz);
            let carrier = amps
                .iter()
                .map(|&a| {
                    sideband_spectrum_timedomain(|i| series.eval(i), zeta * a, f_m, m.frequency, m.samples, 0)
                        .map(|s| s.carrier)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(CarrierSweep {
                f_m,
                i_z0: amps.clone(),
                carrier,
            })
        })
        .collect()
}

/// Fits `ζ(f_m)` to measured sweeps, or to synthetic ones when none are
/// given, about the DC point `fit_dc_periods · Ĩ_Z`.
pub fn run_fit_zeta(cfg: &RunConfig, measured: Option<Vec<CarrierSweep>>) -> Result<ZetaRun, PipelineError> {
    let (_, series) = static_series(cfg)?;
    let series = series.shifted(cfg.modulation.fit_dc_periods * series.period);
    let synthetic = measured.is_none();
    let sweeps = match measured {
        Some(s) => s,
        None => synthetic_carrier_sweeps(cfg, &series)?,
    };
    let fit = fit_zeta(&sweeps, &series)?;
    let injected = synthetic.then(|| {
        fit.f_m_grid
            .iter()
            .map(|&f| cable_zeta(f, cfg.modulation.cable_db_at_5ghz))
            .collect::<Vec<_>>()
    });
    let max_relative_error = injected.as_ref().map(|inj| {
        inj.iter()
            .zip(&fit.zeta)
            .map(|(t, z)| ((z - t) / t).abs())
            .fold(0.0, f64::max)
    });
    Ok(ZetaRun {
        fit,
        injected,
        max_relative_error,
    })
}
