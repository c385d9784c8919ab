//! Three-wave mixing with a modulated actuation current.
//!
//! Static transmission `τ(I_Z)` is expanded in harmonics of the actuation
//! period `Ĩ_Z`. Driving `I_Z(t) = I_dc + I_Z0 sin(2π f_m t)` then produces a
//! carrier and sidebands given by Jacobi–Anger; the Bessel argument of
//! harmonic `n` is `2π n ζ I_Z0 / Ĩ_Z`, so `ζ = 1` is lossless actuation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bessel::{bessel_j, bessel_j_all};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulationError {
    #[error("estimated period {estimated:.6e} deviates from declared {declared:.6e} by more than 2%")]
    PeriodMismatch { estimated: f64, declared: f64 },
    #[error("sideband order {order} exceeds the Nyquist limit of {nyquist}")]
    AliasedSpectrum { order: usize, nyquist: usize },
    #[error("zeta is unidentifiable at f_m = {f_m:.6e} Hz: modulation stays in the linear regime")]
    IllConditioned { f_m: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// `τ(I) = c0/2 + Σ c_n cos(2πnI/Ĩ) + s_n sin(2πnI/Ĩ)`.
///
/// Only the cosine part contributes to the carrier at zero DC offset; the
/// sine part is kept so that odd transmission curves reconstruct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineSeries {
    pub c0: Complex64,
    pub c: Vec<Complex64>,
    pub s: Vec<Complex64>,
    pub period: f64,
    /// Set when the last retained harmonic exceeds 1e-4 of the largest.
    pub truncation_warning: bool,
}

pub const DEFAULT_N_MAX: usize = 12;

impl CosineSeries {
    pub fn n_max(&self) -> usize {
        self.c.len()
    }

    pub fn eval(&self, i_z: f64) -> Complex64 {
        let th = 2.0 * PI * i_z / self.period;
        let mut acc = self.c0 / 2.0;
        for n in 1..=self.n_max() {
            let (s, c) = (n as f64 * th).sin_cos();
            acc += self.c[n - 1] * c + self.s[n - 1] * s;
        }
        acc
    }

    /// Series of `τ(I + offset)` in the same basis.
    pub fn shifted(&self, offset: f64) -> Self {
        let th = 2.0 * PI * offset / self.period;
        let mut out = self.clone();
        for n in 1..=self.n_max() {
            let (sn, cs) = (n as f64 * th).sin_cos();
            out.c[n - 1] = self.c[n - 1] * cs + self.s[n - 1] * sn;
            out.s[n - 1] = self.s[n - 1] * cs - self.c[n - 1] * sn;
        }
        out
    }

    /// Bessel argument of harmonic `n`.
    pub fn bessel_argument(&self, n: usize, i_z0: f64, zeta: f64) -> f64 {
        2.0 * PI * n as f64 * zeta * i_z0 / self.period
    }
}

fn basis_row(i_z: f64, period: f64, n_max: usize) -> Vec<f64> {
    let th = 2.0 * PI * i_z / period;
    let mut row = Vec::with_capacity(2 * n_max + 1);
    row.push(0.5);
    for n in 1..=n_max {
        row.push((n as f64 * th).cos());
    }
    for n in 1..=n_max {
        row.push((n as f64 * th).sin());
    }
    row
}

/// Least-squares fit of the harmonic basis; returns coefficients and the RMS
/// residual.
fn fit_series(i_z: &[f64], tau: &[Complex64], period: f64, n_max: usize) -> (Vec<Complex64>, f64) {
    let cols = 2 * n_max + 1;
    let a = DMatrix::from_fn(i_z.len(), cols, |r, c| basis_row(i_z[r], period, n_max)[c]);
    let svd = a.clone().svd(true, true);
    let solve = |rhs: DVector<f64>| svd.solve(&rhs, 1e-12).expect("svd with vectors");
    let x_re = solve(DVector::from_iterator(tau.len(), tau.iter().map(|t| t.re)));
    let x_im = solve(DVector::from_iterator(tau.len(), tau.iter().map(|t| t.im)));
    let r_re = &a * &x_re - DVector::from_iterator(tau.len(), tau.iter().map(|t| t.re));
    let r_im = &a * &x_im - DVector::from_iterator(tau.len(), tau.iter().map(|t| t.im));
    let rms = ((r_re.norm_squared() + r_im.norm_squared()) / tau.len() as f64).sqrt();
    let coeffs = x_re.iter().zip(x_im.iter()).map(|(r, i)| Complex64::new(*r, *i)).collect();
    (coeffs, rms)
}

/// Period of uniformly sampled data. Uses the normalised autocorrelation when
/// at least 1.5 periods are available, otherwise scans the fit residual over
/// candidate periods.
pub fn estimate_period(i_z: &[f64], tau: &[Complex64], declared: f64, n_max: usize) -> f64 {
    let span = i_z[i_z.len() - 1] - i_z[0];
    let dx = span / (i_z.len() - 1) as f64;
    let mean = tau.iter().sum::<Complex64>() / tau.len() as f64;
    let spread = tau.iter().map(|t| (t - mean).norm()).fold(0.0, f64::max);
    if spread <= 1e-12 * mean.norm().max(f64::MIN_POSITIVE) {
        // A flat curve is consistent with any period.
        return declared;
    }
    if span >= 1.5 * declared {
        let x: Vec<Complex64> = tau.iter().map(|t| t - mean).collect();
        let corr = |lag: usize| {
            let (a, b) = (&x[..x.len() - lag], &x[lag..]);
            let num: f64 = a.iter().zip(b).map(|(p, q)| (p * q.conj()).re).sum();
            let ea: f64 = a.iter().map(|p| p.norm_sqr()).sum();
            let eb: f64 = b.iter().map(|p| p.norm_sqr()).sum();
            num / (ea * eb).sqrt().max(f64::MIN_POSITIVE)
        };
        let lo = ((0.75 * declared / dx).floor() as usize).max(1);
        let hi = ((1.25 * declared / dx).ceil() as usize).min(x.len() - 2);
        let values: Vec<f64> = (lo..=hi).map(corr).collect();
        let k = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let mut lag = (lo + k) as f64;
        if k > 0 && k + 1 < values.len() {
            let (ym, y0, yp) = (values[k - 1], values[k], values[k + 1]);
            let den = ym - 2.0 * y0 + yp;
            if den != 0.0 {
                lag += 0.5 * (ym - yp) / den;
            }
        }
        return lag * dx;
    }
    let at_declared = fit_series(i_z, tau, declared, n_max).1;
    let (best, best_rms) = (-40..=40)
        .map(|k| declared * (1.0 + 0.0025 * k as f64))
        .map(|p| (p, fit_series(i_z, tau, p, n_max).1))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((declared, at_declared));
    // Ties within roundoff go to the declared period.
    if at_declared <= best_rms + 1e-9 * spread {
        declared
    } else {
        best
    }
}

/// Harmonic decomposition of `τ` sampled at `i_z`, covering at least one
/// declared period.
pub fn cosine_decompose(
    i_z: &[f64],
    tau: &[Complex64],
    period: f64,
    n_max: usize,
) -> Result<CosineSeries, ModulationError> {
    if i_z.len() != tau.len() {
        return Err(ModulationError::InvalidInput("sample and value counts differ".into()));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(ModulationError::InvalidInput(format!("period must be positive, got {period}")));
    }
    if i_z.len() < 2 * n_max + 2 {
        return Err(ModulationError::InvalidInput(format!(
            "{} samples cannot resolve {n_max} harmonics",
            i_z.len()
        )));
    }
    if i_z.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ModulationError::InvalidInput("samples must be strictly increasing".into()));
    }
    let span = i_z[i_z.len() - 1] - i_z[0];
    if span < period * (1.0 - 1.5 / i_z.len() as f64) {
        return Err(ModulationError::InvalidInput("samples cover less than one period".into()));
    }
    let estimated = estimate_period(i_z, tau, period, n_max);
    if ((estimated - period) / period).abs() > 0.02 {
        return Err(ModulationError::PeriodMismatch {
            estimated,
            declared: period,
        });
    }
    let (coeffs, _) = fit_series(i_z, tau, period, n_max);
    let c = coeffs[1..=n_max].to_vec();
    let s = coeffs[n_max + 1..].to_vec();
    let largest = c.iter().chain(&s).map(|v| v.norm()).fold(0.0, f64::max);
    let last = c[n_max - 1].norm().max(s[n_max - 1].norm());
    Ok(CosineSeries {
        c0: coeffs[0],
        c,
        s,
        period,
        truncation_warning: last > 1e-4 * largest,
    })
}

/// Carrier transmission under sinusoidal actuation of amplitude `i_z0`
/// about zero, `c0/2 + Σ c_n J_0(2π n ζ I_Z0 / Ĩ_Z)`.
pub fn carrier_response(series: &CosineSeries, i_z0: f64, zeta: f64) -> Complex64 {
    sideband_amplitude(series, i_z0, zeta, 0)
}

/// Amplitude of the component at `f_carrier + k f_m` (Jacobi–Anger).
pub fn sideband_amplitude(series: &CosineSeries, i_z0: f64, zeta: f64, k: i32) -> Complex64 {
    let mut acc = if k == 0 { series.c0 / 2.0 } else { Complex64::default() };
    let even = k % 2 == 0;
    for n in 1..=series.n_max() {
        let j = bessel_j(k, series.bessel_argument(n, i_z0, zeta));
        if even {
            acc += series.c[n - 1] * j;
        } else {
            acc += series.s[n - 1] * Complex64::new(0.0, -j);
        }
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSpectrum {
    pub f_m: f64,
    pub f_carrier: f64,
    pub i_z0: f64,
    pub carrier: Complex64,
    /// `(k, amplitude)` for every non-zero bin, `k` from `-(M-1)/2` up to
    /// `M/2`.
    pub sidebands: Vec<(i64, Complex64)>,
}

impl ModulationSpectrum {
    pub fn amplitude(&self, k: i64) -> Complex64 {
        if k == 0 {
            return self.carrier;
        }
        self.sidebands
            .iter()
            .find(|(o, _)| *o == k)
            .map(|(_, a)| *a)
            .unwrap_or_default()
    }

    pub fn total_power(&self) -> f64 {
        self.carrier.norm_sqr() + self.sidebands.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>()
    }

    /// Sideband level relative to an incident carrier of unit amplitude (dB).
    pub fn modulation_gain_db(&self, k: i64) -> f64 {
        20.0 * self.amplitude(k).norm().log10()
    }
}

/// Spectrum of `τ(I_Z(t))` with `I_Z(t) = i_z0 sin(2π f_m t)`, from a DFT of
/// `samples` points over one modulation period. `max_order` is the highest
/// sideband the caller intends to read.
pub fn sideband_spectrum_timedomain<F>(
    static_tau: F,
    i_z0: f64,
    f_m: f64,
    f_carrier: f64,
    samples: usize,
    max_order: usize,
) -> Result<ModulationSpectrum, ModulationError>
where
    F: Fn(f64) -> Complex64,
{
    if samples < 64 {
        return Err(ModulationError::InvalidInput("at least 64 samples per period required".into()));
    }
    let nyquist = (samples - 1) / 2;
    if max_order > nyquist {
        return Err(ModulationError::AliasedSpectrum {
            order: max_order,
            nyquist,
        });
    }
    let mut buf: Vec<Complex64> = (0..samples)
        .map(|m| static_tau(i_z0 * (2.0 * PI * m as f64 / samples as f64).sin()))
        .collect();
    FftPlanner::new().plan_fft_forward(samples).process(&mut buf);
    let scale = 1.0 / samples as f64;
    let mut sidebands = Vec::with_capacity(samples - 1);
    for (bin, v) in buf.iter().enumerate().skip(1) {
        let k = if bin <= samples / 2 { bin as i64 } else { bin as i64 - samples as i64 };
        sidebands.push((k, v * scale));
    }
    sidebands.sort_by_key(|(k, _)| *k);
    Ok(ModulationSpectrum {
        f_m,
        f_carrier,
        i_z0,
        carrier: buf[0] * scale,
        sidebands,
    })
}

/// Carrier measurements at one modulation frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierSweep {
    pub f_m: f64,
    pub i_z0: Vec<f64>,
    pub carrier: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaFit {
    pub f_m_grid: Vec<f64>,
    pub zeta: Vec<f64>,
    pub fit_residual: Vec<f64>,
}

/// Largest ζ considered by the fit.
const ZETA_MAX: f64 = 4.0;

fn carrier_cost(series: &CosineSeries, sweep: &CarrierSweep, zeta: f64) -> f64 {
    sweep
        .i_z0
        .iter()
        .zip(&sweep.carrier)
        .map(|(&i, &m)| (carrier_response(series, i, zeta) - m).norm_sqr())
        .sum()
}

/// Per-frequency least-squares estimate of ζ.
pub fn fit_zeta(sweeps: &[CarrierSweep], series: &CosineSeries) -> Result<ZetaFit, ModulationError> {
    let mut out = ZetaFit {
        f_m_grid: Vec::new(),
        zeta: Vec::new(),
        fit_residual: Vec::new(),
    };
    for sweep in sweeps {
        if sweep.i_z0.len() != sweep.carrier.len() || sweep.i_z0.len() < 8 {
            return Err(ModulationError::InvalidInput(format!(
                "need at least 8 matched points at f_m = {}",
                sweep.f_m
            )));
        }
        let cost = |z: f64| carrier_cost(series, sweep, z);
        let grid = 400;
        let (mut best, mut best_cost) = (0.0, f64::INFINITY);
        for k in 1..=grid {
            let z = ZETA_MAX * k as f64 / grid as f64;
            let c = cost(z);
            if c < best_cost {
                best = z;
                best_cost = c;
            }
        }
        let step = ZETA_MAX / grid as f64;
        let (mut a, mut b) = ((best - step).max(1e-12), best + step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
        let (mut f1, mut f2) = (cost(x1), cost(x2));
        for _ in 0..100 {
            if f1 < f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = cost(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = cost(x2);
            }
        }
        let zeta = 0.5 * (a + b);
        let i_max = sweep.i_z0.iter().cloned().fold(0.0, f64::max);
        if series.bessel_argument(1, i_max, zeta) < 1.0 {
            return Err(ModulationError::IllConditioned { f_m: sweep.f_m });
        }
        out.f_m_grid.push(sweep.f_m);
        out.zeta.push(zeta);
        out.fit_residual.push((cost(zeta) / sweep.i_z0.len() as f64).sqrt());
    }
    Ok(out)
}

/// Actuation efficiency of a cable with `db_at_5ghz` loss at 5 GHz scaling
/// as `√f`.
pub fn cable_zeta(f: f64, db_at_5ghz: f64) -> f64 {
    10f64.powf(-db_at_5ghz * (f / 5e9).sqrt() / 20.0)
}

/// All Bessel orders needed for one argument, exposed for callers that
/// evaluate many sidebands at once.
pub fn bessel_table(max_order: usize, x: f64) -> Vec<f64> {
    bessel_j_all(max_order, x.abs())
}
