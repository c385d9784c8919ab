//! Run configuration: TOML file, `PCSWITCH_` environment overrides, schema
//! validation and a stable content hash.
//!
//! Environment variables mirror config keys, upper-cased, with `__` between
//! table levels: `PCSWITCH_BRIDGE__L_STR=1e-9` sets `bridge.l_str`. Values
//! are parsed as TOML literals and fall back to plain strings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{HistogramOptions, StepOptions};
use crate::microwave::{linspace, ContrastOptions, DriveRange, PortEnvironment};
use crate::model::{periods, BridgeParams, SquidParams};
use crate::trap::{DriftScenario, TrapProtocol};

pub const ENV_PREFIX: &str = "PCSWITCH_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("environment override {key}: {reason}")]
    Override { key: String, reason: String },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Inclusive linear axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(start: f64, stop: f64, count: usize) -> Self {
        Self { start, stop, count }
    }

    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.count)
    }

    fn validate(&self, field: &str) -> Result<(), ConfigError> {
        if self.count == 0 {
            return Err(invalid(&format!("{field}.count"), "must be at least 1"));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(invalid(field, "bounds must be finite"));
        }
        Ok(())
    }
}

/// Device parameters. Give either `beta` or `i0`; `beta` defaults to 1.2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Shunt inductance (H).
    pub l_sh: f64,
    pub beta: Option<f64>,
    /// Junction critical current (A).
    pub i0: Option<f64>,
    pub n: u32,
    /// Stray loop inductance (H).
    pub l_str: f64,
    /// PCS inductance (H).
    pub l_pcs: f64,
    /// `I_Z → φ_C` cross-coupling (rad/A).
    pub iz_to_phic: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            l_sh: 32.5e-12,
            beta: None,
            i0: None,
            n: 20,
            l_str: 650e-12,
            l_pcs: 15e-12,
            iz_to_phic: 0.0,
        }
    }
}

pub const DEFAULT_BETA: f64 = 1.2;

impl BridgeConfig {
    pub fn build(&self) -> Result<BridgeParams, ConfigError> {
        let squid = match (self.beta, self.i0) {
            (Some(_), Some(_)) => return Err(invalid("bridge", "set either beta or i0, not both")),
            (_, Some(i0)) => SquidParams::new(i0, self.l_sh),
            (beta, None) => SquidParams::from_beta(self.l_sh, beta.unwrap_or(DEFAULT_BETA)),
        }
        .map_err(|e| invalid("bridge", e.to_string()))?;
        BridgeParams::new(squid, self.n, self.l_str, self.l_pcs)
            .and_then(|b| b.with_cross_coupling(self.iz_to_phic))
            .map_err(|e| invalid("bridge", e.to_string()))
    }
}

/// Trapping protocol; the RNG seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub heater_threshold: f64,
    pub ramp_duration: f64,
    pub failure_probability: f64,
    pub failure_weights: [f64; 3],
    pub boundary_width: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let p = TrapProtocol::default();
        Self {
            heater_threshold: p.heater_threshold,
            ramp_duration: p.ramp_duration,
            failure_probability: p.failure_probability,
            failure_weights: p.failure_weights,
            boundary_width: p.boundary_width,
        }
    }
}

impl ProtocolConfig {
    pub fn build(&self, seed: u64) -> Result<TrapProtocol, ConfigError> {
        let p = TrapProtocol {
            heater_threshold: self.heater_threshold,
            ramp_duration: self.ramp_duration,
            failure_probability: self.failure_probability,
            failure_weights: self.failure_weights,
            boundary_width: self.boundary_width,
            rng_seed: seed,
        };
        p.validate().map_err(|r| invalid("protocol", r))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub z0: f64,
    pub insertion_loss_db: f64,
    /// Frequency grid (Hz).
    pub freq: AxisSpec,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            z0: 50.0,
            insertion_loss_db: 6.0,
            freq: AxisSpec::new(4.0e9, 6.0e9, 201),
        }
    }
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<PortEnvironment, ConfigError> {
        self.freq.validate("environment.freq")?;
        let env = PortEnvironment {
            z0: self.z0,
            freq_grid: self.freq.values(),
            insertion_loss_db: self.insertion_loss_db,
        };
        env.validate().map_err(|e| invalid("environment", e.to_string()))?;
        Ok(env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CMode {
    Trapped,
    Continuous,
    Flux,
}

/// Grid sweep axes. `i_z` overrides `i_z_periods`; the latter samples
/// `[0, i_z_periods · Ĩ_Z)` with `i_z_count` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub i_z: Option<AxisSpec>,
    pub i_z_periods: f64,
    pub i_z_count: usize,
    /// C axis: trap target (A), circulating current (A) or external flux (rad).
    pub c: AxisSpec,
    pub c_mode: CMode,
    /// Fluxoid branch for `c_mode = "flux"`.
    pub flux_j: i64,
    /// Probe frequency (Hz).
    pub frequency: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            i_z: None,
            i_z_periods: 1.0,
            i_z_count: 24,
            c: AxisSpec::new(20e-6, 50e-6, 10_000),
            c_mode: CMode::Trapped,
            flux_j: 30,
            frequency: 5.1e9,
        }
    }
}

impl SweepConfig {
    pub fn i_z_axis(&self, b: &BridgeParams) -> Vec<f64> {
        match self.i_z {
            Some(a) => a.values(),
            None => {
                let span = self.i_z_periods * periods(b).i_z;
                (0..self.i_z_count)
                    .map(|k| span * k as f64 / self.i_z_count as f64)
                    .collect()
            }
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        match self.i_z {
            Some(a) => a.validate("sweep.i_z")?,
            None => {
                if self.i_z_count == 0 {
                    return Err(invalid("sweep.i_z_count", "must be at least 1"));
                }
                if !(self.i_z_periods.is_finite() && self.i_z_periods >= 0.0) {
                    return Err(invalid("sweep.i_z_periods", "must be non-negative"));
                }
            }
        }
        self.c.validate("sweep.c")?;
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(invalid("sweep.frequency", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub steps: StepOptions,
    pub histogram: HistogramOptions,
    /// Fixed χ threshold; the histogram valley is used when unset.
    pub threshold: Option<f64>,
}

impl AnalysisConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.steps;
        if s.window == 0 {
            return Err(invalid("analysis.steps.window", "must be at least 1"));
        }
        if !(self.histogram.bin_width > 0.0) {
            return Err(invalid("analysis.histogram.bin_width", "must be positive"));
        }
        if let Some(t) = self.threshold {
            if !(-1.0..=1.0).contains(&t) {
                return Err(invalid("analysis.threshold", "must lie in [-1, 1]"));
            }
        }
        Ok(())
    }
}

/// Long-term monitoring: each epoch is measured as an `I_Z` × flux grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub scenario: DriftScenario,
    pub rows: usize,
    /// Flux columns over one period `φ̃_C`.
    pub cols: usize,
    pub frequency: f64,
    /// Additive complex Gaussian noise on each τ sample (RMS per quadrature).
    pub noise_rms: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            scenario: DriftScenario {
                injected_jumps: vec![(104, 1)],
                ..DriftScenario::default()
            },
            rows: 16,
            cols: 120,
            frequency: 5.1e9,
            noise_rms: 0.0,
        }
    }
}

/// On/off operating points on a trapped branch. Unset currents default to
/// `Ĩ_Z/4` (on) and zero (off); an unset branch is the one nearest the
/// optimal bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastConfig {
    pub j: Option<i64>,
    pub i_z_on: Option<f64>,
    pub i_z_off: f64,
    pub options: ContrastOptions,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        Self {
            j: None,
            i_z_on: None,
            i_z_off: 0.0,
            options: ContrastOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    pub j: Option<i64>,
    /// Actuation current; defaults to `Ĩ_Z/4`.
    pub i_z: Option<f64>,
    pub frequency: f64,
    pub drive: DriveRange,
    /// Freeze the arms at their small-signal inductance.
    pub linear: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            j: None,
            i_z: None,
            frequency: 5.1e9,
            drive: DriveRange::default(),
            linear: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationConfig {
    pub j: Option<i64>,
    pub frequency: f64,
    /// Modulation amplitude as a fraction of `Ĩ_Z`.
    pub i_z0_periods: f64,
    /// Modulation frequencies (Hz).
    pub f_m: Vec<f64>,
    pub samples: usize,
    pub max_order: usize,
    /// Harmonics in the static decomposition.
    pub n_max: usize,
    /// Static `τ(I_Z)` samples over one period.
    pub static_points: usize,
    /// Cable loss at 5 GHz (dB) used to set `ζ(f_m)`; `√f` scaling.
    pub cable_db_at_5ghz: f64,
    /// Carrier sweep amplitudes for `fit-zeta`, as fractions of `Ĩ_Z`.
    pub fit_i_z0_periods: AxisSpec,
    /// DC actuation of the `fit-zeta` operating point, as a fraction of
    /// `Ĩ_Z`. At balance the carrier is almost pure odd part and the fit is
    /// poorly conditioned.
    pub fit_dc_periods: f64,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            j: None,
            frequency: 5.1e9,
            i_z0_periods: 0.05,
            f_m: (1..=10).map(|k| 0.5e9 * k as f64).collect(),
            samples: 256,
            max_order: 8,
            n_max: 24,
            static_points: 256,
            cable_db_at_5ghz: 1.0,
            fit_i_z0_periods: AxisSpec::new(0.05, 0.6, 12),
            fit_dc_periods: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` takes precedence.
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub bridge: BridgeConfig,
    pub protocol: ProtocolConfig,
    pub environment: EnvironmentConfig,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
    pub monitor: MonitorConfig,
    pub contrast: ContrastConfig,
    pub compression: CompressionConfig,
    pub modulation: ModulationConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses TOML text, applies overrides `(key path, raw value)` and
    /// validates.
    pub fn from_toml_with(text: &str, overrides: &[(Vec<String>, String)]) -> Result<Self, ConfigError> {
        // A direct pass over the text keeps line/column spans in errors.
        let direct: RunConfig = toml::from_str(text).map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if overrides.is_empty() {
            direct.validate()?;
            return Ok(direct);
        }
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (path, raw) in overrides {
            set_path(&mut value, path, parse_literal(raw)).map_err(|reason| ConfigError::Override {
                key: path.join("."),
                reason,
            })?;
        }
        let cfg: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    /// Loads `path` (or defaults when `None`) with overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml_with(&text, &env_overrides(std::env::vars()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bridge.build()?;
        self.protocol.build(self.seed)?;
        self.environment.build()?;
        self.sweep.validate()?;
        self.analysis.validate()?;
        if self.monitor.rows == 0 || self.monitor.cols < 2 {
            return Err(invalid("monitor", "need rows ≥ 1 and cols ≥ 2"));
        }
        if !(self.monitor.noise_rms >= 0.0) {
            return Err(invalid("monitor.noise_rms", "must be non-negative"));
        }
        for (f, v) in [
            ("compression.frequency", self.compression.frequency),
            ("monitor.frequency", self.monitor.frequency),
            ("modulation.frequency", self.modulation.frequency),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(f, "must be positive"));
            }
        }
        let m = &self.modulation;
        if m.samples < 64 {
            return Err(invalid("modulation.samples", "at least 64 samples required"));
        }
        if m.n_max == 0 || m.static_points < 2 * m.n_max + 2 {
            return Err(invalid("modulation.static_points", "too few points for n_max harmonics"));
        }
        m.fit_i_z0_periods.validate("modulation.fit_i_z0_periods")?;
        if !m.fit_dc_periods.is_finite() {
            return Err(invalid("modulation.fit_dc_periods", "must be finite"));
        }
        if m.f_m.iter().any(|f| !(*f > 0.0)) {
            return Err(invalid("modulation.f_m", "frequencies must be positive"));
        }
        Ok(())
    }

    pub fn bridge_params(&self) -> BridgeParams {
        self.bridge.build().expect("validated config")
    }

    pub fn trap_protocol(&self) -> TrapProtocol {
        self.protocol.build(self.seed).expect("validated config")
    }

    pub fn port_environment(&self) -> PortEnvironment {
        self.environment.build().expect("validated config")
    }

    /// SHA-256 of the canonical JSON form, output location excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// `PCSWITCH_A__B=v` → `(["a", "b"], "v")`, sorted by key for determinism.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<(Vec<String>, String)> {
    let mut out: Vec<(Vec<String>, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            (!path.iter().any(String::is_empty)).then_some((path, v))
        })
        .collect();
    out.sort();
    out
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| format!("`{p}` is not a table"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}
