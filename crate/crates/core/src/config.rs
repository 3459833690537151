//! JSON experiment configuration: schema, cross-field validation, and
//! construction of the physics objects the commands drive.
//!
//! Every physical quantity carries its unit in the field name (`_rad_s`,
//! `_m`, `_s`, `_hz`); unknown keys are rejected everywhere. The collapse
//! parameters `kappa_m_s` and `d_tau_m` accept either a JSON number or the
//! string `"infinity"` (JSON has no literal for it), and serialize back the
//! same way. All randomness flows from the single `run.seed`.

use crate::biphoton::{BiphotonError, EnergyEntangledSource, PolarizationEntangledSource};
use crate::geometry::{GeometryError, Layout};
use crate::models::{ModelError, PhysicsModel, Weighting};
use crate::montecarlo::{DelayDwell, EmissionMode, RunConfig, SimScheme};
use crate::spectra::{FilterProfile, FrequencyGrid, SpectraError};
use serde::de::{Error as DeError, Unexpected, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("field '{field}': {detail}")]
    Invalid { field: String, detail: String },
}

fn invalid(field: impl Into<String>, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        detail: detail.into(),
    }
}

/// A non-negative physical quantity that may be infinite: a JSON number, or
/// the string `"infinity"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedReal(pub f64);

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            serializer.serialize_str("infinity")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtendedReal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ExtendedRealVisitor;
        impl Visitor<'_> for ExtendedRealVisitor {
            type Value = ExtendedReal;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or the string \"infinity\"")
            }
            fn visit_f64<E: DeError>(self, v: f64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal(v))
            }
            fn visit_u64<E: DeError>(self, v: u64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal(v as f64))
            }
            fn visit_i64<E: DeError>(self, v: i64) -> Result<ExtendedReal, E> {
                Ok(ExtendedReal(v as f64))
            }
            fn visit_str<E: DeError>(self, v: &str) -> Result<ExtendedReal, E> {
                if v == "infinity" {
                    Ok(ExtendedReal(f64::INFINITY))
                } else {
                    Err(E::invalid_value(Unexpected::Str(v), &self))
                }
            }
        }
        deserializer.deserialize_any(ExtendedRealVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    EnergyEntangled,
    PolarizationEntangled,
}

/// Frequency-grid sizing for the spectral machinery. The grid is centered on
/// half the pump frequency (the symmetry the conditional spectra rely on),
/// spans the signal/idler detuning plus `half_span_sigmas` marginal widths on
/// each side, and resolves the narrowest spectral feature in play (marginal
/// or filter) with `points_per_sigma` points per width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_half_span_sigmas")]
    pub half_span_sigmas: f64,
    #[serde(default = "default_points_per_sigma")]
    pub points_per_sigma: f64,
}

fn default_half_span_sigmas() -> f64 {
    8.0
}

fn default_points_per_sigma() -> f64 {
    16.0
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            half_span_sigmas: default_half_span_sigmas(),
            points_per_sigma: default_points_per_sigma(),
        }
    }
}

/// Pair source. `kind` selects which of the remaining fields apply:
/// the energy-entangled source takes the pump/phase-matching parameters (and
/// an optional grid override), the polarization-entangled source takes the
/// H/V coherence and its center frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub kind: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_center_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump_bandwidth_sigma_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_center_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_matching_sigma_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coherence_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_omega_rad_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    GaussianBandpass,
    RectangularBandpass,
    Uniform,
}

/// Alice's spectral filter. Omitting the whole section means a transparent
/// filter (transmission 1 everywhere).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_width_rad_s: Option<f64>,
    /// Peak (gaussian), pass-band (rectangular), or flat (uniform)
    /// transmission; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_transmission: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_s_f_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_s_ad_m: Option<f64>,
    pub path_s_bd_m: f64,
    pub dist_f_bd_m: f64,
    pub light_speed_m_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    UnitaryQm,
    FiniteSpeedCollapse,
}

/// Physics backend. The collapse parameters are required exactly when
/// `backend` is `finite_speed_collapse` and rejected otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_m_s: Option<ExtendedReal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_tau_m: Option<ExtendedReal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<Weighting>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_collapse_gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    Cw,
    Pulsed,
}

/// Emission mode. `cw` takes `pair_rate_hz`; `pulsed` takes
/// `pairs_per_pulse_mean` and `pulse_rate_hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionConfig {
    pub mode: EmissionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs_per_pulse_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_rate_hz: Option<f64>,
}

/// Monte Carlo run parameters; mirrors the simulation engine's contract with
/// the emission mode broken out into its own object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub emission: EmissionConfig,
    pub duration_s: f64,
    pub detector_efficiency_a: f64,
    pub detector_efficiency_b: f64,
    #[serde(default)]
    pub dark_rate_a_hz: f64,
    #[serde(default)]
    pub dark_rate_b_hz: f64,
    #[serde(default)]
    pub timing_jitter_sigma_s: f64,
    #[serde(default)]
    pub coincidence_window_s: f64,
    #[serde(default)]
    pub herald_gate_width_s: f64,
    pub delay_schedule: Vec<DelayDwell>,
    pub seed: u64,
}

fn default_alpha() -> f64 {
    0.01
}

fn default_power() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    /// Grid of source-to-filter path lengths for the threshold scan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_path_s_f_m: Option<Vec<f64>>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            power: default_power(),
            scan_path_s_f_m: None,
        }
    }
}

/// Top-level experiment description. `delays_s` feeds the analytic
/// predictors; `run` is required for simulation; `analysis` carries the
/// statistics options and the scan grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: SimScheme,
    pub source: SourceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
    pub layout: LayoutConfig,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
}

/// A built pair source of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltSource {
    Energy(EnergyEntangledSource),
    Polarization(PolarizationEntangledSource),
}

/// Parse a JSON config. Schema violations (unknown or missing fields, bad
/// types) surface with the line/column from the parser; cross-field
/// consistency is checked by [`ExperimentConfig::validate`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// SHA-256 of the canonical (serialized) form of the config, so that a
/// re-run from the echoed config hashes identically to the original run.
pub fn config_sha256(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serialization cannot fail");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
    }
    hex
}

fn require<T: Clone>(opt: &Option<T>, field: &str, when: &str) -> Result<T, ConfigError> {
    opt.clone()
        .ok_or_else(|| invalid(field, format!("required when {when}")))
}

fn forbid<T>(opt: &Option<T>, field: &str, when: &str) -> Result<(), ConfigError> {
    if opt.is_some() {
        Err(invalid(field, format!("not a parameter of {when}")))
    } else {
        Ok(())
    }
}

fn source_field(name: &str) -> String {
    match name {
        "pump_center" => "source.pump_center_rad_s".into(),
        "pump_bandwidth_sigma" => "source.pump_bandwidth_sigma_rad_s".into(),
        "signal_center" => "source.signal_center_rad_s".into(),
        "phase_matching_sigma" => "source.phase_matching_sigma_rad_s".into(),
        "center_omega" => "source.center_omega_rad_s".into(),
        other => format!("source.{other}"),
    }
}

fn map_biphoton(e: BiphotonError) -> ConfigError {
    match &e {
        BiphotonError::InvalidParameter { name, .. } => invalid(source_field(name), e.to_string()),
        _ => invalid("source", e.to_string()),
    }
}

fn map_geometry(e: GeometryError) -> ConfigError {
    match &e {
        GeometryError::InvalidLength { name, .. } => {
            invalid(format!("layout.{name}"), e.to_string())
        }
        GeometryError::InvalidLightSpeed(_) => invalid("layout.light_speed_m_s", e.to_string()),
        GeometryError::TriangleViolation { .. } => invalid("layout.dist_f_bd_m", e.to_string()),
        _ => invalid("layout", e.to_string()),
    }
}

fn map_model(e: ModelError) -> ConfigError {
    match &e {
        ModelError::InvalidModelParameter { name, .. } => {
            invalid(format!("model.{name}"), e.to_string())
        }
        _ => invalid("model", e.to_string()),
    }
}

fn check_strictly_increasing(values: &[f64], field: &str) -> Result<(), ConfigError> {
    for (i, pair) in values.windows(2).enumerate() {
        if pair[1].partial_cmp(&pair[0]) != Some(std::cmp::Ordering::Greater) {
            return Err(invalid(
                field,
                format!(
                    "entries must be strictly increasing (violated at index {})",
                    i + 1
                ),
            ));
        }
    }
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(invalid(field, format!("non-finite entry at index {bad}")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Whether Alice's wing carries a spectral filter. The heralded scheme
    /// works with either source family, so there the source kind decides.
    pub fn is_spectral(&self) -> bool {
        match self.scheme {
            SimScheme::Polarization => false,
            SimScheme::Heralded => self.source.kind == SourceKind::EnergyEntangled,
            _ => true,
        }
    }

    /// Replace the run seed (the `--seed` CLI override). No-op when there is
    /// no run section.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let (Some(run), Some(seed)) = (self.run.as_mut(), seed) {
            run.seed = seed;
        }
    }

    /// Full cross-field validation: scheme/source/filter consistency, every
    /// physics object buildable, run section accepted by the simulation
    /// engine, delay and scan grids sane.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.source.kind {
            SourceKind::PolarizationEntangled => {
                if !matches!(self.scheme, SimScheme::Polarization | SimScheme::Heralded) {
                    return Err(invalid(
                        "source.kind",
                        "spectral schemes need an energy_entangled source",
                    ));
                }
                if self.filter.is_some() {
                    return Err(invalid(
                        "filter",
                        "a polarization_entangled source takes no spectral filter; Alice's element is the analyzer itself",
                    ));
                }
                if self.layout.path_s_ad_m.is_none() {
                    return Err(invalid(
                        "layout.path_s_ad_m",
                        "required for a polarization_entangled source",
                    ));
                }
            }
            SourceKind::EnergyEntangled => {
                if self.scheme == SimScheme::Polarization {
                    return Err(invalid(
                        "source.kind",
                        "the polarization scheme needs a polarization_entangled source",
                    ));
                }
                if self.layout.path_s_f_m.is_none() {
                    return Err(invalid(
                        "layout.path_s_f_m",
                        "required for schemes with a spectral filter",
                    ));
                }
            }
        }
        if self.scheme == SimScheme::Heralded {
            if let Some(run) = &self.run {
                if run.emission.mode != EmissionKind::Pulsed {
                    return Err(invalid(
                        "run.emission.mode",
                        "the heralded scheme needs a pulsed pump",
                    ));
                }
            }
        }

        let source = self.build_source()?;
        if let BuiltSource::Energy(src) = &source {
            self.build_filter(src.grid())?;
        }
        self.build_layout()?;
        self.build_model()?;

        if let Some(delays) = &self.delays_s {
            check_strictly_increasing(delays, "delays_s")?;
        }
        if let Some(run) = &self.run {
            let built = self.build_run()?;
            built
                .validate(self.scheme)
                .map_err(|e| match e {
                    crate::montecarlo::MonteCarloError::ConfigInvalid { field, detail } => {
                        invalid(format!("run.{field}"), detail)
                    }
                    other => invalid("run", other.to_string()),
                })?;
            let _ = run;
        }
        if let Some(analysis) = &self.analysis {
            for (name, value) in [("alpha", analysis.alpha), ("power", analysis.power)] {
                if !(value.is_finite() && 0.0 < value && value < 1.0) {
                    return Err(invalid(
                        format!("analysis.{name}"),
                        format!("must lie strictly inside (0, 1), got {value}"),
                    ));
                }
            }
            if let Some(grid) = &analysis.scan_path_s_f_m {
                check_strictly_increasing(grid, "analysis.scan_path_s_f_m")?;
            }
        }
        Ok(())
    }

    pub fn build_source(&self) -> Result<BuiltSource, ConfigError> {
        match self.source.kind {
            SourceKind::EnergyEntangled => {
                let s = &self.source;
                forbid(&s.coherence_gamma, "source.coherence_gamma", "an energy_entangled source")?;
                forbid(
                    &s.center_omega_rad_s,
                    "source.center_omega_rad_s",
                    "an energy_entangled source",
                )?;
                let pump = require(
                    &s.pump_center_rad_s,
                    "source.pump_center_rad_s",
                    "kind = energy_entangled",
                )?;
                let sigma = require(
                    &s.phase_matching_sigma_rad_s,
                    "source.phase_matching_sigma_rad_s",
                    "kind = energy_entangled",
                )?;
                let pump_bw = s.pump_bandwidth_sigma_rad_s.unwrap_or(0.0);
                let signal = s.signal_center_rad_s.unwrap_or(pump / 2.0);
                let grid = self.build_grid(pump, signal, sigma)?;
                let src = EnergyEntangledSource::new(pump, pump_bw, signal, sigma, grid)
                    .map_err(map_biphoton)?;
                Ok(BuiltSource::Energy(src))
            }
            SourceKind::PolarizationEntangled => {
                let s = &self.source;
                for (opt, field) in [
                    (&s.pump_center_rad_s, "source.pump_center_rad_s"),
                    (&s.pump_bandwidth_sigma_rad_s, "source.pump_bandwidth_sigma_rad_s"),
                    (&s.signal_center_rad_s, "source.signal_center_rad_s"),
                    (&s.phase_matching_sigma_rad_s, "source.phase_matching_sigma_rad_s"),
                ] {
                    forbid(opt, field, "a polarization_entangled source")?;
                }
                if s.grid.is_some() {
                    return Err(invalid(
                        "source.grid",
                        "not a parameter of a polarization_entangled source",
                    ));
                }
                let gamma = require(
                    &s.coherence_gamma,
                    "source.coherence_gamma",
                    "kind = polarization_entangled",
                )?;
                let omega = require(
                    &s.center_omega_rad_s,
                    "source.center_omega_rad_s",
                    "kind = polarization_entangled",
                )?;
                let src =
                    PolarizationEntangledSource::new(gamma, omega).map_err(map_biphoton)?;
                Ok(BuiltSource::Polarization(src))
            }
        }
    }

    /// The shared frequency grid: symmetric about half the pump frequency,
    /// wide enough for both marginals, fine enough for the narrowest feature
    /// (the phase-matching width or a gaussian filter width).
    fn build_grid(
        &self,
        pump_center: f64,
        signal_center: f64,
        marginal_sigma: f64,
    ) -> Result<FrequencyGrid, ConfigError> {
        if !(pump_center.is_finite() && pump_center > 0.0) {
            return Err(invalid(
                "source.pump_center_rad_s",
                format!("must be positive and finite, got {pump_center}"),
            ));
        }
        if !(marginal_sigma.is_finite() && marginal_sigma > 0.0) {
            return Err(invalid(
                "source.phase_matching_sigma_rad_s",
                format!("must be positive and finite, got {marginal_sigma}"),
            ));
        }
        let grid_cfg = self.source.grid.unwrap_or_default();
        for (name, value) in [
            ("half_span_sigmas", grid_cfg.half_span_sigmas),
            ("points_per_sigma", grid_cfg.points_per_sigma),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(invalid(
                    format!("source.grid.{name}"),
                    format!("must be positive and finite, got {value}"),
                ));
            }
        }
        let mut feature = marginal_sigma;
        if let Some(f) = &self.filter {
            match f.kind {
                FilterKind::GaussianBandpass => {
                    if let Some(sig) = f.sigma_rad_s {
                        if sig.is_finite() && sig > 0.0 {
                            feature = feature.min(sig);
                        }
                    }
                }
                FilterKind::RectangularBandpass => {
                    if let Some(w) = f.full_width_rad_s {
                        if w.is_finite() && w > 0.0 {
                            feature = feature.min(w / 2.0);
                        }
                    }
                }
                FilterKind::Uniform => {}
            }
        }
        let center = pump_center / 2.0;
        let half_span =
            (signal_center - center).abs() + grid_cfg.half_span_sigmas * marginal_sigma;
        let n = (2.0 * half_span / (feature / grid_cfg.points_per_sigma)).ceil() as usize + 1;
        FrequencyGrid::new(center - half_span, center + half_span, n, feature)
            .map_err(|e| invalid("source.grid", e.to_string()))
    }

    /// Alice's filter profile on the source grid. `None` in the config means
    /// transparent; the polarization scheme gets no filter at all (validated
    /// separately).
    pub fn build_filter(&self, grid: &FrequencyGrid) -> Result<FilterProfile, ConfigError> {
        let map_err = |field: &str| {
            let field = field.to_owned();
            move |e: SpectraError| invalid(format!("filter.{field}"), e.to_string())
        };
        match &self.filter {
            None => FilterProfile::uniform(grid.clone(), 1.0)
                .map_err(|e| invalid("filter", e.to_string())),
            Some(f) => {
                let t = f.peak_transmission.unwrap_or(1.0);
                match f.kind {
                    FilterKind::Uniform => {
                        forbid(&f.center_rad_s, "filter.center_rad_s", "a uniform filter")?;
                        forbid(&f.sigma_rad_s, "filter.sigma_rad_s", "a uniform filter")?;
                        forbid(
                            &f.full_width_rad_s,
                            "filter.full_width_rad_s",
                            "a uniform filter",
                        )?;
                        FilterProfile::uniform(grid.clone(), t)
                            .map_err(map_err("peak_transmission"))
                    }
                    FilterKind::GaussianBandpass => {
                        forbid(
                            &f.full_width_rad_s,
                            "filter.full_width_rad_s",
                            "a gaussian_bandpass filter",
                        )?;
                        let center = require(
                            &f.center_rad_s,
                            "filter.center_rad_s",
                            "kind = gaussian_bandpass",
                        )?;
                        let sigma = require(
                            &f.sigma_rad_s,
                            "filter.sigma_rad_s",
                            "kind = gaussian_bandpass",
                        )?;
                        FilterProfile::gaussian_bandpass(grid.clone(), center, sigma, t)
                            .map_err(map_err("sigma_rad_s"))
                    }
                    FilterKind::RectangularBandpass => {
                        forbid(
                            &f.sigma_rad_s,
                            "filter.sigma_rad_s",
                            "a rectangular_bandpass filter",
                        )?;
                        let center = require(
                            &f.center_rad_s,
                            "filter.center_rad_s",
                            "kind = rectangular_bandpass",
                        )?;
                        let width = require(
                            &f.full_width_rad_s,
                            "filter.full_width_rad_s",
                            "kind = rectangular_bandpass",
                        )?;
                        FilterProfile::rectangular_bandpass(grid.clone(), center, width, t)
                            .map_err(map_err("full_width_rad_s"))
                    }
                }
            }
        }
    }

    pub fn build_layout(&self) -> Result<Layout, ConfigError> {
        let l = &self.layout;
        Layout::new(
            l.path_s_f_m,
            l.path_s_ad_m,
            l.path_s_bd_m,
            l.dist_f_bd_m,
            l.light_speed_m_s,
        )
        .map_err(map_geometry)
    }

    pub fn build_model(&self) -> Result<PhysicsModel, ConfigError> {
        let m = &self.model;
        let model = match m.backend {
            BackendKind::UnitaryQm => {
                forbid(&m.kappa_m_s, "model.kappa_m_s", "the unitary_qm backend")?;
                forbid(&m.d_tau_m, "model.d_tau_m", "the unitary_qm backend")?;
                forbid(&m.weighting, "model.weighting", "the unitary_qm backend")?;
                forbid(
                    &m.pre_collapse_gamma,
                    "model.pre_collapse_gamma",
                    "the unitary_qm backend",
                )?;
                PhysicsModel::UnitaryQm
            }
            BackendKind::FiniteSpeedCollapse => PhysicsModel::FiniteSpeedCollapse {
                kappa_m_s: require(
                    &m.kappa_m_s,
                    "model.kappa_m_s",
                    "backend = finite_speed_collapse",
                )?
                .0,
                d_tau_m: require(&m.d_tau_m, "model.d_tau_m", "backend = finite_speed_collapse")?
                    .0,
                weighting: require(
                    &m.weighting,
                    "model.weighting",
                    "backend = finite_speed_collapse",
                )?,
                pre_collapse_gamma: require(
                    &m.pre_collapse_gamma,
                    "model.pre_collapse_gamma",
                    "backend = finite_speed_collapse",
                )?,
            },
        };
        model.validate().map_err(map_model)?;
        Ok(model)
    }

    /// The simulation engine's run parameters. Requires the `run` section.
    pub fn build_run(&self) -> Result<RunConfig, ConfigError> {
        let run = self
            .run
            .as_ref()
            .ok_or_else(|| invalid("run", "this command needs a run section"))?;
        let e = &run.emission;
        let mode = match e.mode {
            EmissionKind::Cw => {
                forbid(
                    &e.pairs_per_pulse_mean,
                    "run.emission.pairs_per_pulse_mean",
                    "cw emission",
                )?;
                forbid(&e.pulse_rate_hz, "run.emission.pulse_rate_hz", "cw emission")?;
                EmissionMode::Cw {
                    pair_rate_hz: require(
                        &e.pair_rate_hz,
                        "run.emission.pair_rate_hz",
                        "mode = cw",
                    )?,
                }
            }
            EmissionKind::Pulsed => {
                forbid(&e.pair_rate_hz, "run.emission.pair_rate_hz", "pulsed emission")?;
                EmissionMode::Pulsed {
                    pairs_per_pulse_mean: require(
                        &e.pairs_per_pulse_mean,
                        "run.emission.pairs_per_pulse_mean",
                        "mode = pulsed",
                    )?,
                    pulse_rate_hz: require(
                        &e.pulse_rate_hz,
                        "run.emission.pulse_rate_hz",
                        "mode = pulsed",
                    )?,
                }
            }
        };
        Ok(RunConfig {
            mode,
            duration_s: run.duration_s,
            detector_efficiency_a: run.detector_efficiency_a,
            detector_efficiency_b: run.detector_efficiency_b,
            dark_rate_a_hz: run.dark_rate_a_hz,
            dark_rate_b_hz: run.dark_rate_b_hz,
            timing_jitter_sigma_s: run.timing_jitter_sigma_s,
            coincidence_window_s: run.coincidence_window_s,
            herald_gate_width_s: run.herald_gate_width_s,
            delay_schedule: run.delay_schedule.clone(),
            seed: run.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUMP: f64 = 2.4e15;
    const SIGMA: f64 = 1.0e12;

    fn energy_config_json() -> String {
        format!(
            r#"{{
  "scheme": "energy_singles",
  "source": {{
    "kind": "energy_entangled",
    "pump_center_rad_s": {PUMP},
    "phase_matching_sigma_rad_s": {SIGMA}
  }},
  "filter": {{
    "kind": "gaussian_bandpass",
    "center_rad_s": {},
    "sigma_rad_s": {}
  }},
  "layout": {{
    "path_s_f_m": 10.0,
    "path_s_bd_m": 27.0,
    "dist_f_bd_m": 12.0,
    "light_speed_m_s": 3.0e8
  }},
  "model": {{
    "backend": "finite_speed_collapse",
    "kappa_m_s": "infinity",
    "d_tau_m": 15.0,
    "weighting": "equal",
    "pre_collapse_gamma": 1.0
  }},
  "delays_s": [0.0, 1.0e-13, 2.0e-13]
}}"#,
            PUMP / 2.0,
            SIGMA / 2.0
        )
    }

    fn polarization_config_json() -> &'static str {
        r#"{
  "scheme": "polarization",
  "source": {
    "kind": "polarization_entangled",
    "coherence_gamma": 1.0,
    "center_omega_rad_s": 1.2e15
  },
  "layout": {
    "path_s_ad_m": 40.0,
    "path_s_bd_m": 27.0,
    "dist_f_bd_m": 12.0,
    "light_speed_m_s": 3.0e8
  },
  "model": {
    "backend": "finite_speed_collapse",
    "kappa_m_s": 3.0e8,
    "d_tau_m": "infinity",
    "weighting": "equal",
    "pre_collapse_gamma": 1.0
  },
  "delays_s": [0.0, 1.0e-15, 2.0e-15]
}"#
    }

    #[test]
    fn energy_config_parses_validates_and_round_trips() {
        let cfg = parse_config(&energy_config_json()).unwrap();
        cfg.validate().unwrap();
        let echoed = serde_json::to_string_pretty(&cfg).unwrap();
        let reparsed = parse_config(&echoed).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(config_sha256(&cfg), config_sha256(&reparsed));
    }

    #[test]
    fn polarization_config_parses_and_validates() {
        let cfg = parse_config(polarization_config_json()).unwrap();
        cfg.validate().unwrap();
        match cfg.build_source().unwrap() {
            BuiltSource::Polarization(src) => {
                assert_eq!(src.coherence_gamma(), 1.0);
                assert_eq!(src.center_omega(), 1.2e15);
            }
            other => panic!("wrong source family: {other:?}"),
        }
    }

    #[test]
    fn heralded_scheme_accepts_either_source_family() {
        // Heralded with a polarization source: same wing-A rules as the
        // polarization scheme.
        let text = polarization_config_json().replace("\"polarization\"", "\"heralded\"");
        let cfg = parse_config(&text).unwrap();
        cfg.validate().unwrap();
        assert!(!cfg.is_spectral());

        let with_filter = text.replace(
            "\"layout\"",
            "\"filter\": {\"kind\": \"uniform\"},\n  \"layout\"",
        );
        let cfg = parse_config(&with_filter).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "filter"),
            other => panic!("{other:?}"),
        }

        // Heralded with an energy source stays a spectral scheme.
        let text = energy_config_json().replace("\"energy_singles\"", "\"heralded\"");
        let cfg = parse_config(&text).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.is_spectral());
    }

    #[test]
    fn unknown_fields_are_rejected_with_their_name() {
        let text = energy_config_json().replace("\"delays_s\"", "\"delay_grid\"");
        let err = parse_config(&text).unwrap_err();
        match err {
            ConfigError::Parse { message, .. } => {
                assert!(message.contains("delay_grid"), "message: {message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }

        // Nested sections are strict too.
        let text = energy_config_json().replace("\"sigma_rad_s\"", "\"sigma_radians\"");
        let err = parse_config(&text).unwrap_err();
        match err {
            ConfigError::Parse { message, .. } => {
                assert!(message.contains("sigma_radians"), "message: {message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn infinity_spelling_round_trips() {
        let cfg = parse_config(&energy_config_json()).unwrap();
        match cfg.build_model().unwrap() {
            PhysicsModel::FiniteSpeedCollapse { kappa_m_s, d_tau_m, .. } => {
                assert_eq!(kappa_m_s, f64::INFINITY);
                assert_eq!(d_tau_m, 15.0);
            }
            other => panic!("wrong backend: {other:?}"),
        }
        let echoed = serde_json::to_string(&cfg).unwrap();
        assert!(echoed.contains(r#""kappa_m_s":"infinity""#), "echo: {echoed}");
        assert!(echoed.contains(r#""d_tau_m":15.0"#), "echo: {echoed}");

        let bad = energy_config_json().replace("\"infinity\"", "\"unbounded\"");
        assert!(matches!(parse_config(&bad), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn degenerate_cw_defaults_fill_in() {
        let cfg = parse_config(&energy_config_json()).unwrap();
        match cfg.build_source().unwrap() {
            BuiltSource::Energy(src) => {
                assert_eq!(src.pump_bandwidth_sigma(), 0.0);
                assert!(src.is_cw());
                assert_eq!(src.signal_center(), PUMP / 2.0);
                // Grid symmetric about half the pump.
                let grid = src.grid();
                assert!(
                    ((grid.omega_min() + grid.omega_max()) - PUMP).abs() < 1.0e-12 * PUMP
                );
                // Resolution follows the narrowest feature (the filter).
                assert!(grid.spacing() <= (SIGMA / 2.0) / 16.0 * (1.0 + 1.0e-12));
            }
            other => panic!("wrong source family: {other:?}"),
        }
    }

    #[test]
    fn scheme_source_mismatch_is_named() {
        let text = energy_config_json().replace("energy_singles", "polarization");
        let cfg = parse_config(&text).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "source.kind"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn polarization_scheme_rejects_a_filter_section() {
        let with_filter = polarization_config_json().replace(
            "\"layout\"",
            "\"filter\": {\"kind\": \"uniform\"},\n  \"layout\"",
        );
        let cfg = parse_config(&with_filter).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "filter"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_scheme_path_is_named() {
        let text = energy_config_json().replace("\"path_s_f_m\": 10.0,", "");
        let cfg = parse_config(&text).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "layout.path_s_f_m"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_cross_field_rules() {
        let missing = energy_config_json().replace("\"kappa_m_s\": \"infinity\",", "");
        let cfg = parse_config(&missing).unwrap();
        match cfg.build_model().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "model.kappa_m_s"),
            other => panic!("{other:?}"),
        }

        let contradictory = energy_config_json().replace(
            "\"backend\": \"finite_speed_collapse\"",
            "\"backend\": \"unitary_qm\"",
        );
        let cfg = parse_config(&contradictory).unwrap();
        match cfg.build_model().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "model.kappa_m_s"),
            other => panic!("{other:?}"),
        }

        let out_of_range = energy_config_json().replace(
            "\"pre_collapse_gamma\": 1.0",
            "\"pre_collapse_gamma\": 1.5",
        );
        let cfg = parse_config(&out_of_range).unwrap();
        match cfg.build_model().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "model.pre_collapse_gamma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_filter_means_transparent() {
        let text = energy_config_json().replace(
            r#""filter": {
    "kind": "gaussian_bandpass",
"#,
            r#""filter_unused": {
    "kind": "gaussian_bandpass",
"#,
        );
        // Renaming the section is a schema error; drop it instead.
        assert!(parse_config(&text).is_err());

        let mut cfg = parse_config(&energy_config_json()).unwrap();
        cfg.filter = None;
        let src = match cfg.build_source().unwrap() {
            BuiltSource::Energy(s) => s,
            other => panic!("{other:?}"),
        };
        let filter = cfg.build_filter(src.grid()).unwrap();
        assert!(filter.transmission().iter().all(|&t| t == 1.0));
    }

    #[test]
    fn emission_cross_field_rules() {
        let run = r#",
  "run": {
    "emission": {"mode": "cw", "pair_rate_hz": 1.0e5},
    "duration_s": 1.0,
    "detector_efficiency_a": 1.0,
    "detector_efficiency_b": 1.0,
    "delay_schedule": [{"delay_s": 0.0, "dwell_s": 1.0}],
    "seed": 7
  }
}"#;
        let base = energy_config_json();
        let with_run = format!("{}{run}", &base[..base.len() - 2]);
        let cfg = parse_config(&with_run).unwrap();
        cfg.validate().unwrap();
        assert!(matches!(
            cfg.build_run().unwrap().mode,
            EmissionMode::Cw { pair_rate_hz } if pair_rate_hz == 1.0e5
        ));

        let conflicted = with_run.replace(
            r#"{"mode": "cw", "pair_rate_hz": 1.0e5}"#,
            r#"{"mode": "cw", "pair_rate_hz": 1.0e5, "pulse_rate_hz": 1.0e5}"#,
        );
        let cfg = parse_config(&conflicted).unwrap();
        match cfg.build_run().unwrap_err() {
            ConfigError::Invalid { field, .. } => {
                assert_eq!(field, "run.emission.pulse_rate_hz");
            }
            other => panic!("{other:?}"),
        }

        let heralded = with_run.replace("energy_singles", "heralded");
        let cfg = parse_config(&heralded).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "run.emission.mode"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_section_problems_are_prefixed() {
        let run = r#",
  "run": {
    "emission": {"mode": "cw", "pair_rate_hz": 1.0e5},
    "duration_s": 2.0,
    "detector_efficiency_a": 1.0,
    "detector_efficiency_b": 1.0,
    "delay_schedule": [{"delay_s": 0.0, "dwell_s": 1.0}],
    "seed": 7
  }
}"#;
        let base = energy_config_json();
        let with_run = format!("{}{run}", &base[..base.len() - 2]);
        let cfg = parse_config(&with_run).unwrap();
        // Schedule sums to 1 s but the run lasts 2 s.
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => {
                assert!(field.starts_with("run."), "field: {field}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn analysis_options_are_validated() {
        let base = energy_config_json();
        let with_analysis = format!(
            "{},\n  \"analysis\": {{\"alpha\": 1.2}}\n}}",
            &base[..base.len() - 2]
        );
        let cfg = parse_config(&with_analysis).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => assert_eq!(field, "analysis.alpha"),
            other => panic!("{other:?}"),
        }

        let with_grid = format!(
            "{},\n  \"analysis\": {{\"scan_path_s_f_m\": [5.0, 5.0]}}\n}}",
            &base[..base.len() - 2]
        );
        let cfg = parse_config(&with_grid).unwrap();
        match cfg.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => {
                assert_eq!(field, "analysis.scan_path_s_f_m");
            }
            other => panic!("{other:?}"),
        }

        // Defaults kick in when the section is present but sparse.
        let with_defaults = format!(
            "{},\n  \"analysis\": {{}}\n}}",
            &base[..base.len() - 2]
        );
        let cfg = parse_config(&with_defaults).unwrap();
        let analysis = cfg.analysis.unwrap();
        assert_eq!(analysis.alpha, 0.01);
        assert_eq!(analysis.power, 0.99);
    }

    #[test]
    fn seed_override_changes_the_hash_but_nothing_else() {
        let run = r#",
  "run": {
    "emission": {"mode": "cw", "pair_rate_hz": 1.0e5},
    "duration_s": 1.0,
    "detector_efficiency_a": 1.0,
    "detector_efficiency_b": 1.0,
    "delay_schedule": [{"delay_s": 0.0, "dwell_s": 1.0}],
    "seed": 7
  }
}"#;
        let base = energy_config_json();
        let with_run = format!("{}{run}", &base[..base.len() - 2]);
        let mut cfg = parse_config(&with_run).unwrap();
        let original_hash = config_sha256(&cfg);
        cfg.override_seed(None);
        assert_eq!(config_sha256(&cfg), original_hash);
        cfg.override_seed(Some(99));
        assert_eq!(cfg.run.as_ref().unwrap().seed, 99);
        assert_ne!(config_sha256(&cfg), original_hash);
    }
}
