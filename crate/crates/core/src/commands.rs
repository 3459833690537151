//! The four commands behind the CLI: analytic prediction, event-level
//! simulation, the threshold scan, and sample-size planning. Each takes the
//! raw config text plus the shared CLI options, computes everything in
//! memory, and only then writes its files — a failing run leaves no partial
//! outputs behind.

use crate::analysis::{
    required_samples, threshold_scan, AnalysisError, RequiredSamples, ScanOutcome, ScanPoint,
    ThresholdScanResult,
};
use crate::biphoton::{Branch, BiphotonError, EnergyEntangledSource, Wing};
use crate::config::{
    config_sha256, parse_config, BackendKind, BuiltSource, ConfigError, ExperimentConfig,
};
use crate::geometry::Scheme;
use crate::models::{
    predict_coincidence_kc, predict_energy_scheme, predict_polarization_scheme, ModelError,
    PhysicsModel,
};
use crate::montecarlo::{
    bin_coincidence_pattern, bin_pattern, bin_port_probability, coincidence_pairs, count_signal_noise,
    herald_gate, simulate, EventLog, EventRecord, MonteCarloError, Outcome, RunConfig, SimScheme,
    SimSource,
};
use crate::spectra::{FilterProfile, InterferencePattern, PatternKind, SpectraError};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Version of the on-disk file formats (event log header, metadata shapes).
pub const SCHEMA_VERSION: u32 = 1;

pub fn tool_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Marker placed in event-log headers when the diagnostic column is present.
pub const DIAGNOSTIC_MARKER: &str =
    "NON-OBSERVABLE DIAGNOSTIC: the hidden_branch column records which Alice \
     branch set each event's statistics; no physical detector sees it";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: field '{field}': {detail}")]
    Config { field: String, detail: String },
    #[error("config error: line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("physics error: {name}: {detail}")]
    Physics { name: String, detail: String },
    #[error("io error: {path}: {detail}")]
    Io { path: PathBuf, detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Parse { .. } => 2,
            CliError::Physics { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Parse {
                line,
                column,
                message,
            } => CliError::Parse {
                line,
                column,
                message,
            },
            ConfigError::Invalid { field, detail } => CliError::Config { field, detail },
        }
    }
}

fn config_err(field: impl Into<String>, detail: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        detail: detail.into(),
    }
}

/// The leading identifier of a Debug rendering: the variant name.
fn debug_head(e: &dyn std::fmt::Debug) -> String {
    let rendered = format!("{e:?}");
    rendered
        .split(['(', ' ', '{'])
        .next()
        .unwrap_or(&rendered)
        .to_string()
}

fn biphoton_leaf(e: &BiphotonError) -> String {
    match e {
        BiphotonError::Spectra(inner) => debug_head(inner),
        other => debug_head(other),
    }
}

fn model_leaf(e: &ModelError) -> String {
    match e {
        ModelError::Spectra(inner) => debug_head(inner),
        ModelError::Biphoton(inner) => biphoton_leaf(inner),
        ModelError::Geometry(inner) => debug_head(inner),
        other => debug_head(other),
    }
}

fn physics_from_model(e: ModelError) -> CliError {
    CliError::Physics {
        name: model_leaf(&e),
        detail: e.to_string(),
    }
}

fn physics_from_spectra(e: SpectraError) -> CliError {
    CliError::Physics {
        name: debug_head(&e),
        detail: e.to_string(),
    }
}

fn map_montecarlo(e: MonteCarloError) -> CliError {
    match e {
        MonteCarloError::ConfigInvalid { field, detail } => {
            config_err(format!("run.{field}"), detail)
        }
        MonteCarloError::IncompatibleScheme(detail) => config_err("scheme", detail),
        MonteCarloError::NoHeralds => CliError::Physics {
            name: "NoHeralds".into(),
            detail: e.to_string(),
        },
        MonteCarloError::Model(inner) => physics_from_model(inner),
        MonteCarloError::Spectra(inner) => physics_from_spectra(inner),
        MonteCarloError::Biphoton(inner) => CliError::Physics {
            name: biphoton_leaf(&inner),
            detail: inner.to_string(),
        },
    }
}

fn map_analysis(e: AnalysisError) -> CliError {
    match &e {
        AnalysisError::InvalidParameter { name, .. } => {
            config_err(format!("analysis.{name}"), e.to_string())
        }
        AnalysisError::IdenticalReferences => config_err(
            "filter",
            "the configured filter and model leave the two reference patterns identical, \
             so scan points cannot be classified",
        ),
        AnalysisError::ScanGridNotSorted | AnalysisError::TooFewPoints { .. } => {
            config_err("analysis.scan_path_s_f_m", e.to_string())
        }
        _ => CliError::Physics {
            name: debug_head(&e),
            detail: e.to_string(),
        },
    }
}

/// Shared command-line options.
#[derive(Debug, Clone, Copy, Default)]
pub struct CliOptions {
    /// Overrides `run.seed` when present.
    pub seed: Option<u64>,
    /// Worker threads for the simulation (default: all cores). Results do
    /// not depend on this.
    pub threads: Option<usize>,
    /// Export the per-event hidden-branch bookkeeping.
    pub diagnostic: bool,
}

/// Buffered output files: everything is rendered first, then written in one
/// pass; an I/O failure mid-write removes what was already written.
struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputSet {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    fn file_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.files.iter().map(|(n, _)| n.clone()).collect();
        names.sort();
        names
    }

    fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| CliError::Io {
            path: self.dir.clone(),
            detail: e.to_string(),
        })?;
        let mut written = Vec::new();
        for (name, content) in &self.files {
            let path = self.dir.join(name);
            match std::fs::write(&path, content) {
                Ok(()) => written.push(path),
                Err(e) => {
                    for done in &written {
                        let _ = std::fs::remove_file(done);
                    }
                    return Err(CliError::Io {
                        path,
                        detail: e.to_string(),
                    });
                }
            }
        }
        Ok(written)
    }
}

fn pattern_csv(p: &InterferencePattern) -> String {
    let mut out = String::with_capacity(24 * p.len() + 24);
    out.push_str("delay_s,value,error\n");
    for i in 0..p.len() {
        let _ = writeln!(out, "{},{},{}", p.delays()[i], p.values()[i], p.errors()[i]);
    }
    out
}

fn pretty_json(v: &Value) -> String {
    let mut text = serde_json::to_string_pretty(v).expect("JSON rendering cannot fail");
    text.push('\n');
    text
}

fn config_value(config: &ExperimentConfig) -> Value {
    serde_json::to_value(config).expect("config serialization cannot fail")
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| config_err("--threads", e.to_string()))
}

fn load_config(config_text: &str, opts: &CliOptions) -> Result<ExperimentConfig, CliError> {
    let mut config = parse_config(config_text)?;
    config.override_seed(opts.seed);
    config.validate()?;
    Ok(config)
}

fn required_delays(config: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
    match &config.delays_s {
        Some(d) if !d.is_empty() => Ok(d.clone()),
        _ => Err(config_err(
            "delays_s",
            "this command needs a non-empty list of interferometer delays",
        )),
    }
}

/// Analytic patterns for the configured experiment: Bob's singles, the
/// per-branch patterns for spectral schemes, and the coincidence pattern for
/// the coincidence scheme, as CSV files plus a JSON metadata sidecar.
pub fn cmd_predict(
    config_text: &str,
    out_dir: &Path,
    opts: &CliOptions,
) -> Result<Vec<PathBuf>, CliError> {
    let config = load_config(config_text, opts)?;
    let delays = required_delays(&config)?;
    let model = config.build_model()?;
    let layout = config.build_layout()?;

    let mut out = OutputSet::new(out_dir);
    let (ordering, collapse_applies) = match config.build_source()? {
        BuiltSource::Energy(src) => {
            let filter = config.build_filter(src.grid())?;
            let prediction = predict_energy_scheme(&model, &src, &filter, &layout, &delays)
                .map_err(physics_from_model)?;
            out.add("pattern_singles.csv", pattern_csv(&prediction.singles_bob));
            if let Some((transmitted, absorbed)) = &prediction.branch_patterns {
                out.add("branch_transmitted.csv", pattern_csv(transmitted));
                out.add("branch_absorbed.csv", pattern_csv(absorbed));
            }
            if config.scheme == SimScheme::KcCoincidence {
                let coincidence = predict_coincidence_kc(&src, &filter, &delays)
                    .map_err(physics_from_model)?;
                out.add("pattern_coincidence.csv", pattern_csv(&coincidence));
            }
            (prediction.ordering, prediction.collapse_applies)
        }
        BuiltSource::Polarization(src) => {
            let prediction = predict_polarization_scheme(&model, &src, &layout, &delays)
                .map_err(physics_from_model)?;
            out.add("pattern_singles.csv", pattern_csv(&prediction.singles_bob));
            (prediction.ordering, prediction.collapse_applies)
        }
    };

    let mut file_names = out.file_names();
    file_names.push("predict_metadata.json".to_string());
    file_names.sort();
    let metadata = json!({
        "collapse_applies": collapse_applies,
        "config": config_value(&config),
        "files": file_names,
        "ordering": serde_json::to_value(ordering).expect("verdict serialization cannot fail"),
        "schema_version": SCHEMA_VERSION,
        "tool_version": tool_version(),
    });
    out.add("predict_metadata.json", pretty_json(&metadata));
    out.commit()
}

fn outcome_str(o: Outcome) -> &'static str {
    match o {
        Outcome::DetectedPortPlus => "detected_port_plus",
        Outcome::DetectedPortMinus => "detected_port_minus",
        Outcome::AliceTransmitted => "alice_transmitted",
        Outcome::AliceAbsorbed => "alice_absorbed",
        Outcome::Herald => "herald",
    }
}

fn scheme_str(s: SimScheme) -> &'static str {
    match s {
        SimScheme::KcCoincidence => "kc_coincidence",
        SimScheme::EnergySingles => "energy_singles",
        SimScheme::Polarization => "polarization",
        SimScheme::Heralded => "heralded",
    }
}

fn event_log_text(
    log: &EventLog,
    config_hash: &str,
    seed: u64,
    diagnostic: bool,
) -> String {
    let mut out = String::with_capacity(40 * log.records.len() + 256);
    let _ = writeln!(out, "# steersim event log");
    let _ = writeln!(out, "# schema_version: {SCHEMA_VERSION}");
    let _ = writeln!(out, "# tool_version: {}", tool_version());
    let _ = writeln!(out, "# config_sha256: {config_hash}");
    let _ = writeln!(out, "# seed: {seed}");
    let _ = writeln!(out, "# scheme: {}", scheme_str(log.scheme));
    if diagnostic {
        let _ = writeln!(out, "# {DIAGNOSTIC_MARKER}");
        out.push_str("pair_id,wing,timestamp_s,outcome,hidden_branch\n");
    } else {
        out.push_str("pair_id,wing,timestamp_s,outcome\n");
    }
    for r in &log.records {
        write_event_row(&mut out, r, diagnostic);
    }
    out
}

fn write_event_row(out: &mut String, r: &EventRecord, diagnostic: bool) {
    if let Some(id) = r.pair_id {
        let _ = write!(out, "{id}");
    }
    let wing = match r.wing {
        Wing::A => "A",
        Wing::B => "B",
    };
    let _ = write!(out, ",{wing},{},{}", r.timestamp_s, outcome_str(r.outcome));
    if diagnostic {
        let branch = match r.hidden_branch {
            Some(Branch::Transmitted) => "transmitted",
            Some(Branch::Absorbed) => "absorbed",
            None => "",
        };
        let _ = write!(out, ",{branch}");
    }
    out.push('\n');
}

fn snr_value(signal: u64, noise: u64) -> Value {
    if noise == 0 {
        Value::Null
    } else {
        json!(signal as f64 / noise as f64)
    }
}

/// Run the event-level simulation and write the event log, the binned
/// pattern CSVs for the scheme, and a metadata sidecar. Bit-reproducible for
/// a given seed regardless of `--threads`.
pub fn cmd_simulate(
    config_text: &str,
    out_dir: &Path,
    opts: &CliOptions,
) -> Result<Vec<PathBuf>, CliError> {
    let config = load_config(config_text, opts)?;
    let run = config.build_run()?;
    let model = config.build_model()?;
    let layout = config.build_layout()?;
    let source = config.build_source()?;
    let config_hash = config_sha256(&config);

    let pool = build_pool(opts.threads)?;
    let log = match &source {
        BuiltSource::Energy(src) => {
            let filter = config.build_filter(src.grid())?;
            pool.install(|| {
                simulate(
                    config.scheme,
                    &model,
                    SimSource::Energy(src),
                    Some(&filter),
                    &layout,
                    &run,
                )
            })
            .map_err(map_montecarlo)?
        }
        BuiltSource::Polarization(src) => pool
            .install(|| {
                simulate(
                    config.scheme,
                    &model,
                    SimSource::Polarization(src),
                    None,
                    &layout,
                    &run,
                )
            })
            .map_err(map_montecarlo)?,
    };

    let schedule = &run.delay_schedule;
    let mut out = OutputSet::new(out_dir);
    out.add(
        "events.log",
        event_log_text(&log, &config_hash, run.seed, opts.diagnostic),
    );

    let singles = bin_pattern(&log, schedule).map_err(map_montecarlo)?;
    out.add("pattern_singles_rate.csv", pattern_csv(&singles.pattern));

    let port = bin_port_probability(&log, schedule);
    let port_pattern = InterferencePattern::new(
        PatternKind::Probability,
        port.delays_s.clone(),
        port.p_plus.clone(),
        port.sigma.clone(),
    )
    .map_err(physics_from_spectra)?;
    out.add("pattern_port_probability.csv", pattern_csv(&port_pattern));

    let (signal_b, noise_b) = count_signal_noise(&log.records);
    let mut extra = serde_json::Map::new();

    if config.scheme == SimScheme::KcCoincidence {
        let pairs = coincidence_pairs(&log, run.coincidence_window_s);
        let coincidences =
            bin_coincidence_pattern(&pairs, schedule).map_err(map_montecarlo)?;
        out.add(
            "pattern_coincidence_rate.csv",
            pattern_csv(&coincidences.pattern),
        );
        extra.insert("coincidence_pairs".into(), json!(pairs.len()));
    }

    if config.scheme == SimScheme::Heralded {
        let gated = herald_gate(&log, run.herald_gate_width_s).map_err(map_montecarlo)?;
        let gated_singles = bin_pattern(&gated, schedule).map_err(map_montecarlo)?;
        out.add(
            "pattern_singles_rate_gated.csv",
            pattern_csv(&gated_singles.pattern),
        );
        let (gated_signal, gated_noise) = count_signal_noise(&gated.records);
        let ungated_snr = snr_value(signal_b, noise_b);
        let gated_snr = snr_value(gated_signal, gated_noise);
        let ratio = match (&ungated_snr, &gated_snr) {
            (Value::Number(u), Value::Number(g)) => {
                let (u, g) = (u.as_f64().unwrap_or(0.0), g.as_f64().unwrap_or(0.0));
                if u > 0.0 {
                    json!(g / u)
                } else {
                    Value::Null
                }
            }
            _ => Value::Null,
        };
        extra.insert(
            "snr".into(),
            json!({
                "gated": gated_snr,
                "gated_noise_counts": gated_noise,
                "gated_signal_counts": gated_signal,
                "ratio_gated_to_ungated": ratio,
                "ungated": ungated_snr,
            }),
        );
    }

    let mut file_names = out.file_names();
    file_names.push("simulate_metadata.json".to_string());
    file_names.sort();
    let mut metadata = json!({
        "config": config_value(&config),
        "config_sha256": config_hash,
        "counts": {
            "noise_b": noise_b,
            "records": log.records.len(),
            "signal_b": signal_b,
        },
        "files": file_names,
        "schema_version": SCHEMA_VERSION,
        "scheme": scheme_str(config.scheme),
        "seed": run.seed,
        "tool_version": tool_version(),
    });
    metadata
        .as_object_mut()
        .expect("metadata is an object")
        .extend(extra);
    out.add("simulate_metadata.json", pretty_json(&metadata));
    out.commit()
}

/// One simulated scan point: Bob's port-probability pattern at a given
/// source-to-filter path.
fn simulate_scan_point(
    config: &ExperimentConfig,
    model: &PhysicsModel,
    src: &EnergyEntangledSource,
    filter: &FilterProfile,
    run: &RunConfig,
    path_m: f64,
    point_index: u64,
) -> Result<InterferencePattern, CliError> {
    let layout = config
        .build_layout()?
        .with_alice_path_m(Scheme::Energy, path_m)
        .map_err(|e| config_err("analysis.scan_path_s_f_m", e.to_string()))?;
    let mut run = run.clone();
    run.seed = run.seed.wrapping_add(point_index);
    let log = simulate(
        config.scheme,
        model,
        SimSource::Energy(src),
        Some(filter),
        &layout,
        &run,
    )
    .map_err(map_montecarlo)?;
    let bins = bin_port_probability(&log, &run.delay_schedule);
    InterferencePattern::new(
        PatternKind::Probability,
        bins.delays_s,
        bins.p_plus,
        bins.sigma,
    )
    .map_err(physics_from_spectra)
}

/// Simulate Bob's pattern at each scan path, classify every point against
/// the two model references, and write the threshold/κ-bound report. An
/// interleaved or fully indecisive scan is a scientific outcome, not a tool
/// failure: the report carries verdict `inconclusive` and the command
/// succeeds.
pub fn cmd_scan(
    config_text: &str,
    out_dir: &Path,
    opts: &CliOptions,
) -> Result<Vec<PathBuf>, CliError> {
    let config = load_config(config_text, opts)?;
    if config.scheme != SimScheme::EnergySingles {
        return Err(config_err(
            "scheme",
            "the threshold scan drives Bob's singles against the spectral filter; use scheme = energy_singles",
        ));
    }
    if config.model.backend != BackendKind::FiniteSpeedCollapse {
        return Err(config_err(
            "model.backend",
            "the scan needs finite_speed_collapse (its weighting and pre_collapse_gamma define \
             the collapsed reference); to scan data with no collapse, set d_tau_m to 0",
        ));
    }
    let analysis = config.analysis.clone().unwrap_or_default();
    let grid = match &analysis.scan_path_s_f_m {
        Some(g) if !g.is_empty() => g.clone(),
        _ => {
            return Err(config_err(
                "analysis.scan_path_s_f_m",
                "the scan needs a non-empty grid of source-to-filter paths",
            ))
        }
    };
    if *grid.last().expect("non-empty") > config.layout.path_s_bd_m {
        return Err(config_err(
            "analysis.scan_path_s_f_m",
            format!(
                "scan paths must not exceed layout.path_s_bd_m = {} (the flight-time margin \
                 would be negative)",
                config.layout.path_s_bd_m
            ),
        ));
    }
    let run = config.build_run()?;
    let model = config.build_model()?;
    let src = match config.build_source()? {
        BuiltSource::Energy(src) => src,
        BuiltSource::Polarization(_) => unreachable!("energy_singles implies an energy source"),
    };
    let filter = config.build_filter(src.grid())?;
    let delays: Vec<f64> = run.delay_schedule.iter().map(|dd| dd.delay_s).collect();

    // References: the unitary singles (filter- and layout-independent), and
    // the collapse-applying singles, forced to apply by evaluating the model
    // at infinite front speed with the filter at the nearest scan position.
    let reference_layout = config
        .build_layout()?
        .with_alice_path_m(Scheme::Energy, grid[0])
        .map_err(|e| config_err("analysis.scan_path_s_f_m", e.to_string()))?;
    let reference_unitary =
        predict_energy_scheme(&PhysicsModel::UnitaryQm, &src, &filter, &reference_layout, &delays)
            .map_err(physics_from_model)?
            .singles_bob;
    let forced_model = match model {
        PhysicsModel::FiniteSpeedCollapse {
            weighting,
            pre_collapse_gamma,
            ..
        } => PhysicsModel::FiniteSpeedCollapse {
            kappa_m_s: f64::INFINITY,
            d_tau_m: f64::INFINITY,
            weighting,
            pre_collapse_gamma,
        },
        PhysicsModel::UnitaryQm => unreachable!("backend checked above"),
    };
    let reference_collapsed =
        predict_energy_scheme(&forced_model, &src, &filter, &reference_layout, &delays)
            .map_err(physics_from_model)?
            .singles_bob;

    let pool = build_pool(opts.threads)?;
    let mut results = Vec::with_capacity(grid.len());
    for (i, &path) in grid.iter().enumerate() {
        let pattern = pool.install(|| {
            simulate_scan_point(&config, &model, &src, &filter, &run, path, i as u64)
        })?;
        results.push((path, pattern));
    }

    let scan = threshold_scan(
        &results,
        &reference_unitary,
        &reference_collapsed,
        analysis.alpha,
        &config.build_layout()?,
    );
    let (verdict, scan_points, outcome): (&str, Vec<ScanPoint>, Option<ScanOutcome>) = match scan
    {
        Ok(ThresholdScanResult {
            scan_points,
            outcome,
        }) => {
            let verdict = match outcome {
                ScanOutcome::Transition { .. } => "transition",
                ScanOutcome::BeyondRangeAbove { .. } => "beyond_range_above",
                ScanOutcome::BeyondRangeBelow { .. } => "beyond_range_below",
            };
            (verdict, scan_points, Some(outcome))
        }
        Err(AnalysisError::NonMonotoneScan { scan_points })
        | Err(AnalysisError::NoDecisivePoints { scan_points }) => {
            ("inconclusive", scan_points, None)
        }
        Err(other) => return Err(map_analysis(other)),
    };

    let report = json!({
        "alpha": analysis.alpha,
        "config": config_value(&config),
        "outcome": outcome
            .map(|o| serde_json::to_value(o).expect("outcome serialization cannot fail"))
            .unwrap_or(Value::Null),
        "scan_points": serde_json::to_value(&scan_points)
            .expect("scan point serialization cannot fail"),
        "schema_version": SCHEMA_VERSION,
        "seed": run.seed,
        "tool_version": tool_version(),
        "verdict": verdict,
    });
    let mut out = OutputSet::new(out_dir);
    out.add("scan_result.json", pretty_json(&report));
    out.commit()
}

/// Plan the event budget: how many events per delay separate the two
/// backends' predictions at the configured significance and power, and what
/// run duration that implies at the configured pair rate.
pub fn cmd_power(
    config_text: &str,
    out_dir: &Path,
    opts: &CliOptions,
) -> Result<Vec<PathBuf>, CliError> {
    let config = load_config(config_text, opts)?;
    if config.model.backend != BackendKind::FiniteSpeedCollapse {
        return Err(config_err(
            "model.backend",
            "sample-size planning compares unitary_qm against the configured \
             finite_speed_collapse variant; set backend = finite_speed_collapse",
        ));
    }
    let delays = required_delays(&config)?;
    let analysis = config.analysis.clone().unwrap_or_default();
    let model = config.build_model()?;
    let layout = config.build_layout()?;

    let (p_unitary, p_collapsed) = match config.build_source()? {
        BuiltSource::Energy(src) => {
            let filter = config.build_filter(src.grid())?;
            let unitary =
                predict_energy_scheme(&PhysicsModel::UnitaryQm, &src, &filter, &layout, &delays)
                    .map_err(physics_from_model)?
                    .singles_bob;
            let collapsed = predict_energy_scheme(&model, &src, &filter, &layout, &delays)
                .map_err(physics_from_model)?
                .singles_bob;
            (unitary, collapsed)
        }
        BuiltSource::Polarization(src) => {
            let unitary =
                predict_polarization_scheme(&PhysicsModel::UnitaryQm, &src, &layout, &delays)
                    .map_err(physics_from_model)?
                    .singles_bob;
            let collapsed = predict_polarization_scheme(&model, &src, &layout, &delays)
                .map_err(physics_from_model)?
                .singles_bob;
            (unitary, collapsed)
        }
    };

    let n = required_samples(&p_unitary, &p_collapsed, analysis.alpha, analysis.power)
        .map_err(map_analysis)?;

    let pair_rate_hz = config.run.as_ref().map(|run| match run.emission.mode {
        crate::config::EmissionKind::Cw => run.emission.pair_rate_hz.unwrap_or(0.0),
        crate::config::EmissionKind::Pulsed => {
            run.emission.pairs_per_pulse_mean.unwrap_or(0.0)
                * run.emission.pulse_rate_hz.unwrap_or(0.0)
        }
    });
    let (n_value, implied_duration): (Value, Value) = match n {
        RequiredSamples::PerDelay(count) => {
            let duration = pair_rate_hz
                .filter(|&r| r > 0.0)
                .map(|r| json!(count as f64 * delays.len() as f64 / r))
                .unwrap_or(Value::Null);
            (json!(count), duration)
        }
        RequiredSamples::Unattainable => (json!("unattainable"), Value::Null),
    };

    let differences: Vec<f64> = p_collapsed
        .values()
        .iter()
        .zip(p_unitary.values())
        .map(|(&c, &u)| c - u)
        .collect();

    let report = json!({
        "alpha": analysis.alpha,
        "config": config_value(&config),
        "delays_s": delays,
        "implied_duration_s": implied_duration,
        "p_collapsed": p_collapsed.values(),
        "p_unitary": p_unitary.values(),
        "pair_rate_hz": pair_rate_hz.map(|r| json!(r)).unwrap_or(Value::Null),
        "per_delay_difference": differences,
        "power": analysis.power,
        "required_samples_per_delay": n_value,
        "schema_version": SCHEMA_VERSION,
        "tool_version": tool_version(),
    });
    let mut out = OutputSet::new(out_dir);
    out.add("power_report.json", pretty_json(&report));
    out.commit()
}
