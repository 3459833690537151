//! Event-level stochastic simulation.
//!
//! `simulate` turns a (scheme, model, source, filter, layout, run plan) into a
//! time-ordered log of detector events: pair emissions from a Poisson (cw) or
//! pulsed process, per-event resolution of Alice's projective element, Bob's
//! interferometer port for every detected photon, efficiency thinning,
//! Gaussian timing jitter, and independent dark-count streams. Downstream
//! operations — coincidence pairing, herald gating, binning — consume only
//! observable record fields; the `hidden_branch` diagnostic tag exists for
//! debugging and is stripped from exported logs unless explicitly requested.
//!
//! Randomness is organized so runs are bit-reproducible and parallelism-proof:
//! every delay block draws from its own counter-based streams (one per
//! purpose), blocks are merged in schedule order, and the final log is sorted
//! by a total order on records.

use crate::biphoton::{Branch, EnergyEntangledSource, PolarizationEntangledSource, Wing};
use crate::geometry::{Layout, Scheme};
use crate::models::{ModelError, PhysicsModel, Weighting};
use crate::spectra::{
    fringe_pattern, FilterProfile, InterferencePattern, PatternKind, SpectraError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonteCarloError {
    #[error("invalid run configuration: {field}: {detail}")]
    ConfigInvalid { field: &'static str, detail: String },
    #[error("incompatible scheme: {0}")]
    IncompatibleScheme(String),
    #[error("log contains no herald records")]
    NoHeralds,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Biphoton(#[from] crate::biphoton::BiphotonError),
}

/// Which experiment the run emulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScheme {
    /// Spectral filter on wing A, coincidence logic between the wings.
    KcCoincidence,
    /// Spectral filter on wing A, Bob records singles only.
    EnergySingles,
    /// Polarizing element on wing A, Bob runs an H/V interferometer.
    Polarization,
    /// Pulsed pump, Bob's photons heralded by the pulse clock.
    Heralded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EmissionMode {
    Cw { pair_rate_hz: f64 },
    Pulsed { pairs_per_pulse_mean: f64, pulse_rate_hz: f64 },
}

/// One stop of the delay scan: Bob's interferometer delay and how long the
/// run dwells there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayDwell {
    pub delay_s: f64,
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub mode: EmissionMode,
    pub duration_s: f64,
    pub detector_efficiency_a: f64,
    pub detector_efficiency_b: f64,
    pub dark_rate_a_hz: f64,
    pub dark_rate_b_hz: f64,
    pub timing_jitter_sigma_s: f64,
    pub coincidence_window_s: f64,
    pub herald_gate_width_s: f64,
    pub delay_schedule: Vec<DelayDwell>,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self, scheme: SimScheme) -> Result<(), MonteCarloError> {
        let invalid = |field: &'static str, detail: String| {
            Err(MonteCarloError::ConfigInvalid { field, detail })
        };
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid("duration_s", format!("must be positive, got {}", self.duration_s));
        }
        if self.delay_schedule.is_empty() {
            return invalid("delay_schedule", "must contain at least one entry".into());
        }
        let mut total_dwell = 0.0;
        for (i, dd) in self.delay_schedule.iter().enumerate() {
            if !(dd.dwell_s.is_finite() && dd.dwell_s > 0.0) {
                return invalid("delay_schedule", format!("dwell {i} must be positive, got {}", dd.dwell_s));
            }
            if !dd.delay_s.is_finite() {
                return invalid("delay_schedule", format!("delay {i} must be finite"));
            }
            if i > 0 && dd.delay_s <= self.delay_schedule[i - 1].delay_s {
                return invalid("delay_schedule", "delays must be strictly increasing".into());
            }
            total_dwell += dd.dwell_s;
        }
        if (total_dwell - self.duration_s).abs() > 1.0e-9 * self.duration_s.max(1.0) {
            return invalid(
                "duration_s",
                format!("must equal the summed dwell times ({total_dwell}), got {}", self.duration_s),
            );
        }
        for (field, v) in [
            ("detector_efficiency_a", self.detector_efficiency_a),
            ("detector_efficiency_b", self.detector_efficiency_b),
        ] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return invalid(field, format!("must be in [0, 1], got {v}"));
            }
        }
        for (field, v) in [
            ("dark_rate_a_hz", self.dark_rate_a_hz),
            ("dark_rate_b_hz", self.dark_rate_b_hz),
            ("timing_jitter_sigma_s", self.timing_jitter_sigma_s),
            ("herald_gate_width_s", self.herald_gate_width_s),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(field, format!("must be non-negative, got {v}"));
            }
        }
        match self.mode {
            EmissionMode::Cw { pair_rate_hz } => {
                if !(pair_rate_hz.is_finite() && pair_rate_hz >= 0.0) {
                    return invalid("pair_rate_hz", format!("must be non-negative, got {pair_rate_hz}"));
                }
                if scheme == SimScheme::Heralded {
                    return Err(MonteCarloError::IncompatibleScheme(
                        "heralded runs need a pulsed pump to supply the herald clock".into(),
                    ));
                }
            }
            EmissionMode::Pulsed { pairs_per_pulse_mean, pulse_rate_hz } => {
                if !(pairs_per_pulse_mean.is_finite() && pairs_per_pulse_mean >= 0.0) {
                    return invalid("pairs_per_pulse_mean", format!("must be non-negative, got {pairs_per_pulse_mean}"));
                }
                if !(pulse_rate_hz.is_finite() && pulse_rate_hz > 0.0) {
                    return invalid("pulse_rate_hz", format!("must be positive, got {pulse_rate_hz}"));
                }
            }
        }
        if scheme == SimScheme::KcCoincidence
            && !(self.coincidence_window_s.is_finite() && self.coincidence_window_s > 0.0)
        {
            return invalid(
                "coincidence_window_s",
                format!("must be positive for coincidence runs, got {}", self.coincidence_window_s),
            );
        }
        if !(self.coincidence_window_s.is_finite() && self.coincidence_window_s >= 0.0) {
            return invalid("coincidence_window_s", format!("must be non-negative, got {}", self.coincidence_window_s));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    DetectedPortPlus,
    DetectedPortMinus,
    AliceTransmitted,
    AliceAbsorbed,
    Herald,
}

impl Outcome {
    fn sort_rank(self) -> u8 {
        match self {
            Outcome::DetectedPortPlus => 0,
            Outcome::DetectedPortMinus => 1,
            Outcome::AliceTransmitted => 2,
            Outcome::AliceAbsorbed => 3,
            Outcome::Herald => 4,
        }
    }

    /// True for records a photon detector produced (excludes the electronic
    /// herald clock).
    pub fn is_detection(self) -> bool {
        self != Outcome::Herald
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    /// Emission index of the pair that caused this record; None for darks
    /// and heralds.
    pub pair_id: Option<u64>,
    pub wing: Wing,
    pub timestamp_s: f64,
    pub outcome: Outcome,
    /// Diagnostic: which Alice branch the model used to set Bob's statistics
    /// for this event. Populated only when a collapse actually applied;
    /// never read by any analysis operation.
    pub hidden_branch: Option<Branch>,
}

fn wing_rank(w: Wing) -> u8 {
    match w {
        Wing::A => 0,
        Wing::B => 1,
    }
}

fn record_order(a: &EventRecord, b: &EventRecord) -> std::cmp::Ordering {
    a.timestamp_s
        .total_cmp(&b.timestamp_s)
        .then_with(|| wing_rank(a.wing).cmp(&wing_rank(b.wing)))
        .then_with(|| match (a.pair_id, b.pair_id) {
            (Some(x), Some(y)) => x.cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        })
        .then_with(|| a.outcome.sort_rank().cmp(&b.outcome.sort_rank()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    /// Sorted by (timestamp, wing, pair id, outcome).
    pub records: Vec<EventRecord>,
    pub config_echo: RunConfig,
    pub model_echo: PhysicsModel,
    pub scheme: SimScheme,
}

/// The source driving a run; borrowed because simulation never mutates it.
#[derive(Debug, Clone, Copy)]
pub enum SimSource<'a> {
    Energy(&'a EnergyEntangledSource),
    Polarization(&'a PolarizationEntangledSource),
}

/// How Bob's port probability is computed for each detected photon.
enum PortStrategy {
    /// `(1 + cos(omega_b * delay)) / 2` from the event's own idler frequency.
    /// Used by the unitary backend, by a collapse front that misses the
    /// detection, and by probability weighting (where conditioning on
    /// Alice's actual branch is the same thing by Bayes' rule).
    PerEventFrequency,
    /// `(1 + V cos(omega * delay)) / 2` with a fixed visibility
    /// (polarization scheme).
    FixedVisibility { visibility: f64, omega: f64 },
    /// Equal-weighting collapse: a fair coin picks one of the two Alice
    /// branches and the photon follows that branch's analytic pattern at the
    /// block's delay. `coin_p_transmitted` degenerates to 0 or 1 when one
    /// branch never occurs.
    BranchPatterns {
        p_plus_transmitted: Vec<f64>,
        p_plus_absorbed: Vec<f64>,
        coin_p_transmitted: f64,
    },
}

#[derive(Clone, Copy, PartialEq)]
enum HiddenMode {
    Off,
    AliceBranch,
    CoinBranch,
}

const PURPOSE_PAIRS: u64 = 0;
const PURPOSE_DARKS_A: u64 = 1;
const PURPOSE_DARKS_B: u64 = 2;

fn stream_rng(seed: u64, block_index: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((block_index as u64) << 3) | purpose);
    rng
}

fn poisson_count(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(lambda).expect("validated positive finite rate");
    dist.sample(rng) as u64
}

struct SimContext<'a> {
    scheme: SimScheme,
    source: SimSource<'a>,
    filter: Option<&'a FilterProfile>,
    run: &'a RunConfig,
    strategy: PortStrategy,
    hidden_mode: HiddenMode,
    jitter: Option<Normal<f64>>,
    block_starts: Vec<f64>,
    /// Outcome a dark count on Alice's wing mimics; None when the scheme has
    /// no photon detector on that wing.
    alice_dark_outcome: Option<Outcome>,
}

impl SimContext<'_> {
    fn stamp(&self, emission_s: f64, rng: &mut ChaCha8Rng) -> f64 {
        let t = match &self.jitter {
            Some(dist) => emission_s + dist.sample(rng),
            None => emission_s,
        };
        t.clamp(0.0, self.run.duration_s)
    }

    fn emit_pair(
        &self,
        block: usize,
        emission_s: f64,
        rng: &mut ChaCha8Rng,
        records: &mut Vec<EventRecord>,
        next_pair_id: &mut u64,
    ) {
        let pair_id = *next_pair_id;
        *next_pair_id += 1;
        let delay = self.run.delay_schedule[block].delay_s;

        match self.source {
            SimSource::Polarization(_) => {
                // Alice's projective polarization measurement: either branch
                // with probability 1/2 for a maximally entangled pair.
                let alice_branch = if rng.gen_bool(0.5) {
                    Branch::Transmitted
                } else {
                    Branch::Absorbed
                };
                if rng.gen_bool(self.run.detector_efficiency_a) {
                    let timestamp_s = self.stamp(emission_s, rng);
                    records.push(EventRecord {
                        pair_id: Some(pair_id),
                        wing: Wing::A,
                        timestamp_s,
                        outcome: Outcome::AliceAbsorbed,
                        hidden_branch: None,
                    });
                }
                if rng.gen_bool(self.run.detector_efficiency_b) {
                    let p_plus = match &self.strategy {
                        PortStrategy::FixedVisibility { visibility, omega } => {
                            0.5 * (1.0 + visibility * (omega * delay).cos())
                        }
                        _ => unreachable!("polarization scheme uses a fixed-visibility strategy"),
                    };
                    let outcome = if rng.gen_bool(p_plus.clamp(0.0, 1.0)) {
                        Outcome::DetectedPortPlus
                    } else {
                        Outcome::DetectedPortMinus
                    };
                    let timestamp_s = self.stamp(emission_s, rng);
                    let hidden_branch = match self.hidden_mode {
                        HiddenMode::Off => None,
                        _ => Some(alice_branch),
                    };
                    records.push(EventRecord {
                        pair_id: Some(pair_id),
                        wing: Wing::B,
                        timestamp_s,
                        outcome,
                        hidden_branch,
                    });
                }
            }
            SimSource::Energy(src) => {
                let pair = src.sample_pair(rng);
                let transmitted = match self.filter {
                    Some(f) => rng.gen_bool(f.transmission_at(pair.omega_a).clamp(0.0, 1.0)),
                    None => true,
                };

                // A-wing detector: behind the filter only (coincidence
                // scheme), or both branches instrumented (singles scheme).
                let alice_instrumented = match self.scheme {
                    SimScheme::KcCoincidence => transmitted,
                    SimScheme::EnergySingles => true,
                    SimScheme::Heralded => self.filter.is_some(),
                    SimScheme::Polarization => unreachable!("checked in simulate"),
                };
                if alice_instrumented && rng.gen_bool(self.run.detector_efficiency_a) {
                    let timestamp_s = self.stamp(emission_s, rng);
                    records.push(EventRecord {
                        pair_id: Some(pair_id),
                        wing: Wing::A,
                        timestamp_s,
                        outcome: if transmitted {
                            Outcome::AliceTransmitted
                        } else {
                            Outcome::AliceAbsorbed
                        },
                        hidden_branch: None,
                    });
                }

                if rng.gen_bool(self.run.detector_efficiency_b) {
                    let (p_plus, coin_branch) = match &self.strategy {
                        PortStrategy::PerEventFrequency => {
                            (0.5 * (1.0 + (pair.omega_b * delay).cos()), None)
                        }
                        PortStrategy::BranchPatterns {
                            p_plus_transmitted,
                            p_plus_absorbed,
                            coin_p_transmitted,
                        } => {
                            let branch = if *coin_p_transmitted >= 1.0 {
                                Branch::Transmitted
                            } else if *coin_p_transmitted <= 0.0 {
                                Branch::Absorbed
                            } else if rng.gen_bool(*coin_p_transmitted) {
                                Branch::Transmitted
                            } else {
                                Branch::Absorbed
                            };
                            let p = match branch {
                                Branch::Transmitted => p_plus_transmitted[block],
                                Branch::Absorbed => p_plus_absorbed[block],
                            };
                            (p, Some(branch))
                        }
                        PortStrategy::FixedVisibility { .. } => {
                            unreachable!("energy schemes never use a fixed visibility")
                        }
                    };
                    let outcome = if rng.gen_bool(p_plus.clamp(0.0, 1.0)) {
                        Outcome::DetectedPortPlus
                    } else {
                        Outcome::DetectedPortMinus
                    };
                    let timestamp_s = self.stamp(emission_s, rng);
                    let hidden_branch = match self.hidden_mode {
                        HiddenMode::Off => None,
                        HiddenMode::AliceBranch => Some(if transmitted {
                            Branch::Transmitted
                        } else {
                            Branch::Absorbed
                        }),
                        HiddenMode::CoinBranch => coin_branch,
                    };
                    records.push(EventRecord {
                        pair_id: Some(pair_id),
                        wing: Wing::B,
                        timestamp_s,
                        outcome,
                        hidden_branch,
                    });
                }
            }
        }
    }

    fn run_block(&self, block: usize) -> (Vec<EventRecord>, u64) {
        let dd = self.run.delay_schedule[block];
        let t0 = self.block_starts[block];
        let t1 = if block + 1 < self.block_starts.len() {
            self.block_starts[block + 1]
        } else {
            self.run.duration_s
        };
        let mut records = Vec::new();
        let mut next_pair_id = 0u64;

        let mut rng = stream_rng(self.run.seed, block, PURPOSE_PAIRS);
        match self.run.mode {
            EmissionMode::Cw { pair_rate_hz } => {
                let n = poisson_count(&mut rng, pair_rate_hz * dd.dwell_s);
                for _ in 0..n {
                    let t = t0 + dd.dwell_s * rng.gen::<f64>();
                    self.emit_pair(block, t, &mut rng, &mut records, &mut next_pair_id);
                }
            }
            EmissionMode::Pulsed { pairs_per_pulse_mean, pulse_rate_hz } => {
                let mut k = (t0 * pulse_rate_hz).ceil() as u64;
                loop {
                    let pulse_t = k as f64 / pulse_rate_hz;
                    if pulse_t >= t1 {
                        break;
                    }
                    // The pulse clock is electronic: exact time, every pulse.
                    records.push(EventRecord {
                        pair_id: None,
                        wing: Wing::A,
                        timestamp_s: pulse_t,
                        outcome: Outcome::Herald,
                        hidden_branch: None,
                    });
                    let n = poisson_count(&mut rng, pairs_per_pulse_mean);
                    for _ in 0..n {
                        self.emit_pair(block, pulse_t, &mut rng, &mut records, &mut next_pair_id);
                    }
                    k += 1;
                }
            }
        }

        if let Some(outcome) = self.alice_dark_outcome {
            let mut rng = stream_rng(self.run.seed, block, PURPOSE_DARKS_A);
            let n = poisson_count(&mut rng, self.run.dark_rate_a_hz * dd.dwell_s);
            for _ in 0..n {
                let t = t0 + dd.dwell_s * rng.gen::<f64>();
                records.push(EventRecord {
                    pair_id: None,
                    wing: Wing::A,
                    timestamp_s: t,
                    outcome,
                    hidden_branch: None,
                });
            }
        }
        {
            let mut rng = stream_rng(self.run.seed, block, PURPOSE_DARKS_B);
            let n = poisson_count(&mut rng, self.run.dark_rate_b_hz * dd.dwell_s);
            for _ in 0..n {
                let t = t0 + dd.dwell_s * rng.gen::<f64>();
                let outcome = if rng.gen_bool(0.5) {
                    Outcome::DetectedPortPlus
                } else {
                    Outcome::DetectedPortMinus
                };
                records.push(EventRecord {
                    pair_id: None,
                    wing: Wing::B,
                    timestamp_s: t,
                    outcome,
                    hidden_branch: None,
                });
            }
        }

        (records, next_pair_id)
    }
}

/// Geometry scheme seen by the collapse predicate: which projective element
/// sits on Alice's wing. Once scheme/source compatibility holds, the source
/// family decides (heralded runs keep their source's wing-A element).
fn geometry_scheme(source: SimSource<'_>) -> Scheme {
    match source {
        SimSource::Polarization(_) => Scheme::Polarization,
        SimSource::Energy(_) => Scheme::Energy,
    }
}

/// Run the full event-level simulation. Deterministic in `run.seed`;
/// independent of thread count.
pub fn simulate(
    scheme: SimScheme,
    model: &PhysicsModel,
    source: SimSource<'_>,
    filter: Option<&FilterProfile>,
    layout: &Layout,
    run: &RunConfig,
) -> Result<EventLog, MonteCarloError> {
    run.validate(scheme)?;
    model.validate()?;

    match (scheme, source) {
        // Heralding is a timing overlay, so it accepts either source family.
        (SimScheme::Polarization | SimScheme::Heralded, SimSource::Polarization(_)) => {
            if filter.is_some() {
                return Err(MonteCarloError::IncompatibleScheme(
                    "a polarization-entangled source has no spectral filter; Alice's element is the projective measurement itself".into(),
                ));
            }
        }
        (SimScheme::Polarization, SimSource::Energy(_)) => {
            return Err(MonteCarloError::IncompatibleScheme(
                "the polarization scheme needs a polarization-entangled source".into(),
            ));
        }
        (_, SimSource::Polarization(_)) => {
            return Err(MonteCarloError::IncompatibleScheme(
                "spectral schemes need an energy-entangled source".into(),
            ));
        }
        (_, SimSource::Energy(_)) => {}
    }

    let collapse_applies = model.collapse_applies(layout, geometry_scheme(source))?;
    let delays: Vec<f64> = run.delay_schedule.iter().map(|dd| dd.delay_s).collect();

    let strategy = match source {
        SimSource::Polarization(src) => PortStrategy::FixedVisibility {
            visibility: crate::models::polarization_visibility(model, collapse_applies),
            omega: src.center_omega(),
        },
        SimSource::Energy(src) => {
            let equal_weighting = matches!(
                model,
                PhysicsModel::FiniteSpeedCollapse { weighting: Weighting::Equal, .. }
            );
            if collapse_applies && equal_weighting {
                let transparent;
                let f = match filter {
                    Some(f) => f,
                    None => {
                        transparent = FilterProfile::uniform(src.grid().clone(), 1.0)?;
                        &transparent
                    }
                };
                let (s_t, s_a) = src.conditional_branches(f)?;
                let (w_t, w_a) = (s_t.total_weight(), s_a.total_weight());
                if w_t == 0.0 && w_a == 0.0 {
                    return Err(MonteCarloError::Spectra(SpectraError::EmptySpectrum));
                }
                let flat = vec![0.5; delays.len()];
                let p_plus_transmitted = if w_t > 0.0 {
                    fringe_pattern(&s_t, &delays)?.values().to_vec()
                } else {
                    flat.clone()
                };
                let p_plus_absorbed = if w_a > 0.0 {
                    fringe_pattern(&s_a, &delays)?.values().to_vec()
                } else {
                    flat
                };
                let coin_p_transmitted = if w_t == 0.0 {
                    0.0
                } else if w_a == 0.0 {
                    1.0
                } else {
                    0.5
                };
                PortStrategy::BranchPatterns {
                    p_plus_transmitted,
                    p_plus_absorbed,
                    coin_p_transmitted,
                }
            } else {
                PortStrategy::PerEventFrequency
            }
        }
    };

    let hidden_mode = if !collapse_applies {
        HiddenMode::Off
    } else {
        match (source, model) {
            (SimSource::Polarization(_), _) => HiddenMode::AliceBranch,
            (_, PhysicsModel::FiniteSpeedCollapse { weighting: Weighting::Equal, .. }) => {
                HiddenMode::CoinBranch
            }
            _ => HiddenMode::AliceBranch,
        }
    };

    let jitter = if run.timing_jitter_sigma_s > 0.0 {
        Some(Normal::new(0.0, run.timing_jitter_sigma_s).expect("validated jitter"))
    } else {
        None
    };

    let mut block_starts = Vec::with_capacity(run.delay_schedule.len());
    let mut acc = 0.0;
    for dd in &run.delay_schedule {
        block_starts.push(acc);
        acc += dd.dwell_s;
    }

    let alice_dark_outcome = match (scheme, source) {
        (SimScheme::Polarization, _) | (SimScheme::Heralded, SimSource::Polarization(_)) => {
            Some(Outcome::AliceAbsorbed)
        }
        (SimScheme::Heralded, SimSource::Energy(_)) if filter.is_none() => None,
        _ => Some(Outcome::AliceTransmitted),
    };

    let ctx = SimContext {
        scheme,
        source,
        filter,
        run,
        strategy,
        hidden_mode,
        jitter,
        block_starts,
        alice_dark_outcome,
    };

    let mut blocks: Vec<(Vec<EventRecord>, u64)> = (0..run.delay_schedule.len())
        .into_par_iter()
        .map(|b| ctx.run_block(b))
        .collect();

    // Renumber pair ids so they are globally unique and ordered by block.
    let mut offset = 0u64;
    for (records, n_pairs) in &mut blocks {
        for r in records.iter_mut() {
            if let Some(id) = r.pair_id.as_mut() {
                *id += offset;
            }
        }
        offset += *n_pairs;
    }

    let mut records: Vec<EventRecord> = blocks.into_iter().flat_map(|(r, _)| r).collect();
    records.sort_by(record_order);

    Ok(EventLog {
        records,
        config_echo: run.clone(),
        model_echo: *model,
        scheme,
    })
}

/// Greedy nearest-neighbor coincidence logic: walk B-wing detections in time
/// order, pair each with the closest not-yet-used A-wing detection within
/// ±window/2. Accidental pairs from darks or cross-pair matches are kept —
/// they are part of the physics.
pub fn coincidence_pairs(log: &EventLog, window_s: f64) -> Vec<(EventRecord, EventRecord)> {
    let a_records: Vec<&EventRecord> = log
        .records
        .iter()
        .filter(|r| {
            r.wing == Wing::A
                && matches!(r.outcome, Outcome::AliceTransmitted | Outcome::AliceAbsorbed)
        })
        .collect();
    let b_records = log
        .records
        .iter()
        .filter(|r| {
            r.wing == Wing::B
                && matches!(r.outcome, Outcome::DetectedPortPlus | Outcome::DetectedPortMinus)
        });

    let half = window_s / 2.0;
    let mut used = vec![false; a_records.len()];
    let mut pairs = Vec::new();
    for b in b_records {
        // Nearest A by timestamp: start at the insertion point and expand.
        let start = a_records.partition_point(|a| a.timestamp_s < b.timestamp_s);
        let mut best: Option<(usize, f64)> = None;
        // Candidates at or after b.
        for (i, a) in a_records.iter().enumerate().skip(start) {
            let dt = (a.timestamp_s - b.timestamp_s).abs();
            if dt > half {
                break;
            }
            if !used[i] {
                best = Some((i, dt));
                break;
            }
        }
        // Candidates before b; may beat the forward match.
        for i in (0..start).rev() {
            let dt = (b.timestamp_s - a_records[i].timestamp_s).abs();
            if dt > half {
                break;
            }
            if used[i] {
                continue;
            }
            match best {
                Some((_, best_dt)) if best_dt <= dt => {}
                _ => best = Some((i, dt)),
            }
            break;
        }
        if let Some((i, _)) = best {
            used[i] = true;
            pairs.push((*a_records[i], *b));
        }
    }
    pairs
}

/// Keep only B-wing records that fall within ±gate_width/2 of a herald.
pub fn herald_gate(log: &EventLog, gate_width_s: f64) -> Result<EventLog, MonteCarloError> {
    if !(gate_width_s.is_finite() && gate_width_s >= 0.0) {
        return Err(MonteCarloError::ConfigInvalid {
            field: "herald_gate_width_s",
            detail: format!("must be non-negative, got {gate_width_s}"),
        });
    }
    let herald_times: Vec<f64> = log
        .records
        .iter()
        .filter(|r| r.outcome == Outcome::Herald)
        .map(|r| r.timestamp_s)
        .collect();
    if herald_times.is_empty() {
        return Err(MonteCarloError::NoHeralds);
    }
    let half = gate_width_s / 2.0;
    let records = log
        .records
        .iter()
        .filter(|r| {
            if r.wing != Wing::B {
                return false;
            }
            let i = herald_times.partition_point(|&h| h < r.timestamp_s);
            let after = herald_times.get(i).map(|&h| (h - r.timestamp_s).abs());
            let before = i
                .checked_sub(1)
                .and_then(|j| herald_times.get(j))
                .map(|&h| (r.timestamp_s - h).abs());
            [before, after].iter().flatten().any(|&dt| dt <= half)
        })
        .copied()
        .collect();
    Ok(EventLog {
        records,
        config_echo: log.config_echo.clone(),
        model_echo: log.model_echo,
        scheme: log.scheme,
    })
}

/// A binned pattern plus the per-bin empty flags (a zero-count bin is
/// reported, not fatal).
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedPattern {
    pub pattern: InterferencePattern,
    pub empty_bins: Vec<bool>,
}

fn bin_edges(schedule: &[DelayDwell]) -> Vec<f64> {
    let mut edges = Vec::with_capacity(schedule.len() + 1);
    let mut acc = 0.0;
    edges.push(0.0);
    for dd in schedule {
        acc += dd.dwell_s;
        edges.push(acc);
    }
    edges
}

fn bin_index(edges: &[f64], t: f64) -> usize {
    let raw = edges.partition_point(|&e| e <= t);
    raw.saturating_sub(1).min(edges.len() - 2)
}

fn counts_to_pattern(
    schedule: &[DelayDwell],
    counts: &[u64],
) -> Result<BinnedPattern, MonteCarloError> {
    let delays: Vec<f64> = schedule.iter().map(|dd| dd.delay_s).collect();
    let mut values = Vec::with_capacity(schedule.len());
    let mut errors = Vec::with_capacity(schedule.len());
    let mut empty_bins = Vec::with_capacity(schedule.len());
    for (dd, &k) in schedule.iter().zip(counts) {
        empty_bins.push(k == 0);
        values.push(k as f64 / dd.dwell_s);
        errors.push((k as f64).sqrt() / dd.dwell_s);
    }
    let pattern = InterferencePattern::new(PatternKind::Rate, delays, values, errors)?;
    Ok(BinnedPattern { pattern, empty_bins })
}

/// Bob's plus-port singles rate per delay bin, with Poisson errors.
pub fn bin_pattern(
    log: &EventLog,
    schedule: &[DelayDwell],
) -> Result<BinnedPattern, MonteCarloError> {
    let edges = bin_edges(schedule);
    let mut counts = vec![0u64; schedule.len()];
    for r in &log.records {
        if r.wing == Wing::B && r.outcome == Outcome::DetectedPortPlus {
            counts[bin_index(&edges, r.timestamp_s)] += 1;
        }
    }
    counts_to_pattern(schedule, &counts)
}

/// Coincidence rate (A detection & Bob plus-port) per delay bin.
pub fn bin_coincidence_pattern(
    pairs: &[(EventRecord, EventRecord)],
    schedule: &[DelayDwell],
) -> Result<BinnedPattern, MonteCarloError> {
    let edges = bin_edges(schedule);
    let mut counts = vec![0u64; schedule.len()];
    for (_, b) in pairs {
        if b.outcome == Outcome::DetectedPortPlus {
            counts[bin_index(&edges, b.timestamp_s)] += 1;
        }
    }
    counts_to_pattern(schedule, &counts)
}

/// Per-delay estimate of Bob's plus-port probability from the two-port
/// count split, with the binomial standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct PortProbabilityBins {
    pub delays_s: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Total two-port counts per bin; a zero means the bin was empty and its
    /// probability entry is meaningless.
    pub counts: Vec<u64>,
}

pub fn bin_port_probability(log: &EventLog, schedule: &[DelayDwell]) -> PortProbabilityBins {
    let edges = bin_edges(schedule);
    let mut plus = vec![0u64; schedule.len()];
    let mut total = vec![0u64; schedule.len()];
    for r in &log.records {
        if r.wing != Wing::B {
            continue;
        }
        match r.outcome {
            Outcome::DetectedPortPlus => {
                let i = bin_index(&edges, r.timestamp_s);
                plus[i] += 1;
                total[i] += 1;
            }
            Outcome::DetectedPortMinus => {
                total[bin_index(&edges, r.timestamp_s)] += 1;
            }
            _ => {}
        }
    }
    let mut p_plus = Vec::with_capacity(schedule.len());
    let mut sigma = Vec::with_capacity(schedule.len());
    for i in 0..schedule.len() {
        if total[i] == 0 {
            p_plus.push(0.0);
            sigma.push(0.0);
        } else {
            let p = plus[i] as f64 / total[i] as f64;
            p_plus.push(p);
            sigma.push((p * (1.0 - p) / total[i] as f64).sqrt());
        }
    }
    PortProbabilityBins {
        delays_s: schedule.iter().map(|dd| dd.delay_s).collect(),
        p_plus,
        sigma,
        counts: total,
    }
}

/// Split Bob's detections into pair-caused ("signal") and dark ("noise")
/// counts using the pair-id bookkeeping.
pub fn count_signal_noise(records: &[EventRecord]) -> (u64, u64) {
    let mut signal = 0;
    let mut noise = 0;
    for r in records {
        if r.wing == Wing::B
            && matches!(r.outcome, Outcome::DetectedPortPlus | Outcome::DetectedPortMinus)
        {
            if r.pair_id.is_some() {
                signal += 1;
            } else {
                noise += 1;
            }
        }
    }
    (signal, noise)
}
