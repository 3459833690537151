//! Statistics on patterns and logs: fringe-visibility estimation, chi-square
//! pattern comparison, the threshold scan over Alice's element distance with
//! the recovered collapse-speed bound, and sample-size planning for the
//! model-discrimination test.

use crate::geometry::{kappa, tau_of_flight, GeometryError, Layout};
use crate::spectra::InterferencePattern;
use crate::stats;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("pattern has too few points ({got})")]
    TooFewPoints { got: usize },
    #[error("patterns are not on the same delay grid")]
    GridMismatch,
    #[error("{name} must lie strictly inside (0, 1), got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("scan points must be sorted by strictly increasing path")]
    ScanGridNotSorted,
    #[error("the two reference patterns are identical; no classification is possible")]
    IdenticalReferences,
    #[error("no scan point could be classified either way")]
    NoDecisivePoints { scan_points: Vec<ScanPoint> },
    #[error("scan classifications are interleaved; no threshold can be claimed")]
    NonMonotoneScan { scan_points: Vec<ScanPoint> },
    #[error("sample-size planning needs probability-form patterns")]
    NotProbabilityPatterns,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    CosineFit,
    Minmax,
}

/// Fringe visibility with its standard error. `v` is clamped to [0, 1];
/// `clamped` records that the raw estimate fell outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisibilityEstimate {
    pub v: f64,
    pub sigma_v: f64,
    pub method: FitMethod,
    pub clamped: bool,
}

fn minmax_estimate(p: &InterferencePattern) -> VisibilityEstimate {
    let values = p.values();
    let errors = p.errors();
    let (mut i_max, mut i_min) = (0usize, 0usize);
    for i in 1..values.len() {
        if values[i] > values[i_max] {
            i_max = i;
        }
        if values[i] < values[i_min] {
            i_min = i;
        }
    }
    let (hi, lo) = (values[i_max], values[i_min]);
    let total = hi + lo;
    if total == 0.0 {
        return VisibilityEstimate { v: 0.0, sigma_v: 0.0, method: FitMethod::Minmax, clamped: false };
    }
    let v = (hi - lo) / total;
    // Delta method on (hi - lo)/(hi + lo) with independent bin errors.
    let d_hi = 2.0 * lo / (total * total);
    let d_lo = 2.0 * hi / (total * total);
    let sigma_v = ((d_hi * errors[i_max]).powi(2) + (d_lo * errors[i_min]).powi(2)).sqrt();
    VisibilityEstimate { v, sigma_v, method: FitMethod::Minmax, clamped: false }
}

/// Estimate the fringe visibility of a pattern whose fringe frequency is
/// known (the simulator always knows the center frequency; it is not fitted).
///
/// Patterns with at least 5 points spanning at least one fringe period get a
/// weighted least-squares fit of `a (1 + v cos(freq * tau + phase))`; anything
/// shorter — and any fit that turns out singular — falls back to the
/// max/min contrast, flagged through `method`. Zero-error points (empty bins)
/// are excluded from a weighted fit; a pattern with no errors at all is fit
/// unweighted and reported noise-free.
pub fn estimate_visibility(
    p: &InterferencePattern,
    center_freq_rad_s: f64,
) -> Result<VisibilityEstimate, AnalysisError> {
    if !(center_freq_rad_s.is_finite() && center_freq_rad_s > 0.0) {
        return Err(AnalysisError::InvalidParameter {
            name: "center_freq_rad_s",
            value: center_freq_rad_s,
        });
    }
    if p.is_empty() {
        return Err(AnalysisError::TooFewPoints { got: 0 });
    }
    let values = p.values();
    if values.iter().all(|&v| v == values[0]) {
        // Flat pattern: zero visibility by definition, error from the bins.
        let mm = minmax_estimate(p);
        return Ok(VisibilityEstimate { v: 0.0, ..mm });
    }

    let period = 2.0 * std::f64::consts::PI / center_freq_rad_s;
    let span = p.delays().last().unwrap() - p.delays().first().unwrap();
    if p.len() < 5 || span < period {
        return Ok(minmax_estimate(p));
    }

    let noise_free = p.errors().iter().all(|&e| e == 0.0);
    let mut delays = Vec::with_capacity(p.len());
    let mut vals = Vec::with_capacity(p.len());
    let mut weights = Vec::with_capacity(p.len());
    for (i, &e) in p.errors().iter().enumerate() {
        if noise_free {
            delays.push(p.delays()[i]);
            vals.push(values[i]);
            weights.push(1.0);
        } else if e > 0.0 {
            delays.push(p.delays()[i]);
            vals.push(values[i]);
            weights.push(1.0 / (e * e));
        }
        // Mixed case: zero-error points are empty bins, skipped.
    }
    if delays.len() < 5 {
        return Ok(minmax_estimate(p));
    }

    let fit = match stats::weighted_cosine_fit(&delays, &vals, &weights, center_freq_rad_s) {
        Some(fit) if fit.a > 0.0 => fit,
        _ => return Ok(minmax_estimate(p)),
    };
    let r = (fit.b * fit.b + fit.c * fit.c).sqrt();
    let v_raw = r / fit.a;
    let sigma_v = if noise_free {
        0.0
    } else if r == 0.0 {
        (fit.cov[1][1] + fit.cov[2][2]).max(0.0).sqrt() / fit.a
    } else {
        // Delta method on v = sqrt(b^2 + c^2)/a.
        let g = [-r / (fit.a * fit.a), fit.b / (r * fit.a), fit.c / (r * fit.a)];
        let mut var = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                var += g[i] * fit.cov[i][j] * g[j];
            }
        }
        var.max(0.0).sqrt()
    };
    let clamped = v_raw > 1.0;
    Ok(VisibilityEstimate {
        v: v_raw.clamp(0.0, 1.0),
        sigma_v,
        method: FitMethod::CosineFit,
        clamped,
    })
}

/// Pearson comparison of two patterns on the same delay grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatternComparison {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Bins where both patterns report zero error; they carry no statistical
    /// weight and are left out of chi2 and dof.
    pub excluded_bins: usize,
}

/// Chi-square test of the per-delay differences, normalized by the combined
/// errors. Bins with zero combined error are excluded (and counted) when the
/// values agree exactly; a zero-error bin with disagreeing values is an
/// immediate contradiction (p = 0).
pub fn compare_patterns(
    p1: &InterferencePattern,
    p2: &InterferencePattern,
) -> Result<PatternComparison, AnalysisError> {
    if p1.len() != p2.len() || p1.delays() != p2.delays() {
        return Err(AnalysisError::GridMismatch);
    }
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    let mut excluded = 0usize;
    for i in 0..p1.len() {
        let diff = p1.values()[i] - p2.values()[i];
        let var = p1.errors()[i].powi(2) + p2.errors()[i].powi(2);
        if var == 0.0 {
            if diff != 0.0 {
                return Ok(PatternComparison {
                    chi2: f64::INFINITY,
                    dof: p1.len(),
                    p_value: 0.0,
                    excluded_bins: excluded,
                });
            }
            excluded += 1;
            continue;
        }
        chi2 += diff * diff / var;
        dof += 1;
    }
    let p_value = if dof == 0 { 1.0 } else { stats::chi2_survival(chi2, dof) };
    Ok(PatternComparison { chi2, dof, p_value, excluded_bins: excluded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Collapsed,
    Unitary,
    Inconclusive,
}

/// One classified stop of the element-distance scan. `p_value` is the
/// goodness-of-fit probability of the measured pattern against the unitary
/// reference (the no-collapse null).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub path_s_f_m: f64,
    pub decision: Decision,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanOutcome {
    /// A collapsed-to-unitary transition inside the scanned range. The
    /// threshold is the midpoint of the grid points still compatible with
    /// "collapse seen" (the predicate is boundary-inclusive, so the last
    /// collapsed point itself is a candidate), with the half-gap to the first
    /// unitary point as uncertainty.
    Transition {
        threshold_m: f64,
        uncertainty_m: f64,
        tau_s: f64,
        kappa_lower_bound_m_s: f64,
    },
    /// Collapse visible at every classified point: the threshold lies beyond
    /// the top of the grid and only a speed lower bound follows.
    BeyondRangeAbove { kappa_lower_bound_m_s: f64 },
    /// Unitary at every classified point: the threshold (if the model holds
    /// at all) lies below the grid and only a speed upper bound follows.
    BeyondRangeBelow { kappa_upper_bound_m_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdScanResult {
    pub scan_points: Vec<ScanPoint>,
    pub outcome: ScanOutcome,
}

/// Classify each scan point against the two model references and extract the
/// threshold distance, the collapse time of flight, and the speed bound.
///
/// A point is `Collapsed` when it rejects the unitary reference at level
/// `alpha` while remaining consistent with the collapsed one, `Unitary` in
/// the mirrored case, and `Inconclusive` otherwise (consistent with both, or
/// with neither). A unitary-classified point below a collapsed-classified one
/// is an interleaving: `NonMonotoneScan`, carrying the per-point table for
/// reporting.
pub fn threshold_scan(
    results: &[(f64, InterferencePattern)],
    reference_unitary: &InterferencePattern,
    reference_collapsed: &InterferencePattern,
    alpha: f64,
    layout: &Layout,
) -> Result<ThresholdScanResult, AnalysisError> {
    if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
        return Err(AnalysisError::InvalidParameter { name: "alpha", value: alpha });
    }
    if results.is_empty() {
        return Err(AnalysisError::TooFewPoints { got: 0 });
    }
    if results
        .windows(2)
        .any(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(AnalysisError::ScanGridNotSorted);
    }
    if reference_unitary.delays() == reference_collapsed.delays()
        && reference_unitary.values() == reference_collapsed.values()
    {
        return Err(AnalysisError::IdenticalReferences);
    }

    let mut scan_points = Vec::with_capacity(results.len());
    for (path, pattern) in results {
        let vs_unitary = compare_patterns(pattern, reference_unitary)?;
        let vs_collapsed = compare_patterns(pattern, reference_collapsed)?;
        let (p_u, p_c) = (vs_unitary.p_value, vs_collapsed.p_value);
        let decision = if p_u < alpha && p_c >= alpha {
            Decision::Collapsed
        } else if p_c < alpha && p_u >= alpha {
            Decision::Unitary
        } else {
            Decision::Inconclusive
        };
        scan_points.push(ScanPoint { path_s_f_m: *path, decision, p_value: p_u });
    }

    let last_collapsed = scan_points.iter().rposition(|sp| sp.decision == Decision::Collapsed);
    let first_unitary = scan_points.iter().position(|sp| sp.decision == Decision::Unitary);

    let path_bd = layout.path_s_bd_m;
    let dist = layout.dist_f_bd_m;
    let c = layout.light_speed_m_s;

    let outcome = match (last_collapsed, first_unitary) {
        (Some(lc), Some(fu)) => {
            if fu < lc {
                return Err(AnalysisError::NonMonotoneScan { scan_points });
            }
            // Candidate thresholds: every grid point from the last collapsed
            // one up to (but excluding) the first unitary one.
            let low = results[lc].0;
            let high_inclusive = results[fu - 1].0;
            let threshold_m = 0.5 * (low + high_inclusive);
            let uncertainty_m = 0.5 * (results[fu].0 - low);
            let tau_s = tau_of_flight(path_bd, threshold_m, c)?;
            let kappa_lower_bound_m_s = kappa(dist, tau_s)?;
            ScanOutcome::Transition { threshold_m, uncertainty_m, tau_s, kappa_lower_bound_m_s }
        }
        (Some(lc), None) => {
            let tau = tau_of_flight(path_bd, results[lc].0, c)?;
            ScanOutcome::BeyondRangeAbove { kappa_lower_bound_m_s: kappa(dist, tau)? }
        }
        (None, Some(fu)) => {
            let tau = tau_of_flight(path_bd, results[fu].0, c)?;
            ScanOutcome::BeyondRangeBelow { kappa_upper_bound_m_s: kappa(dist, tau)? }
        }
        (None, None) => return Err(AnalysisError::NoDecisivePoints { scan_points }),
    };

    Ok(ThresholdScanResult { scan_points, outcome })
}

/// Sample size needed per delay point, or a report that no amount of data
/// can separate the hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequiredSamples {
    PerDelay(u64),
    Unattainable,
}

impl Serialize for RequiredSamples {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            RequiredSamples::PerDelay(n) => serializer.serialize_u64(*n),
            RequiredSamples::Unattainable => serializer.serialize_str("unattainable"),
        }
    }
}

/// Smallest per-delay event count N at which a level-`alpha` chi-square test
/// of the two-port counts against the unitary pattern rejects with the
/// requested power when the collapsed pattern is true.
///
/// Per delay j, N events split binomially between Bob's ports; the Pearson
/// statistic against the unitary probabilities is chi-square with one degree
/// of freedom per usable delay and noncentrality
/// `N * sum_j (p_c_j - p_u_j)^2 / (p_u_j (1 - p_u_j))` under the alternative.
/// Delays where the unitary probability is exactly 0 or 1 have no binomial
/// variance and are excluded from the statistic.
pub fn required_samples(
    p_unitary: &InterferencePattern,
    p_collapsed: &InterferencePattern,
    alpha: f64,
    power: f64,
) -> Result<RequiredSamples, AnalysisError> {
    for (name, value) in [("alpha", alpha), ("power", power)] {
        if !(value.is_finite() && 0.0 < value && value < 1.0) {
            return Err(AnalysisError::InvalidParameter { name, value });
        }
    }
    if p_unitary.len() != p_collapsed.len() || p_unitary.delays() != p_collapsed.delays() {
        return Err(AnalysisError::GridMismatch);
    }
    use crate::spectra::PatternKind;
    if p_unitary.kind() != PatternKind::Probability || p_collapsed.kind() != PatternKind::Probability {
        return Err(AnalysisError::NotProbabilityPatterns);
    }

    let mut unit_noncentrality = 0.0;
    let mut dof = 0usize;
    for i in 0..p_unitary.len() {
        let pu = p_unitary.values()[i];
        let var = pu * (1.0 - pu);
        if var == 0.0 {
            continue;
        }
        let diff = p_collapsed.values()[i] - pu;
        unit_noncentrality += diff * diff / var;
        dof += 1;
    }
    if dof == 0 || unit_noncentrality == 0.0 {
        return Ok(RequiredSamples::Unattainable);
    }
    let lambda = stats::lambda_for_power(dof, alpha, power);
    let n = (lambda / unit_noncentrality).ceil().max(1.0);
    Ok(RequiredSamples::PerDelay(n as u64))
}
