//! The two physics backends.
//!
//! `UnitaryQm` is standard quantum mechanics: Bob's singles pattern is the
//! fringe of his unconditioned marginal spectrum no matter what Alice's filter
//! or the layout look like (no-signaling), and the polarization singles of a
//! maximally entangled pair are flat.
//!
//! `FiniteSpeedCollapse` is the parametric alternative: a projective element
//! on Alice's side launches a collapse front that travels to Bob's detector at
//! speed `kappa_m_s`, but only if the element sits within the threshold
//! distance `d_tau_m` of the source. When the front arrives before detection,
//! Bob's pattern becomes an addition of the two Alice-branch patterns —
//! weighted by the branch probabilities (`Weighting::Probability`, which is
//! provably indistinguishable from unitary QM) or equally
//! (`Weighting::Equal`, the reading that makes the model testable).

use crate::biphoton::{BiphotonError, EnergyEntangledSource, PolarizationEntangledSource, Wing};
use crate::geometry::{
    collapse_arrival_vs_detection, ordering, GeometryError, Layout, OrderingVerdict, Scheme,
};
use crate::spectra::{
    fringe_pattern, fringe_rate_pattern, FilterProfile, InterferencePattern, PatternKind,
    SpectraError, Spectrum,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} must satisfy {requirement}, got {value:e}")]
    InvalidModelParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Biphoton(#[from] BiphotonError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How the collapse backend adds the two Alice-branch patterns when the
/// collapse front reaches Bob in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Branches weighted by their quantum probabilities. Equivalent to
    /// unitary QM by linearity of the interferogram — kept to demonstrate
    /// that probability-weighted addition cannot signal.
    Probability,
    /// Branches weighted 1/2 each regardless of their probabilities — the
    /// literal "addition of the two patterns" reading, and the only mode in
    /// which the collapse backend predicts anything new.
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhysicsModel {
    UnitaryQm,
    FiniteSpeedCollapse {
        /// Propagation speed of the collapse front in m/s; may be infinite.
        kappa_m_s: f64,
        /// Threshold source-to-element distance in meters beyond which the
        /// element generates no effect at Bob; may be infinite.
        d_tau_m: f64,
        weighting: Weighting,
        /// H/V coherence Bob's photon retains when measured before the
        /// collapse front arrives (polarization scheme only).
        pre_collapse_gamma: f64,
    },
}

impl PhysicsModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        if let PhysicsModel::FiniteSpeedCollapse {
            kappa_m_s,
            d_tau_m,
            pre_collapse_gamma,
            ..
        } = *self
        {
            if kappa_m_s.is_nan() || kappa_m_s <= 0.0 {
                return Err(ModelError::InvalidModelParameter {
                    name: "kappa_m_s",
                    requirement: "> 0 (possibly infinite)",
                    value: kappa_m_s,
                });
            }
            if d_tau_m.is_nan() || d_tau_m < 0.0 {
                return Err(ModelError::InvalidModelParameter {
                    name: "d_tau_m",
                    requirement: ">= 0 (possibly infinite)",
                    value: d_tau_m,
                });
            }
            if !pre_collapse_gamma.is_finite() || !(0.0..=1.0).contains(&pre_collapse_gamma) {
                return Err(ModelError::InvalidModelParameter {
                    name: "pre_collapse_gamma",
                    requirement: "in [0, 1]",
                    value: pre_collapse_gamma,
                });
            }
        }
        Ok(())
    }

    /// Whether the collapse front from Alice's projective element reaches
    /// Bob's detector in time, for this model over the given layout.
    /// Always false for the unitary backend.
    pub fn collapse_applies(&self, layout: &Layout, scheme: Scheme) -> Result<bool, ModelError> {
        match *self {
            PhysicsModel::UnitaryQm => Ok(false),
            PhysicsModel::FiniteSpeedCollapse {
                kappa_m_s, d_tau_m, ..
            } => Ok(collapse_arrival_vs_detection(
                layout, scheme, kappa_m_s, d_tau_m,
            )?),
        }
    }
}

/// Analytic output of a predictor: Bob's singles pattern, the coincidence
/// pattern when the experiment has a classical channel, the per-branch
/// diagnostic patterns when the scheme is spectral, and the geometric verdict
/// the prediction was computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub singles_bob: InterferencePattern,
    pub coincidence: Option<InterferencePattern>,
    pub branch_patterns: Option<(InterferencePattern, InterferencePattern)>,
    pub ordering: OrderingVerdict,
    pub collapse_applies: bool,
}

/// Normalized fringe of a possibly-empty branch spectrum: an empty branch
/// (a branch that never occurs) is reported as an all-zero pattern.
fn branch_fringe(s: &Spectrum, delays: &[f64]) -> Result<InterferencePattern, SpectraError> {
    if s.is_empty() {
        InterferencePattern::new(
            PatternKind::Probability,
            delays.to_vec(),
            vec![0.0; delays.len()],
            vec![0.0; delays.len()],
        )
    } else {
        fringe_pattern(s, delays)
    }
}

/// Bob's singles and branch patterns for the spectral-filter scheme.
///
/// Unitary QM ignores the filter and layout entirely: the singles pattern is
/// computed from the unconditioned B marginal alone, so two calls with
/// different filters return bit-identical singles. The collapse backend
/// reduces to the same computation whenever the collapse front misses Bob's
/// detection; when it arrives in time, the singles become the weighted
/// addition of the transmitted- and absorbed-branch fringes.
pub fn predict_energy_scheme(
    model: &PhysicsModel,
    src: &EnergyEntangledSource,
    filter: &FilterProfile,
    layout: &Layout,
    delays: &[f64],
) -> Result<Prediction, ModelError> {
    model.validate()?;
    let ordering = ordering(layout, Scheme::Energy)?;
    let collapse_applies = model.collapse_applies(layout, Scheme::Energy)?;

    let marginal_b = src.marginal_spectrum(Wing::B)?;
    let (s_t, s_a) = src.conditional_branches(filter)?;
    let branch_patterns = Some((
        branch_fringe(&s_t, delays)?,
        branch_fringe(&s_a, delays)?,
    ));

    let weighting = match *model {
        PhysicsModel::FiniteSpeedCollapse { weighting, .. } if collapse_applies => Some(weighting),
        _ => None,
    };

    let singles_bob = match weighting {
        // Unitary QM, or a collapse front that misses the detection: the
        // filter never enters the computation.
        None => fringe_pattern(&marginal_b, delays)?,
        Some(Weighting::Probability) => {
            // Probability-weighted addition == the rate-form sum of the two
            // branch spectra, renormalized by the total marginal weight.
            // Linearity makes this the unitary marginal fringe up to rounding.
            let rate_t = fringe_rate_pattern(&s_t, delays)?;
            let rate_a = fringe_rate_pattern(&s_a, delays)?;
            let w = marginal_b.total_weight();
            let values = rate_t
                .values()
                .iter()
                .zip(rate_a.values())
                .map(|(&t, &a)| ((t + a) / w).clamp(0.0, 1.0))
                .collect();
            InterferencePattern::new(
                PatternKind::Probability,
                delays.to_vec(),
                values,
                vec![0.0; delays.len()],
            )?
        }
        Some(Weighting::Equal) => {
            // Equal addition of the branch patterns. A branch that never
            // occurs (weight zero) drops out instead of contributing a
            // fictitious flat half.
            let w_t = s_t.total_weight();
            let w_a = s_a.total_weight();
            if w_t == 0.0 && w_a == 0.0 {
                return Err(SpectraError::EmptySpectrum.into());
            }
            if w_t == 0.0 {
                fringe_pattern(&s_a, delays)?
            } else if w_a == 0.0 {
                fringe_pattern(&s_t, delays)?
            } else {
                let p_t = fringe_pattern(&s_t, delays)?;
                let p_a = fringe_pattern(&s_a, delays)?;
                let values = p_t
                    .values()
                    .iter()
                    .zip(p_a.values())
                    .map(|(&t, &a)| (0.5 * t + 0.5 * a).clamp(0.0, 1.0))
                    .collect();
                InterferencePattern::new(
                    PatternKind::Probability,
                    delays.to_vec(),
                    values,
                    vec![0.0; delays.len()],
                )?
            }
        }
    };

    Ok(Prediction {
        singles_bob,
        coincidence: None,
        branch_patterns,
        ordering,
        collapse_applies,
    })
}

/// Bob's pattern in coincidence with Alice's filter-transmitted detections:
/// the fringe of the transmitted-conditioned B spectrum. Both physics
/// backends agree on this output, because conditioning on Alice's transmission
/// is the same operation in each.
pub fn predict_coincidence_kc(
    src: &EnergyEntangledSource,
    filter: &FilterProfile,
    delays: &[f64],
) -> Result<InterferencePattern, ModelError> {
    let s_t = src.conditional_bob_spectrum(filter, crate::biphoton::Branch::Transmitted)?;
    Ok(fringe_pattern(&s_t, delays)?)
}

/// Bob's polarization-interferometer singles: `(1 + V cos(omega tau)) / 2`
/// with the visibility `V` set by the backend and the layout ordering.
pub fn predict_polarization_scheme(
    model: &PhysicsModel,
    src: &PolarizationEntangledSource,
    layout: &Layout,
    delays: &[f64],
) -> Result<Prediction, ModelError> {
    model.validate()?;
    let ordering = ordering(layout, Scheme::Polarization)?;
    let collapse_applies = model.collapse_applies(layout, Scheme::Polarization)?;
    let visibility = polarization_visibility(model, collapse_applies);

    let values = delays
        .iter()
        .map(|&tau| (0.5 * (1.0 + visibility * (src.center_omega() * tau).cos())).clamp(0.0, 1.0))
        .collect();
    let singles_bob = InterferencePattern::new(
        PatternKind::Probability,
        delays.to_vec(),
        values,
        vec![0.0; delays.len()],
    )?;

    Ok(Prediction {
        singles_bob,
        coincidence: None,
        branch_patterns: None,
        ordering,
        collapse_applies,
    })
}

/// The visibility Bob sees in the polarization scheme.
///
/// Unitary QM: the reduced polarization state of a maximally entangled pair
/// is fully mixed, so the pattern is flat under either ordering. Collapse
/// backend: a photon measured before the front arrives keeps the source
/// coherence `pre_collapse_gamma`; once the front has projected it onto one
/// polarization, only one arm of Bob's interferometer is populated and the
/// pattern is flat.
pub fn polarization_visibility(model: &PhysicsModel, collapse_applies: bool) -> f64 {
    match *model {
        PhysicsModel::UnitaryQm => 0.0,
        PhysicsModel::FiniteSpeedCollapse {
            pre_collapse_gamma, ..
        } => {
            if collapse_applies {
                0.0
            } else {
                pre_collapse_gamma
            }
        }
    }
}
