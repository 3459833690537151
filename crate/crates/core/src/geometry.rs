//! Experiment layout and time-of-flight bookkeeping.
//!
//! The layout is one-dimensional in the only sense the predictions need:
//! optical path lengths from the source to each apparatus, plus one declared
//! straight-line distance from the remote projective element to Bob's
//! detector. The collapse-front travel model is classical light-speed transit
//! from the source to the projective element along the fiber, then straight-
//! line transit to Bob's detector at the model speed `kappa`.

use serde::Serialize;
use thiserror::Error;

/// Two path-length tolerance in meters below which paths count as equal.
pub const PATH_EQUALITY_TOLERANCE_M: f64 = 1.0e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("layout field {0} is required for this scheme but was not provided")]
    MissingField(&'static str),
    #[error("{name} must be finite and non-negative, got {value:e}")]
    InvalidLength { name: &'static str, value: f64 },
    #[error("light_speed must be positive and finite, got {0:e}")]
    InvalidLightSpeed(f64),
    #[error(
        "dist_f_bd ({dist:e} m) exceeds the triangle bound alice_path + path_s_bd ({bound:e} m)"
    )]
    TriangleViolation { dist: f64, bound: f64 },
    #[error("threshold path {threshold:e} m exceeds path_s_bd {path:e} m, so the flight time would be negative")]
    NegativeTau { threshold: f64, path: f64 },
    #[error("tau must be positive to bound a propagation speed, got {0:e} s")]
    DivisionByZeroTau(f64),
    #[error("collapse propagation speed must be positive (possibly infinite), got {0:e}")]
    InvalidKappa(f64),
    #[error("threshold distance must be non-negative (possibly infinite), got {0:e}")]
    InvalidThresholdDistance(f64),
}

/// Which experiment family a geometric question refers to: the spectral-filter
/// scheme (Alice's projective element is the filter F) or the polarization
/// scheme (Alice's projective element is her detector AD).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Energy,
    Polarization,
}

/// Optical path lengths and the one spatial distance the collapse-front model
/// needs. `path_s_f_m` is used by the energy scheme, `path_s_ad_m` by the
/// polarization scheme; a layout may carry either or both.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub path_s_f_m: Option<f64>,
    pub path_s_ad_m: Option<f64>,
    pub path_s_bd_m: f64,
    pub dist_f_bd_m: f64,
    pub light_speed_m_s: f64,
}

impl Layout {
    pub fn new(
        path_s_f_m: Option<f64>,
        path_s_ad_m: Option<f64>,
        path_s_bd_m: f64,
        dist_f_bd_m: f64,
        light_speed_m_s: f64,
    ) -> Result<Self, GeometryError> {
        let check = |name: &'static str, value: f64| {
            if !(value.is_finite() && value >= 0.0) {
                Err(GeometryError::InvalidLength { name, value })
            } else {
                Ok(())
            }
        };
        if let Some(p) = path_s_f_m {
            check("path_s_f_m", p)?;
        }
        if let Some(p) = path_s_ad_m {
            check("path_s_ad_m", p)?;
        }
        check("path_s_bd_m", path_s_bd_m)?;
        check("dist_f_bd_m", dist_f_bd_m)?;
        if !(light_speed_m_s.is_finite() && light_speed_m_s > 0.0) {
            return Err(GeometryError::InvalidLightSpeed(light_speed_m_s));
        }
        for alice in [path_s_f_m, path_s_ad_m].into_iter().flatten() {
            let bound = alice + path_s_bd_m;
            if dist_f_bd_m > bound {
                return Err(GeometryError::TriangleViolation {
                    dist: dist_f_bd_m,
                    bound,
                });
            }
        }
        Ok(Self {
            path_s_f_m,
            path_s_ad_m,
            path_s_bd_m,
            dist_f_bd_m,
            light_speed_m_s,
        })
    }

    /// The source-to-projective-element path relevant to `scheme`.
    pub fn alice_path_m(&self, scheme: Scheme) -> Result<f64, GeometryError> {
        match scheme {
            Scheme::Energy => self
                .path_s_f_m
                .ok_or(GeometryError::MissingField("path_s_f_m")),
            Scheme::Polarization => self
                .path_s_ad_m
                .ok_or(GeometryError::MissingField("path_s_ad_m")),
        }
    }

    /// Variant of this layout with the scheme-relevant Alice path replaced —
    /// the move a threshold scan makes at each scan point.
    pub fn with_alice_path_m(&self, scheme: Scheme, path_m: f64) -> Result<Self, GeometryError> {
        let mut layout = self.clone();
        match scheme {
            Scheme::Energy => layout.path_s_f_m = Some(path_m),
            Scheme::Polarization => layout.path_s_ad_m = Some(path_m),
        }
        Layout::new(
            layout.path_s_f_m,
            layout.path_s_ad_m,
            layout.path_s_bd_m,
            layout.dist_f_bd_m,
            layout.light_speed_m_s,
        )
    }
}

/// Who acts first, by optical path comparison at the common light speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    AliceBeforeBob,
    AliceAfterBob,
    Simultaneous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderingVerdict {
    pub scheme: Scheme,
    pub verdict: Verdict,
}

/// Compares the scheme's source-to-Alice path with the source-to-Bob path.
/// Paths within [`PATH_EQUALITY_TOLERANCE_M`] of each other count as equal.
pub fn ordering(layout: &Layout, scheme: Scheme) -> Result<OrderingVerdict, GeometryError> {
    let alice = layout.alice_path_m(scheme)?;
    let verdict = if (alice - layout.path_s_bd_m).abs() <= PATH_EQUALITY_TOLERANCE_M {
        Verdict::Simultaneous
    } else if alice < layout.path_s_bd_m {
        Verdict::AliceBeforeBob
    } else {
        Verdict::AliceAfterBob
    };
    Ok(OrderingVerdict { scheme, verdict })
}

/// Flight-time margin `(path_s_bd - threshold_s_f) / light_speed`: the time
/// between the projective element acting (at threshold distance) and Bob's
/// detection.
pub fn tau_of_flight(
    path_s_bd_m: f64,
    threshold_s_f_m: f64,
    light_speed_m_s: f64,
) -> Result<f64, GeometryError> {
    if !(light_speed_m_s.is_finite() && light_speed_m_s > 0.0) {
        return Err(GeometryError::InvalidLightSpeed(light_speed_m_s));
    }
    if !(threshold_s_f_m.is_finite() && threshold_s_f_m >= 0.0) {
        return Err(GeometryError::InvalidLength {
            name: "threshold_s_f_m",
            value: threshold_s_f_m,
        });
    }
    if path_s_bd_m < threshold_s_f_m {
        return Err(GeometryError::NegativeTau {
            threshold: threshold_s_f_m,
            path: path_s_bd_m,
        });
    }
    Ok((path_s_bd_m - threshold_s_f_m) / light_speed_m_s)
}

/// The speed a collapse influence must have to cross `dist_f_bd` within `tau`.
pub fn kappa(dist_f_bd_m: f64, tau_s: f64) -> Result<f64, GeometryError> {
    if !(tau_s.is_finite() && tau_s > 0.0) {
        return Err(GeometryError::DivisionByZeroTau(tau_s));
    }
    if !(dist_f_bd_m.is_finite() && dist_f_bd_m >= 0.0) {
        return Err(GeometryError::InvalidLength {
            name: "dist_f_bd_m",
            value: dist_f_bd_m,
        });
    }
    Ok(dist_f_bd_m / tau_s)
}

/// Whether the collapse front launched at the projective element reaches Bob's
/// detector no later than the B photon (boundary equality counts as arrival),
/// AND the projective element is within its effective threshold distance.
///
/// The front travels the source-to-element optical path at light speed, then
/// the element-to-detector spatial distance at `kappa_model_m_s` (which may be
/// `f64::INFINITY`). Elements farther than `d_tau_m` from the source generate
/// no effect at Bob regardless of speed.
pub fn collapse_arrival_vs_detection(
    layout: &Layout,
    scheme: Scheme,
    kappa_model_m_s: f64,
    d_tau_m: f64,
) -> Result<bool, GeometryError> {
    if kappa_model_m_s.is_nan() || kappa_model_m_s <= 0.0 {
        return Err(GeometryError::InvalidKappa(kappa_model_m_s));
    }
    if d_tau_m.is_nan() || d_tau_m < 0.0 {
        return Err(GeometryError::InvalidThresholdDistance(d_tau_m));
    }
    let alice = layout.alice_path_m(scheme)?;
    let c = layout.light_speed_m_s;
    let front_arrival = alice / c + layout.dist_f_bd_m / kappa_model_m_s;
    let detection = layout.path_s_bd_m / c;
    Ok(front_arrival <= detection && alice <= d_tau_m)
}
