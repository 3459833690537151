//! Spectral densities on uniform angular-frequency grids and the interference
//! patterns they produce in a scanned two-path interferometer.
//!
//! All integrals are trapezoidal sums on the shared grid. The detection
//! probability at path delay `tau` is `P(tau) = (1 + Re mu(tau)) / 2`, where
//! `mu(tau)` is the normalized Fourier transform of the spectral density, so a
//! Gaussian density of width `sigma` carries the envelope `exp(-sigma^2 tau^2 / 2)`
//! and a rectangular density carries a sinc envelope.

use thiserror::Error;

/// Minimum number of grid points per declared spectral feature width.
pub const MIN_POINTS_PER_SIGMA: f64 = 16.0;

/// Gaussian support, in standard deviations, that must fit inside a grid.
pub const GAUSSIAN_SUPPORT_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectraError {
    #[error("grid range is invalid: omega_min {omega_min:e} must lie below omega_max {omega_max:e}")]
    InvalidRange { omega_min: f64, omega_max: f64 },
    #[error("grid needs at least 2 points, got {0}")]
    TooFewGridPoints(usize),
    #[error("grid spacing {spacing:e} rad/s is too coarse for feature width {sigma:e} rad/s; need at least {MIN_POINTS_PER_SIGMA} points per width")]
    GridTooCoarse { spacing: f64, sigma: f64 },
    #[error("support [{lo:e}, {hi:e}] rad/s falls outside the grid [{omega_min:e}, {omega_max:e}] rad/s")]
    OutOfRange {
        lo: f64,
        hi: f64,
        omega_min: f64,
        omega_max: f64,
    },
    #[error("operands live on different frequency grids")]
    GridMismatch,
    #[error("spectrum has zero total weight")]
    EmptySpectrum,
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    #[error("negative spectral density at grid index {0}")]
    NegativeDensity(usize),
    #[error("transmission outside [0, 1] at grid index {0}")]
    TransmissionOutOfRange(usize),
    #[error("delay {delay:e} s risks aliasing: |delay| * grid spacing = {product:e} rad exceeds pi")]
    AliasingRisk { delay: f64, product: f64 },
    #[error("delays must be strictly increasing (violated at index {0})")]
    NonIncreasingDelays(usize),
    #[error("array lengths do not match")]
    LengthMismatch,
    #[error("negative error bar at index {0}")]
    NegativeError(usize),
    #[error("probability value outside [0, 1] at index {0}")]
    ValueOutOfRange(usize),
    #[error("width must be positive and finite, got {0:e}")]
    InvalidSigma(f64),
}

/// Uniform angular-frequency grid shared by spectra and filter profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    omega_min: f64,
    omega_max: f64,
    n_points: usize,
}

impl FrequencyGrid {
    /// Builds a grid and checks that `min_feature_sigma`, the narrowest
    /// spectral feature that will live on it, is resolved by at least
    /// [`MIN_POINTS_PER_SIGMA`] points per width.
    pub fn new(
        omega_min: f64,
        omega_max: f64,
        n_points: usize,
        min_feature_sigma: f64,
    ) -> Result<Self, SpectraError> {
        if !(omega_min.is_finite() && omega_max.is_finite()) || omega_min >= omega_max {
            return Err(SpectraError::InvalidRange {
                omega_min,
                omega_max,
            });
        }
        if n_points < 2 {
            return Err(SpectraError::TooFewGridPoints(n_points));
        }
        if !(min_feature_sigma.is_finite() && min_feature_sigma > 0.0) {
            return Err(SpectraError::InvalidSigma(min_feature_sigma));
        }
        let grid = Self {
            omega_min,
            omega_max,
            n_points,
        };
        // The tiny relative slack keeps a grid built for exactly
        // MIN_POINTS_PER_SIGMA from being rejected over the rounding of
        // (omega_max - omega_min) / (n - 1).
        if grid.spacing() > min_feature_sigma / MIN_POINTS_PER_SIGMA * (1.0 + 1.0e-9) {
            return Err(SpectraError::GridTooCoarse {
                spacing: grid.spacing(),
                sigma: min_feature_sigma,
            });
        }
        Ok(grid)
    }

    /// Grid centered on `center`, spanning `half_span_sigmas` feature widths on
    /// each side and resolved by `points_per_sigma` points per width.
    pub fn spanning(
        center: f64,
        sigma: f64,
        half_span_sigmas: f64,
        points_per_sigma: f64,
    ) -> Result<Self, SpectraError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(SpectraError::InvalidSigma(sigma));
        }
        let half = half_span_sigmas * sigma;
        let n = (2.0 * half_span_sigmas * points_per_sigma).ceil() as usize + 1;
        Self::new(center - half, center + half, n, sigma)
    }

    pub fn omega_min(&self) -> f64 {
        self.omega_min
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        (self.omega_max - self.omega_min) / (self.n_points - 1) as f64
    }

    pub fn omega(&self, i: usize) -> f64 {
        self.omega_min + self.spacing() * i as f64
    }

    pub fn omegas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|i| self.omega(i))
    }

    /// Trapezoid weight of point `i` relative to the spacing (1/2 at the ends).
    fn trapezoid_factor(&self, i: usize) -> f64 {
        if i == 0 || i == self.n_points - 1 {
            0.5
        } else {
            1.0
        }
    }
}

/// Non-negative spectral density sampled on a [`FrequencyGrid`].
///
/// Densities are unnormalized; [`Spectrum::total_weight`] is the trapezoidal
/// integral over the grid, and a spectrum with zero weight (everything
/// filtered away) is representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: FrequencyGrid,
    density: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: FrequencyGrid, density: Vec<f64>) -> Result<Self, SpectraError> {
        if density.len() != grid.n_points() {
            return Err(SpectraError::LengthMismatch);
        }
        for (i, &d) in density.iter().enumerate() {
            if !d.is_finite() {
                return Err(SpectraError::NonFiniteValue(i));
            }
            if d < 0.0 {
                return Err(SpectraError::NegativeDensity(i));
            }
        }
        Ok(Self { grid, density })
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Trapezoidal integral of `density(omega) * f(omega)` over the grid.
    pub fn quadrature(&self, f: impl Fn(f64) -> f64) -> f64 {
        let h = self.grid.spacing();
        let mut acc = 0.0;
        for (i, &d) in self.density.iter().enumerate() {
            acc += self.grid.trapezoid_factor(i) * d * f(self.grid.omega(i));
        }
        acc * h
    }

    pub fn total_weight(&self) -> f64 {
        self.quadrature(|_| 1.0)
    }

    pub fn is_empty(&self) -> bool {
        self.total_weight() == 0.0
    }

    /// First moment of the density (centroid frequency).
    pub fn centroid(&self) -> Result<f64, SpectraError> {
        let w = self.total_weight();
        if w == 0.0 {
            return Err(SpectraError::EmptySpectrum);
        }
        Ok(self.quadrature(|omega| omega) / w)
    }

    /// RMS width about the centroid.
    pub fn rms_width(&self) -> Result<f64, SpectraError> {
        let c = self.centroid()?;
        let w = self.total_weight();
        Ok((self.quadrature(|omega| (omega - c).powi(2)) / w).sqrt())
    }
}

/// Unit-peak Gaussian spectral density centered at `center` with standard
/// deviation `sigma`, sampled on `grid`.
///
/// Fails with [`SpectraError::GridTooCoarse`] when the grid spacing does not
/// resolve `sigma`, and with [`SpectraError::OutOfRange`] when the
/// `center +- 5 sigma` support does not fit inside the grid.
pub fn gaussian_spectrum(
    grid: &FrequencyGrid,
    center: f64,
    sigma: f64,
) -> Result<Spectrum, SpectraError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(SpectraError::InvalidSigma(sigma));
    }
    // Same slack as in `FrequencyGrid::new`: a feature exactly at the grid's
    // declared resolution limit must not be rejected over f64 rounding.
    if grid.spacing() > sigma / MIN_POINTS_PER_SIGMA * (1.0 + 1.0e-9) {
        return Err(SpectraError::GridTooCoarse {
            spacing: grid.spacing(),
            sigma,
        });
    }
    let lo = center - GAUSSIAN_SUPPORT_SIGMAS * sigma;
    let hi = center + GAUSSIAN_SUPPORT_SIGMAS * sigma;
    if lo < grid.omega_min() || hi > grid.omega_max() {
        return Err(SpectraError::OutOfRange {
            lo,
            hi,
            omega_min: grid.omega_min(),
            omega_max: grid.omega_max(),
        });
    }
    let density = grid
        .omegas()
        .map(|omega| (-((omega - center) / sigma).powi(2) / 2.0).exp())
        .collect();
    Spectrum::new(grid.clone(), density)
}

/// Frequency-dependent intensity transmission in `[0, 1]` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterProfile {
    grid: FrequencyGrid,
    transmission: Vec<f64>,
}

impl FilterProfile {
    pub fn new(grid: FrequencyGrid, transmission: Vec<f64>) -> Result<Self, SpectraError> {
        if transmission.len() != grid.n_points() {
            return Err(SpectraError::LengthMismatch);
        }
        for (i, &t) in transmission.iter().enumerate() {
            if !t.is_finite() {
                return Err(SpectraError::NonFiniteValue(i));
            }
            if !(0.0..=1.0).contains(&t) {
                return Err(SpectraError::TransmissionOutOfRange(i));
            }
        }
        Ok(Self { grid, transmission })
    }

    /// Flat transmission `t` everywhere.
    pub fn uniform(grid: FrequencyGrid, t: f64) -> Result<Self, SpectraError> {
        let n = grid.n_points();
        Self::new(grid, vec![t; n])
    }

    /// Gaussian bandpass with peak transmission `peak` and width `sigma`.
    pub fn gaussian_bandpass(
        grid: FrequencyGrid,
        center: f64,
        sigma: f64,
        peak: f64,
    ) -> Result<Self, SpectraError> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(SpectraError::InvalidSigma(sigma));
        }
        let transmission = grid
            .omegas()
            .map(|omega| peak * (-((omega - center) / sigma).powi(2) / 2.0).exp())
            .collect();
        Self::new(grid, transmission)
    }

    /// Top-hat bandpass of full width `full_width` around `center`. Grid
    /// points with `|omega - center| <= full_width / 2` transmit `t`; the pass
    /// band edges therefore snap to the grid.
    pub fn rectangular_bandpass(
        grid: FrequencyGrid,
        center: f64,
        full_width: f64,
        t: f64,
    ) -> Result<Self, SpectraError> {
        if !(full_width.is_finite() && full_width > 0.0) {
            return Err(SpectraError::InvalidSigma(full_width));
        }
        let half = full_width / 2.0;
        let transmission = grid
            .omegas()
            .map(|omega| if (omega - center).abs() <= half { t } else { 0.0 })
            .collect();
        Self::new(grid, transmission)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn transmission(&self) -> &[f64] {
        &self.transmission
    }

    /// Transmission at an arbitrary frequency by linear interpolation,
    /// clamping to the edge values outside the grid.
    pub fn transmission_at(&self, omega: f64) -> f64 {
        let h = self.grid.spacing();
        let x = (omega - self.grid.omega_min()) / h;
        if x <= 0.0 {
            return self.transmission[0];
        }
        let last = self.transmission.len() - 1;
        if x >= last as f64 {
            return self.transmission[last];
        }
        let i = x.floor() as usize;
        let frac = x - i as f64;
        self.transmission[i] * (1.0 - frac) + self.transmission[i + 1] * frac
    }
}

/// Splits `s` into the transmitted and absorbed parts of `filter`:
/// `s * t` and `s * (1 - t)` pointwise.
pub fn apply_filter(
    s: &Spectrum,
    filter: &FilterProfile,
) -> Result<(Spectrum, Spectrum), SpectraError> {
    if s.grid() != filter.grid() {
        return Err(SpectraError::GridMismatch);
    }
    let transmitted: Vec<f64> = s
        .density()
        .iter()
        .zip(filter.transmission())
        .map(|(&d, &t)| d * t)
        .collect();
    let absorbed: Vec<f64> = s
        .density()
        .iter()
        .zip(filter.transmission())
        .map(|(&d, &t)| d * (1.0 - t))
        .collect();
    Ok((
        Spectrum::new(s.grid().clone(), transmitted)?,
        Spectrum::new(s.grid().clone(), absorbed)?,
    ))
}

/// Probability that a photon drawn from `s` passes `filter`:
/// `integral(s * t) / integral(s)`.
pub fn transmit_probability(s: &Spectrum, filter: &FilterProfile) -> Result<f64, SpectraError> {
    if s.grid() != filter.grid() {
        return Err(SpectraError::GridMismatch);
    }
    let total = s.total_weight();
    if total == 0.0 {
        return Err(SpectraError::EmptySpectrum);
    }
    let h = s.grid().spacing();
    let mut passed = 0.0;
    for (i, (&d, &t)) in s.density().iter().zip(filter.transmission()).enumerate() {
        passed += s.grid().trapezoid_factor(i) * d * t;
    }
    Ok(passed * h / total)
}

/// Whether a pattern stores detection probabilities or unnormalized rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Probability,
    Rate,
}

/// Interference pattern sampled at strictly increasing interferometer delays.
///
/// `Probability` patterns keep values in `[0, 1]`; `Rate` patterns are
/// unnormalized (counts per second, or an integrated spectral weight) and only
/// need to be non-negative. Errors are one-sigma and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferencePattern {
    kind: PatternKind,
    delays: Vec<f64>,
    values: Vec<f64>,
    errors: Vec<f64>,
}

impl InterferencePattern {
    pub fn new(
        kind: PatternKind,
        delays: Vec<f64>,
        values: Vec<f64>,
        errors: Vec<f64>,
    ) -> Result<Self, SpectraError> {
        if delays.len() != values.len() || delays.len() != errors.len() {
            return Err(SpectraError::LengthMismatch);
        }
        for (i, &d) in delays.iter().enumerate() {
            if !d.is_finite() {
                return Err(SpectraError::NonFiniteValue(i));
            }
            if i > 0 && d <= delays[i - 1] {
                return Err(SpectraError::NonIncreasingDelays(i));
            }
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(SpectraError::NonFiniteValue(i));
            }
            match kind {
                PatternKind::Probability if !(0.0..=1.0).contains(&v) => {
                    return Err(SpectraError::ValueOutOfRange(i));
                }
                PatternKind::Rate if v < 0.0 => {
                    return Err(SpectraError::ValueOutOfRange(i));
                }
                _ => {}
            }
        }
        for (i, &e) in errors.iter().enumerate() {
            if !e.is_finite() {
                return Err(SpectraError::NonFiniteValue(i));
            }
            if e < 0.0 {
                return Err(SpectraError::NegativeError(i));
            }
        }
        Ok(Self {
            kind,
            delays,
            values,
            errors,
        })
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    /// Pointwise weighted sum of patterns sharing the same delay axis.
    /// Errors combine in quadrature.
    pub fn weighted_sum(
        kind: PatternKind,
        parts: &[(f64, &InterferencePattern)],
    ) -> Result<Self, SpectraError> {
        let (_, first) = parts.first().ok_or(SpectraError::LengthMismatch)?;
        for (_, p) in parts {
            if p.delays() != first.delays() {
                return Err(SpectraError::GridMismatch);
            }
        }
        let n = first.len();
        let mut values = vec![0.0; n];
        let mut var = vec![0.0; n];
        for (w, p) in parts {
            for i in 0..n {
                values[i] += w * p.values[i];
                var[i] += (w * p.errors[i]).powi(2);
            }
        }
        let errors = var.into_iter().map(f64::sqrt).collect();
        Self::new(kind, first.delays.clone(), values, errors)
    }
}

/// Real part, imaginary part and total weight of the Fourier integral
/// `integral s(omega) exp(-i omega tau) domega`, all accumulated in the same
/// index order so that the `tau = 0` ratio is exactly one.
fn fourier_component(s: &Spectrum, delay: f64) -> (f64, f64, f64) {
    let h = s.grid().spacing();
    let (mut re, mut im, mut w) = (0.0_f64, 0.0_f64, 0.0_f64);
    for (i, &d) in s.density().iter().enumerate() {
        let f = s.grid().trapezoid_factor(i) * d;
        let phase = s.grid().omega(i) * delay;
        re += f * phase.cos();
        im += f * phase.sin();
        w += f;
    }
    (re * h, im * h, w * h)
}

fn check_aliasing(grid: &FrequencyGrid, delay: f64) -> Result<(), SpectraError> {
    let product = delay.abs() * grid.spacing();
    if product > std::f64::consts::PI {
        return Err(SpectraError::AliasingRisk { delay, product });
    }
    Ok(())
}

fn check_delays(grid: &FrequencyGrid, delays: &[f64]) -> Result<(), SpectraError> {
    for (i, &d) in delays.iter().enumerate() {
        if !d.is_finite() {
            return Err(SpectraError::NonFiniteValue(i));
        }
        if i > 0 && d <= delays[i - 1] {
            return Err(SpectraError::NonIncreasingDelays(i));
        }
        check_aliasing(grid, d)?;
    }
    Ok(())
}

/// Detection probability `(1 + Re mu(tau)) / 2` at a single delay.
pub fn fringe_probability(s: &Spectrum, delay: f64) -> Result<f64, SpectraError> {
    check_aliasing(s.grid(), delay)?;
    let (re, _, w) = fourier_component(s, delay);
    if w == 0.0 {
        return Err(SpectraError::EmptySpectrum);
    }
    Ok((0.5 * (1.0 + re / w)).clamp(0.0, 1.0))
}

/// Fringe contrast `|mu(tau)|` at a single delay.
pub fn fringe_envelope(s: &Spectrum, delay: f64) -> Result<f64, SpectraError> {
    check_aliasing(s.grid(), delay)?;
    let (re, im, w) = fourier_component(s, delay);
    if w == 0.0 {
        return Err(SpectraError::EmptySpectrum);
    }
    Ok(re.hypot(im) / w)
}

/// Normalized interferogram of `s` at the given delays (probability form).
pub fn fringe_pattern(s: &Spectrum, delays: &[f64]) -> Result<InterferencePattern, SpectraError> {
    check_delays(s.grid(), delays)?;
    if s.is_empty() {
        return Err(SpectraError::EmptySpectrum);
    }
    let values = delays
        .iter()
        .map(|&tau| {
            let (re, _, w) = fourier_component(s, tau);
            (0.5 * (1.0 + re / w)).clamp(0.0, 1.0)
        })
        .collect();
    InterferencePattern::new(
        PatternKind::Probability,
        delays.to_vec(),
        values,
        vec![0.0; delays.len()],
    )
}

/// Unnormalized interferogram `(W + Re integral s e^{-i omega tau}) / 2`.
///
/// This is the superposition-friendly form: it is linear in the density, so
/// the rate pattern of a weighted sum of spectra is the weighted sum of the
/// rate patterns. An empty spectrum yields all zeros.
pub fn fringe_rate_pattern(
    s: &Spectrum,
    delays: &[f64],
) -> Result<InterferencePattern, SpectraError> {
    check_delays(s.grid(), delays)?;
    let values = delays
        .iter()
        .map(|&tau| {
            let (re, _, w) = fourier_component(s, tau);
            (0.5 * (w + re)).max(0.0)
        })
        .collect();
    InterferencePattern::new(
        PatternKind::Rate,
        delays.to_vec(),
        values,
        vec![0.0; delays.len()],
    )
}
