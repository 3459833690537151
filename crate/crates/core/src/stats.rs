//! Numeric helpers behind the analysis operations: a weighted cosine
//! least-squares fit, central and noncentral chi-square distribution
//! functions, and a Kolmogorov–Smirnov statistic for uniformity checks.

use statrs::distribution::{ChiSquared, Continuous, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

/// Result of fitting `y = a + b cos(omega t) + c sin(omega t)` by weighted
/// least squares. `cov` is the parameter covariance `(X^T W X)^{-1}`, valid
/// when the weights are inverse variances.
pub(crate) struct CosineFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub cov: [[f64; 3]; 3],
}

/// Solve the 3x3 normal equations for the cosine model. Returns None when
/// the system is singular or too ill-conditioned to trust (e.g. delays that
/// do not separate the basis functions).
pub(crate) fn weighted_cosine_fit(
    delays: &[f64],
    values: &[f64],
    weights: &[f64],
    omega: f64,
) -> Option<CosineFit> {
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for ((&t, &y), &w) in delays.iter().zip(values).zip(weights) {
        if w <= 0.0 {
            continue;
        }
        let phi = [1.0, (omega * t).cos(), (omega * t).sin()];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += w * phi[i] * phi[j];
            }
            rhs[i] += w * phi[i] * y;
        }
    }
    // Condition check on the correlation-normalized matrix.
    let d = [m[0][0], m[1][1], m[2][2]];
    if d.iter().any(|&x| x <= 0.0) {
        return None;
    }
    let mut n = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            n[i][j] = m[i][j] / (d[i] * d[j]).sqrt();
        }
    }
    if det3(&n).abs() < 1.0e-9 {
        return None;
    }
    let inv = inv3(&m)?;
    let solve = |k: usize| inv[k][0] * rhs[0] + inv[k][1] * rhs[1] + inv[k][2] * rhs[2];
    Some(CosineFit { a: solve(0), b: solve(1), c: solve(2), cov: inv })
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = det3(m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let c = |i: usize, j: usize| -> f64 {
        // Cofactor C_ij (for the adjugate, transposed below).
        let r = [(0..3).filter(|&k| k != i).collect::<Vec<_>>()];
        let rows = &r[0];
        let cols: Vec<usize> = (0..3).filter(|&k| k != j).collect();
        let minor = m[rows[0]][cols[0]] * m[rows[1]][cols[1]]
            - m[rows[0]][cols[1]] * m[rows[1]][cols[0]];
        if (i + j).is_multiple_of(2) {
            minor
        } else {
            -minor
        }
    };
    let mut inv = [[0.0f64; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = c(j, i) / det;
        }
    }
    Some(inv)
}

/// Survival function 1 - CDF of the central chi-square distribution.
pub(crate) fn chi2_survival(x: f64, dof: usize) -> f64 {
    if dof == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    (1.0 - dist.cdf(x)).clamp(0.0, 1.0)
}

/// Upper quantile: the x with survival probability `alpha`. The library
/// inverse is a coarse numeric root-find, so polish it with Newton steps on
/// the survival function.
pub(crate) fn chi2_critical(alpha: f64, dof: usize) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    let mut x = dist.inverse_cdf(1.0 - alpha);
    for _ in 0..8 {
        let f = (1.0 - dist.cdf(x)) - alpha;
        let slope = dist.pdf(x);
        if slope <= 0.0 {
            break;
        }
        let step = f / slope;
        x += step;
        if step.abs() < 1.0e-12 * x.abs() {
            break;
        }
    }
    x
}

/// CDF of the noncentral chi-square distribution with `k` degrees of freedom
/// and noncentrality `lambda`, via the Poisson mixture of central CDFs. The
/// Poisson weights are summed over mode ± 12 standard deviations, which
/// bounds the truncation error far below the tolerances used here.
pub(crate) fn noncentral_chi2_cdf(x: f64, k: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if lambda <= 0.0 {
        return ChiSquared::new(k).expect("positive dof").cdf(x);
    }
    let h = lambda / 2.0;
    let spread = 12.0 * (h.sqrt() + 1.0);
    let i0 = (h - spread).floor().max(0.0) as u64;
    let i1 = (h + spread).ceil() as u64;
    let mut sum = 0.0;
    for i in i0..=i1 {
        let log_w = if i == 0 {
            -h
        } else {
            -h + i as f64 * h.ln() - ln_gamma(i as f64 + 1.0)
        };
        let w = log_w.exp();
        if w == 0.0 {
            continue;
        }
        sum += w * ChiSquared::new(k + 2.0 * i as f64).expect("positive dof").cdf(x);
    }
    sum.clamp(0.0, 1.0)
}

/// Smallest noncentrality at which a level-`alpha` chi-square test with `dof`
/// degrees of freedom reaches the requested power. The power is strictly
/// increasing in lambda, so plain bisection applies.
pub(crate) fn lambda_for_power(dof: usize, alpha: f64, power: f64) -> f64 {
    let crit = chi2_critical(alpha, dof);
    let attained = |lambda: f64| 1.0 - noncentral_chi2_cdf(crit, dof as f64, lambda);
    let mut hi = 1.0;
    while attained(hi) < power {
        hi *= 2.0;
        if hi > 1.0e12 {
            return hi;
        }
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if attained(mid) >= power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Two-sided Kolmogorov–Smirnov distance between a sample and the uniform
/// distribution on [0,1]. Used by self-consistency checks in test builds.
#[cfg(test)]
pub(crate) fn ks_uniform_statistic(p_values: &[f64]) -> f64 {
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &p) in sorted.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - p;
        let lo = p - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn cosine_fit_recovers_exact_coefficients() {
        let omega = 2.0e15;
        let period = 2.0 * std::f64::consts::PI / omega;
        let delays: Vec<f64> = (0..24).map(|i| i as f64 * period / 11.0).collect();
        let (a, b, c) = (0.5, 0.21, -0.13);
        let values: Vec<f64> = delays
            .iter()
            .map(|&t| a + b * (omega * t).cos() + c * (omega * t).sin())
            .collect();
        let weights = vec![1.0; delays.len()];
        let fit = weighted_cosine_fit(&delays, &values, &weights, omega).unwrap();
        assert!((fit.a - a).abs() < 1.0e-12);
        assert!((fit.b - b).abs() < 1.0e-12);
        assert!((fit.c - c).abs() < 1.0e-12);
    }

    #[test]
    fn cosine_fit_rejects_degenerate_designs() {
        // omega = 0 makes the cosine column collinear with the intercept.
        let delays: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let values = vec![1.0; 10];
        let weights = vec![1.0; 10];
        assert!(weighted_cosine_fit(&delays, &values, &weights, 0.0).is_none());
        // A single repeated delay cannot separate anything either.
        let fit = weighted_cosine_fit(&[1.0, 1.0, 1.0], &[0.3, 0.3, 0.3], &weights[..3], 2.0);
        assert!(fit.is_none());
    }

    #[test]
    fn cosine_fit_covariance_matches_the_known_error_model() {
        // With unit weights and an orthogonal-ish design, var(a) ~ sigma^2/n.
        let omega = 1.0;
        let n = 400;
        let delays: Vec<f64> =
            (0..n).map(|i| i as f64 * 2.0 * std::f64::consts::PI / n as f64).collect();
        let values: Vec<f64> = delays.iter().map(|&t| 0.5 + 0.2 * t.cos()).collect();
        let weights = vec![4.0; n]; // sigma = 0.5 per point
        let fit = weighted_cosine_fit(&delays, &values, &weights, omega).unwrap();
        let var_a = fit.cov[0][0];
        // Sum of weights is 1600, and the intercept is orthogonal to the
        // harmonics on a full period, so var(a) = 1/1600.
        assert!((var_a - 1.0 / 1600.0).abs() < 1.0e-6, "var(a) = {var_a}");
    }

    #[test]
    fn noncentral_cdf_reduces_to_central_at_zero_lambda() {
        for &(x, k) in &[(1.0, 3.0), (7.5, 5.0), (22.0, 21.0)] {
            let central = ChiSquared::new(k).unwrap().cdf(x);
            assert!((noncentral_chi2_cdf(x, k, 0.0) - central).abs() < 1.0e-14);
            assert!((noncentral_chi2_cdf(x, k, 1.0e-12) - central).abs() < 1.0e-9);
        }
    }

    #[test]
    fn noncentral_cdf_matches_a_monte_carlo_oracle() {
        let (k, lambda) = (5usize, 7.0f64);
        let delta = (lambda / k as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 200_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (z + delta) * (z + delta)
                    })
                    .sum()
            })
            .collect();
        for &x in &[4.0, 8.0, 12.0, 18.0, 25.0] {
            let mc = draws.iter().filter(|&&d| d <= x).count() as f64 / n as f64;
            let exact = noncentral_chi2_cdf(x, k as f64, lambda);
            let se = (mc * (1.0 - mc) / n as f64).sqrt().max(1.0e-4);
            assert!(
                (mc - exact).abs() < 5.0 * se,
                "x = {x}: mc {mc} vs series {exact}"
            );
        }
    }

    #[test]
    fn noncentral_cdf_handles_large_lambda() {
        // Mean k + lambda, variance 2k + 4lambda: the CDF at the mean is
        // near one half, and far tails saturate.
        let (k, lambda) = (21.0, 3000.0);
        let mean = k + lambda;
        let mid = noncentral_chi2_cdf(mean, k, lambda);
        assert!((mid - 0.5).abs() < 0.05, "cdf at mean = {mid}");
        assert!(noncentral_chi2_cdf(mean - 20.0 * (2.0 * k + 4.0 * lambda).sqrt(), k, lambda) < 1.0e-6);
        assert!(noncentral_chi2_cdf(mean + 20.0 * (2.0 * k + 4.0 * lambda).sqrt(), k, lambda) > 1.0 - 1.0e-6);
    }

    #[test]
    fn critical_value_round_trips_through_the_survival_function() {
        for &dof in &[1usize, 5, 21] {
            for &alpha in &[0.1, 0.01, 0.001] {
                let crit = chi2_critical(alpha, dof);
                assert!((chi2_survival(crit, dof) - alpha).abs() < 1.0e-8);
            }
        }
    }

    #[test]
    fn lambda_for_power_achieves_the_requested_power() {
        let (dof, alpha, power) = (21usize, 0.01, 0.99);
        let lambda = lambda_for_power(dof, alpha, power);
        let crit = chi2_critical(alpha, dof);
        let attained = 1.0 - noncentral_chi2_cdf(crit, dof as f64, lambda);
        assert!((attained - power).abs() < 1.0e-6, "attained {attained}");
        // And strictly less power just below.
        let under = 1.0 - noncentral_chi2_cdf(crit, dof as f64, 0.95 * lambda);
        assert!(under < power);
    }

    #[test]
    fn ks_statistic_is_small_for_a_uniform_grid_and_large_for_a_clump() {
        let n = 1000;
        let uniform: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!(ks_uniform_statistic(&uniform) < 0.001);
        let clump = vec![0.5; n];
        assert!(ks_uniform_statistic(&clump) > 0.49);
    }
}
