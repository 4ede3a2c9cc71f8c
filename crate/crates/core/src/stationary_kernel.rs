//! Closed-form overlap kernel of the stationary Ornstein-Uhlenbeck matrix
//! process.
//!
//! When the process is `dX_t = -X_t/2 dt + dH_t` started in its stationary
//! state, the eigenvalue density is the fixed semicircle of radius 2 and the
//! rescaled mean squared overlaps between time-`t` and time-`0` eigenvectors
//! converge to
//!
//! ```text
//! K_t(lambda, mu) = sum_{n >= 0} e^{-n t / 2} U_n(lambda / 2) U_n(mu / 2)
//! ```
//!
//! with `U_n` the Chebyshev polynomials of the second kind, which are the
//! eigenfunctions of the overlap transport generator on the semicircle. The
//! geometric series sums to a rational closed form; series and closed form
//! are kept as independent routes so each validates the other.

use crate::error::{Error, Result};
use crate::numerics::gauss_chebyshev_u;

use std::f64::consts::PI;

/// Chebyshev polynomial of the second kind, forward recurrence.
pub fn chebyshev_u(n: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 2.0 * x;
    for _ in 1..n {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `U_n` and its first three derivatives, all from coupled recurrences.
fn chebyshev_u_derivs(n: usize, x: f64) -> (f64, f64, f64, f64) {
    let mut u_prev = 1.0;
    let mut d1_prev = 0.0;
    let mut d2_prev = 0.0;
    let mut d3_prev = 0.0;
    if n == 0 {
        return (u_prev, d1_prev, d2_prev, d3_prev);
    }
    let mut u = 2.0 * x;
    let mut d1 = 2.0;
    let mut d2 = 0.0;
    let mut d3 = 0.0;
    for _ in 1..n {
        let u_next = 2.0 * x * u - u_prev;
        let d1_next = 2.0 * u + 2.0 * x * d1 - d1_prev;
        let d2_next = 4.0 * d1 + 2.0 * x * d2 - d2_prev;
        let d3_next = 6.0 * d2 + 2.0 * x * d3 - d3_prev;
        u_prev = u;
        d1_prev = d1;
        d2_prev = d2;
        d3_prev = d3;
        u = u_next;
        d1 = d1_next;
        d2 = d2_next;
        d3 = d3_next;
    }
    (u, d1, d2, d3)
}

/// A validated kernel evaluation point: `lambda, mu` inside the stationary
/// support `[-2, 2]`, `t > 0`.
#[derive(Debug, Clone, Copy)]
pub struct KernelQuery {
    pub lambda: f64,
    pub mu: f64,
    pub t: f64,
}

impl KernelQuery {
    pub fn new(lambda: f64, mu: f64, t: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda.abs() <= 2.0) {
            return Err(Error::Domain(format!(
                "kernel argument lambda = {lambda} outside [-2, 2]"
            )));
        }
        if !(mu.is_finite() && mu.abs() <= 2.0) {
            return Err(Error::Domain(format!("kernel argument mu = {mu} outside [-2, 2]")));
        }
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Domain(format!("kernel time must be positive, got {t}")));
        }
        Ok(KernelQuery { lambda, mu, t })
    }
}

/// Spectral-series form of the kernel, truncated automatically once the term
/// bound `e^{-n t / 2} (n + 1)^2` falls below 1e-14 relative to the partial
/// sum scale.
pub fn kernel_series(q: &KernelQuery) -> f64 {
    let decay = (-0.5 * q.t).exp();
    let x = 0.5 * q.lambda;
    let y = 0.5 * q.mu;
    let mut sum = 0.0;
    // U_{n-1}, U_n trackers seeded with U_{-1} = 0, U_0 = 1.
    let (mut ux_prev, mut ux) = (0.0, 1.0);
    let (mut uy_prev, mut uy) = (0.0, 1.0);
    let mut weight = 1.0;
    let mut n = 0usize;
    loop {
        sum += weight * ux * uy;
        let bound = weight * ((n + 2) * (n + 2)) as f64;
        if bound < 1e-14 * sum.abs().max(1.0) || weight == 0.0 || n > 1_000_000 {
            break;
        }
        let ux_next = 2.0 * x * ux - ux_prev;
        let uy_next = 2.0 * y * uy - uy_prev;
        ux_prev = ux;
        ux = ux_next;
        uy_prev = uy;
        uy = uy_next;
        weight *= decay;
        n += 1;
    }
    sum
}

/// Rational closed form of the kernel. The denominator is the product of two
/// positive Poisson-kernel factors, so it never vanishes for `t > 0`.
pub fn kernel_closed(q: &KernelQuery) -> f64 {
    let r = (-0.5 * q.t).exp();
    let (l, m) = (q.lambda, q.mu);
    let denom = 1.0 - r * l * m + r * r * (l * l + m * m - 2.0) - r.powi(3) * l * m + r.powi(4);
    (1.0 - r * r) / denom
}

/// Residual of the generator eigenrelation
///
/// ```text
/// PV (1/2pi) int_{-2}^{2} (U_n(l/2) - U_n(m/2)) / (l - m)^2 sqrt(4 - m^2) dm
///   = (n/2) U_n(l/2)
/// ```
///
/// at an interior point `lambda`. The principal value is handled by
/// subtracting the linearised singular part; what remains is a bounded
/// integrand, and the subtracted term integrates analytically against the
/// semicircle (its Hilbert transform is `lambda / 2`).
pub fn verify_eigenrelation(n: usize, lambda: f64) -> Result<f64> {
    if lambda.abs() >= 2.0 {
        return Err(Error::Domain(format!(
            "eigenrelation check requires an interior point, got {lambda}"
        )));
    }
    let (u, d1, d2, d3) = chebyshev_u_derivs(n, 0.5 * lambda);
    // f(m) = U_n(m / 2) and its derivatives at m = lambda.
    let f_l = u;
    let fp = 0.5 * d1;
    let fpp = 0.25 * d2;
    let fppp = 0.125 * d3;

    // Bounded remainder g(m) = [f(l) - f(m) + f'(l)(m - l)] / (l - m)^2 with a
    // Taylor patch near the singular point.
    let g = |m: f64| -> f64 {
        let dm = m - lambda;
        if dm.abs() < 1e-5 {
            -0.5 * fpp - fppp * dm / 6.0
        } else {
            (f_l - chebyshev_u(n, 0.5 * m) + fp * dm) / (dm * dm)
        }
    };

    // Integrate g against the semicircle via m = 2 cos(theta): the weight
    // becomes (2/pi) sin^2(theta) and the integrand is smooth.
    let panels = 4000usize;
    let h = PI / panels as f64;
    let mut acc = 0.0;
    // Composite Simpson over theta.
    let integrand = |theta: f64| {
        let s = theta.sin();
        g(2.0 * theta.cos()) * 2.0 / PI * s * s
    };
    for k in 0..panels {
        let t0 = k as f64 * h;
        acc += h / 6.0 * (integrand(t0) + 4.0 * integrand(t0 + 0.5 * h) + integrand(t0 + h));
    }

    let value = acc + fp * 0.5 * lambda;
    Ok((value - 0.5 * n as f64 * u).abs())
}

/// Orthonormality defect of `U_m, U_n` under the semicircle weight,
/// `(1/2pi) int U_m(l/2) U_n(l/2) sqrt(4 - l^2) dl - delta_mn`.
pub fn orthonormality_defect(m: usize, n: usize) -> f64 {
    let rule = gauss_chebyshev_u((m + n) / 2 + 2);
    let (nodes, weights) = rule;
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc += w * chebyshev_u(m, *x) * chebyshev_u(n, *x);
    }
    acc *= 2.0 / PI;
    if m == n {
        acc - 1.0
    } else {
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn recurrence_matches_sine_identity() {
        for n in (0..=12).chain([25, 30]) {
            for k in 1..40 {
                let theta = k as f64 * PI / 40.0;
                let lhs = chebyshev_u(n, theta.cos()) * theta.sin();
                let rhs = ((n as f64 + 1.0) * theta).sin();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn series_at_origin_matches_geometric_sum() {
        let q = KernelQuery::new(0.0, 0.0, 1.0).unwrap();
        let expect = 1.0 / (1.0 - (-1.0f64).exp());
        assert_abs_diff_eq!(kernel_series(&q), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(kernel_closed(&q), expect, epsilon = 1e-14);
    }

    #[test]
    fn series_and_closed_agree_on_grid() {
        // Near the diagonal edge the kernel reaches ~1e2 and the series sums
        // hundreds of terms, so agreement is limited by accumulated roundoff
        // (~5e-11 at lambda = mu = 1.9, t = 1/8), not by truncation.
        for t in [0.125, 0.25, 0.5, 1.0, 3.0] {
            for i in 0..9 {
                for j in 0..9 {
                    let l = -1.9 + 3.8 * i as f64 / 8.0;
                    let m = -1.9 + 3.8 * j as f64 / 8.0;
                    let q = KernelQuery::new(l, m, t).unwrap();
                    assert_abs_diff_eq!(kernel_series(&q), kernel_closed(&q), epsilon = 2e-10);
                }
            }
        }
    }

    #[test]
    fn kernel_decorrelates_at_large_time() {
        let q = KernelQuery::new(1.3, -0.4, 50.0).unwrap();
        assert_abs_diff_eq!(kernel_series(&q), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(kernel_closed(&q), 1.0, epsilon = 1e-10);
        // Extreme times stay finite and underflow-safe.
        let q = KernelQuery::new(1.3, -0.4, 2000.0).unwrap();
        assert!(kernel_series(&q).is_finite());
    }

    #[test]
    fn diagonal_blowup_rate_at_small_time() {
        // K_t(l, l) ~ 4 / ((4 - l^2) t) as t -> 0.
        for l in [0.0, 1.0, 1.5] {
            let t = 1e-4;
            let q = KernelQuery::new(l, l, t).unwrap();
            let limit = 4.0 / (4.0 - l * l);
            assert_abs_diff_eq!(kernel_closed(&q) * t, limit, epsilon = 2e-3 * limit);
        }
    }

    #[test]
    fn domain_validation() {
        assert!(KernelQuery::new(2.5, 0.0, 1.0).is_err());
        assert!(KernelQuery::new(0.0, -2.5, 1.0).is_err());
        assert!(KernelQuery::new(0.0, 0.0, 0.0).is_err());
        assert!(KernelQuery::new(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn eigenrelation_residuals_small() {
        for n in 0..=30 {
            for l in [-1.8, -0.9, 0.0, 0.7, 1.6] {
                let r = verify_eigenrelation(n, l).unwrap();
                assert!(r < 1e-8, "n = {n}, lambda = {l}: residual {r}");
            }
        }
    }

    #[test]
    fn eigenrelation_rejects_edge_points() {
        assert!(verify_eigenrelation(3, 2.0).is_err());
    }

    #[test]
    fn chebyshev_orthonormality() {
        for m in 0..=15 {
            for n in 0..=15 {
                let defect = orthonormality_defect(m, n);
                assert!(defect.abs() < 1e-10, "({m}, {n}): defect {defect}");
            }
        }
    }
}
