//! Shared numerical kernels: adaptive Gauss-Kronrod quadrature, bracketed
//! root finding, Richardson extrapolation, Gauss-Chebyshev rules, cumulative
//! integration on uniform grids, and sample-moment statistics.

use crate::error::{Error, Result};

/// 15-point Kronrod abscissae (positive half, descending).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_2,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

/// 7-point Gauss weights (for the error estimate), matching XGK[1], XGK[3], ...
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One G7/K15 panel: returns the Kronrod value and an error estimate.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let fsum = f(c - x) + f(c + x);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    kronrod *= h;
    gauss *= h;
    ((kronrod), (kronrod - gauss).abs().max(1e-300))
}

/// Adaptive quadrature of `f` over `[a, b]` to absolute tolerance `abs_tol`.
///
/// `initial_panels` seeds a uniform subdivision before refinement; use a
/// panel count proportional to the oscillation count for wavy integrands so
/// the error estimator sees resolved panels from the start.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    initial_panels: usize,
) -> Result<f64> {
    let panels = initial_panels.max(1);
    // (lo, hi, value, error) worklist; refined until the global error bound
    // drops below abs_tol or the panel budget is exhausted.
    let mut work: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(panels * 4);
    let w = (b - a) / panels as f64;
    for k in 0..panels {
        let lo = a + k as f64 * w;
        let hi = if k + 1 == panels { b } else { lo + w };
        let (v, e) = gk15(f, lo, hi);
        work.push((lo, hi, v, e));
    }
    let max_panels = 200_000;
    loop {
        let total_err: f64 = work.iter().map(|p| p.3).sum();
        if total_err < abs_tol {
            return Ok(work.iter().map(|p| p.2).sum());
        }
        if work.len() >= max_panels {
            return Err(Error::numeric(
                "integrate_adaptive",
                format!("panel budget exhausted, error estimate {total_err:.3e}"),
            ));
        }
        // Split the worst panel.
        let (idx, _) = work
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty worklist");
        let (lo, hi, _, _) = work.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::numeric(
                "integrate_adaptive",
                "interval underflow before reaching tolerance".to_string(),
            ));
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        work.push((lo, mid, v1, e1));
        work.push((mid, hi, v2, e2));
    }
}

/// Cumulative integral of samples `y` on a uniform grid with spacing `dx`.
///
/// Fourth-order accurate: each panel integral uses the cubic through the four
/// nearest samples. Returns the prefix integrals, `out[k] = int_{x0}^{xk} y`.
/// Needs at least four samples.
pub fn cumulative_integral_uniform(y: &[f64], dx: f64) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 4 {
        return Err(Error::Input(
            "cumulative_integral_uniform needs at least 4 samples".to_string(),
        ));
    }
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for k in 0..n - 1 {
        let panel = if k == 0 {
            (9.0 * y[0] + 19.0 * y[1] - 5.0 * y[2] + y[3]) / 24.0
        } else if k == n - 2 {
            (9.0 * y[n - 1] + 19.0 * y[n - 2] - 5.0 * y[n - 3] + y[n - 4]) / 24.0
        } else {
            (-y[k - 1] + 13.0 * y[k] + 13.0 * y[k + 1] - y[k + 2]) / 24.0
        };
        acc += dx * panel;
        out[k + 1] = acc;
    }
    Ok(out)
}

/// Bracketed bisection for `f(x) = 0` on `[lo, hi]`, to width `xtol`.
pub fn bisect_root<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    let mut lo = lo;
    let mut hi = hi;
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!(
            "bisect_root: no sign change on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < xtol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Polynomial (Neville) extrapolation of `(eps[i], val[i])` to `eps = 0`.
///
/// With three geometrically spaced epsilons this removes the linear and
/// quadratic error terms of a boundary-value limit.
pub fn extrapolate_to_zero(eps: &[f64], vals: &[f64]) -> f64 {
    assert_eq!(eps.len(), vals.len());
    let mut p = vals.to_vec();
    let n = p.len();
    for level in 1..n {
        for i in 0..n - level {
            let x0 = eps[i];
            let x1 = eps[i + level];
            p[i] = (x0 * p[i + 1] - x1 * p[i]) / (x0 - x1);
        }
    }
    p[0]
}

/// Gauss quadrature nodes/weights for the weight `sqrt(1 - x^2)` on `[-1, 1]`
/// (Chebyshev second kind). Exact for polynomial integrands up to degree
/// `2n - 1`.
pub fn gauss_chebyshev_u(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let m = (n + 1) as f64;
    for k in 1..=n {
        let theta = k as f64 * std::f64::consts::PI / m;
        nodes.push(theta.cos());
        weights.push(std::f64::consts::PI / m * theta.sin().powi(2));
    }
    (nodes, weights)
}

/// Two-pass sample moments.
#[derive(Debug, Clone, Copy)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased variance.
    pub variance: f64,
    /// Standardised third central moment.
    pub skewness: f64,
    /// Standardised fourth central moment minus 3.
    pub excess_kurtosis: f64,
}

pub fn sample_moments(xs: &[f64]) -> SampleMoments {
    let n = xs.len();
    assert!(n >= 2, "sample_moments needs at least two samples");
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    SampleMoments {
        n,
        mean,
        variance: m2 * nf / (nf - 1.0),
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
    }
}

/// Standard error of the mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    let m = sample_moments(xs);
    (m.variance / m.n as f64).sqrt()
}

/// Kolmogorov distance between the empirical law of `samples` and `cdf`.
pub fn kolmogorov_distance<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let fx = cdf(x);
        let upper = (i as f64 + 1.0) / n - fx;
        let lower = fx - i as f64 / n;
        d = d.max(upper.abs()).max(lower.abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gk_adaptive_polynomial_and_oscillatory() {
        let v = integrate_adaptive(&|x: f64| x * x, 0.0, 1.0, 1e-13, 1).unwrap();
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-13);

        let w = integrate_adaptive(&|x: f64| (50.0 * std::f64::consts::PI * x).cos(), 0.0, 1.0, 1e-12, 64)
            .unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gk_adaptive_boundary_layer() {
        // Steep exponential boundary layers at both ends.
        let a = 500.0;
        let v = integrate_adaptive(&|x: f64| (-a * x * (1.0 - x)).exp(), 0.0, 1.0, 1e-12, 8).unwrap();
        // Exact via series: 2/a * (1 + 2/a + ...) approximation is not exact;
        // compare against a brute-force fine Simpson instead.
        let m = 2_000_000;
        let h = 1.0 / m as f64;
        let mut s = 0.0;
        for i in 0..m {
            let x0 = i as f64 * h;
            let xm = x0 + 0.5 * h;
            let x1 = x0 + h;
            let f = |x: f64| (-a * x * (1.0 - x)).exp();
            s += h / 6.0 * (f(x0) + 4.0 * f(xm) + f(x1));
        }
        assert_abs_diff_eq!(v, s, epsilon = 1e-11);
    }

    #[test]
    fn cumulative_uniform_matches_sine() {
        let n = 101;
        let dx = 1.0 / (n - 1) as f64;
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * dx).cos()).collect();
        let c = cumulative_integral_uniform(&y, dx).unwrap();
        for (i, ci) in c.iter().enumerate() {
            let x = i as f64 * dx;
            assert_abs_diff_eq!(*ci, x.sin(), epsilon = 2e-9);
        }
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect_root(&|x| x * x - 2.0, 0.0, 2.0, 1e-13).unwrap();
        assert_abs_diff_eq!(r, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn extrapolation_removes_linear_and_quadratic_terms() {
        let eps = [1e-3, 5e-4, 2.5e-4];
        let vals: Vec<f64> = eps.iter().map(|e| 1.0 + 3.0 * e - 2.0 * e * e).collect();
        let v = extrapolate_to_zero(&eps, &vals);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chebyshev_u_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_chebyshev_u(8);
        let total: f64 = w.iter().sum();
        assert_abs_diff_eq!(total, std::f64::consts::PI / 2.0, epsilon = 1e-14);
        let second: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi * xi).sum();
        assert_abs_diff_eq!(second, std::f64::consts::PI / 8.0, epsilon = 1e-14);
    }

    #[test]
    fn moments_of_known_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let m = sample_moments(&xs);
        assert_abs_diff_eq!(m.mean, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.variance, 5.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.skewness, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kolmogorov_distance_of_uniform_grid() {
        let mut xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = kolmogorov_distance(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.005 + 1e-12, "d = {d}");
    }
}
