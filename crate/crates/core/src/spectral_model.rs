//! Initial spectra: a bulk density plus a finite list of isolated spikes.
//!
//! The bulk is described through its tail quantile function `a(x)`, defined by
//! `x = integral_{a(x)}^{+inf} rho_A(s) ds`, so `a` is non-increasing, `a(x)`
//! near `x = 0` is the upper edge and near `x = 1` the lower edge. Everything
//! downstream (finite-`N` discretisation, the Burgers fixed point, spike
//! trajectories) consumes the quantile representation, which keeps kinked and
//! tabulated densities on the same footing as smooth ones.

use crate::error::{Error, Result};
use crate::numerics::{bisect_root, integrate_adaptive};

use std::f64::consts::PI;

/// Bulk density families.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    /// Wigner semicircle of the given radius, centred at zero.
    Semicircle { radius: f64 },
    /// Uniform density on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Piecewise-linear density on `[lo, hi]` peaking at `peak`.
    Triangular { lo: f64, peak: f64, hi: f64 },
    /// All bulk mass concentrated at zero (a Dirac bulk).
    ZeroBulk,
    /// Tail-quantile samples on the uniform grid `x_k = k / (m - 1)`,
    /// `k = 0..m-1`; non-increasing, linearly interpolated.
    Tabulated { quantiles: Vec<f64> },
}

impl DensitySpec {
    /// Validate structural constraints and check the density mass by
    /// quadrature where a density exists.
    pub fn validate(&self) -> Result<()> {
        match self {
            DensitySpec::Semicircle { radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Config(format!(
                        "semicircle radius must be positive, got {radius}"
                    )));
                }
            }
            DensitySpec::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Config(format!(
                        "uniform support must satisfy lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
            DensitySpec::Triangular { lo, peak, hi } => {
                if !(lo.is_finite() && hi.is_finite() && peak.is_finite() && lo < hi) {
                    return Err(Error::Config(format!(
                        "triangular support must satisfy lo < hi, got [{lo}, {hi}]"
                    )));
                }
                if !(*lo <= *peak && *peak <= *hi) {
                    return Err(Error::Config(format!(
                        "triangular peak {peak} outside [{lo}, {hi}]"
                    )));
                }
            }
            DensitySpec::ZeroBulk => {}
            DensitySpec::Tabulated { quantiles } => {
                if quantiles.len() < 2 {
                    return Err(Error::Config(
                        "tabulated bulk needs at least two quantile samples".to_string(),
                    ));
                }
                if quantiles.iter().any(|q| !q.is_finite()) {
                    return Err(Error::Config("tabulated quantiles must be finite".to_string()));
                }
                if quantiles.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::Config(
                        "tabulated quantiles must be non-increasing in x".to_string(),
                    ));
                }
            }
        }
        // Mass check for the variants that carry a genuine density.
        if let Some((lo, hi)) = self.density_support() {
            let mass = integrate_adaptive(&|s| self.density_unchecked(s), lo, hi, 1e-12, 32)?;
            if (mass - 1.0).abs() > 1e-10 {
                return Err(Error::numeric(
                    "DensitySpec::validate",
                    format!("density integrates to {mass}, expected 1"),
                ));
            }
        }
        Ok(())
    }

    fn density_support(&self) -> Option<(f64, f64)> {
        match self {
            DensitySpec::Semicircle { radius } => Some((-radius, *radius)),
            DensitySpec::Uniform { lo, hi } => Some((*lo, *hi)),
            DensitySpec::Triangular { lo, hi, .. } => Some((*lo, *hi)),
            DensitySpec::ZeroBulk | DensitySpec::Tabulated { .. } => None,
        }
    }

    fn density_unchecked(&self, s: f64) -> f64 {
        match self {
            DensitySpec::Semicircle { radius } => {
                let r2 = radius * radius;
                if s.abs() >= *radius {
                    0.0
                } else {
                    2.0 * (r2 - s * s).sqrt() / (PI * r2)
                }
            }
            DensitySpec::Uniform { lo, hi } => {
                if s < *lo || s > *hi {
                    0.0
                } else {
                    1.0 / (hi - lo)
                }
            }
            DensitySpec::Triangular { lo, peak, hi } => {
                if s < *lo || s > *hi {
                    return 0.0;
                }
                let h = 2.0 / (hi - lo);
                if s <= *peak {
                    if peak == lo {
                        h
                    } else {
                        h * (s - lo) / (peak - lo)
                    }
                } else if peak == hi {
                    h
                } else {
                    h * (hi - s) / (hi - peak)
                }
            }
            DensitySpec::ZeroBulk | DensitySpec::Tabulated { .. } => 0.0,
        }
    }

    /// Cumulative distribution from the left, `P(lambda <= s)`.
    pub fn cdf(&self, s: f64) -> f64 {
        match self {
            DensitySpec::Semicircle { radius } => {
                let u = (s / radius).clamp(-1.0, 1.0);
                0.5 + (u * (1.0 - u * u).sqrt() + u.asin()) / PI
            }
            DensitySpec::Uniform { lo, hi } => ((s - lo) / (hi - lo)).clamp(0.0, 1.0),
            DensitySpec::Triangular { lo, peak, hi } => {
                if s <= *lo {
                    0.0
                } else if s >= *hi {
                    1.0
                } else if s <= *peak {
                    (s - lo) * (s - lo) / ((hi - lo) * (peak - lo))
                } else {
                    1.0 - (hi - s) * (hi - s) / ((hi - lo) * (hi - peak))
                }
            }
            DensitySpec::ZeroBulk => {
                if s < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            DensitySpec::Tabulated { quantiles } => {
                // Inverse of the piecewise-linear quantile map.
                let m = quantiles.len();
                let first = quantiles[0];
                let last = quantiles[m - 1];
                if s >= first {
                    return 1.0;
                }
                if s < last {
                    return 0.0;
                }
                // Tail mass x with a(x) = s; quantiles are non-increasing.
                let mut lo = 0.0f64;
                let mut hi = 1.0f64;
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    if self.quantile_closed(mid) > s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                1.0 - 0.5 * (lo + hi)
            }
        }
    }

    /// Quantile on the closed interval `[0, 1]`; endpoints map to the
    /// support edges. Internal building block for `quantile_a`.
    pub(crate) fn quantile_closed(&self, x: f64) -> f64 {
        match self {
            DensitySpec::Semicircle { radius } => {
                if x <= 0.0 {
                    return *radius;
                }
                if x >= 1.0 {
                    return -radius;
                }
                // Tail mass of the unit semicircle at s = a / radius:
                // x = 1/2 - (s sqrt(1 - s^2) + asin s) / pi.
                let target = |s: f64| 0.5 - (s * (1.0 - s * s).sqrt() + s.asin()) / PI - x;
                let s = bisect_root(&target, -1.0, 1.0, 1e-14).expect("semicircle tail cdf is monotone");
                radius * s
            }
            DensitySpec::Uniform { lo, hi } => hi - x * (hi - lo),
            DensitySpec::Triangular { lo, peak, hi } => {
                let p = 1.0 - x;
                let pm = if hi == lo { 1.0 } else { (peak - lo) / (hi - lo) };
                if p <= pm {
                    lo + (p * (hi - lo) * (peak - lo)).sqrt()
                } else {
                    hi - ((1.0 - p) * (hi - lo) * (hi - peak)).sqrt()
                }
            }
            DensitySpec::ZeroBulk => 0.0,
            DensitySpec::Tabulated { quantiles } => {
                let m = quantiles.len();
                let pos = x.clamp(0.0, 1.0) * (m - 1) as f64;
                let k = (pos.floor() as usize).min(m - 2);
                let frac = pos - k as f64;
                quantiles[k] * (1.0 - frac) + quantiles[k + 1] * frac
            }
        }
    }

    /// Support of the bulk measure as a closed interval. The Dirac bulk
    /// reports the degenerate interval `(0, 0)`.
    pub fn support(&self) -> (f64, f64) {
        match self {
            DensitySpec::Semicircle { radius } => (-radius, *radius),
            DensitySpec::Uniform { lo, hi } => (*lo, *hi),
            DensitySpec::Triangular { lo, hi, .. } => (*lo, *hi),
            DensitySpec::ZeroBulk => (0.0, 0.0),
            DensitySpec::Tabulated { quantiles } => {
                (quantiles[quantiles.len() - 1], quantiles[0])
            }
        }
    }
}

/// Bulk plus isolated spikes. Spikes are listed in strictly decreasing order
/// and every spike lies strictly above the bulk's upper support edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralModel {
    bulk: DensitySpec,
    spikes: Vec<f64>,
}

impl SpectralModel {
    pub fn new(bulk: DensitySpec, spikes: Vec<f64>) -> Result<Self> {
        bulk.validate()?;
        let (_, upper) = bulk.support();
        for w in spikes.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::Config(format!(
                    "spikes must be strictly decreasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = spikes.last() {
            if last <= upper {
                return Err(Error::Config(format!(
                    "spike {last} does not exceed the bulk upper edge {upper}"
                )));
            }
        }
        if spikes.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("spikes must be finite".to_string()));
        }
        Ok(SpectralModel { bulk, spikes })
    }

    pub fn bulk_only(bulk: DensitySpec) -> Result<Self> {
        SpectralModel::new(bulk, Vec::new())
    }

    /// Dirac bulk at zero plus one spike at `a`: the rank-one factor model.
    pub fn factor(a: f64) -> Result<Self> {
        SpectralModel::new(DensitySpec::ZeroBulk, vec![a])
    }

    pub fn bulk(&self) -> &DensitySpec {
        &self.bulk
    }

    pub fn spikes(&self) -> &[f64] {
        &self.spikes
    }
}

/// Finite discretisation of a spectral model: spikes first, then bulk
/// quantiles; non-increasing overall.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSpectrum {
    values: Vec<f64>,
    n_spikes: usize,
}

impl DiscreteSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_spikes(&self) -> usize {
        self.n_spikes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Tail quantile `a(x)` of the bulk, `x` strictly inside `(0, 1)`.
pub fn quantile_a(bulk: &DensitySpec, x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!(
            "quantile argument must lie in (0, 1), got {x}"
        )));
    }
    Ok(bulk.quantile_closed(x))
}

/// Discretise a model to `n` eigenvalues: the spikes verbatim, then bulk
/// entries `a(k / n)` for `k = l+1..n` with the quantile argument clamped to
/// `[1/(2n), 1 - 1/(2n)]`.
pub fn discretize(model: &SpectralModel, n: usize) -> Result<DiscreteSpectrum> {
    let l = model.spikes.len();
    if n <= l {
        return Err(Error::Config(format!(
            "discretisation size {n} must exceed the spike count {l}"
        )));
    }
    let mut values = Vec::with_capacity(n);
    values.extend_from_slice(&model.spikes);
    let nf = n as f64;
    let (x_lo, x_hi) = (1.0 / (2.0 * nf), 1.0 - 1.0 / (2.0 * nf));
    for k in (l + 1)..=n {
        let x = (k as f64 / nf).clamp(x_lo, x_hi);
        values.push(model.bulk.quantile_closed(x));
    }
    debug_assert!(values.windows(2).all(|w| w[1] <= w[0]));
    Ok(DiscreteSpectrum { values, n_spikes: l })
}

/// Support interval of the bulk.
pub fn bulk_support(bulk: &DensitySpec) -> (f64, f64) {
    bulk.support()
}

/// Trapezoidal quantile grid for integrals over the quantile coordinate:
/// nodes `a(k / (m-1))` for `k = 0..m-1` and matching trapezoid weights
/// summing to one.
pub fn quantile_grid_trapezoid(bulk: &DensitySpec, m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 2);
    let h = 1.0 / (m - 1) as f64;
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for k in 0..m {
        nodes.push(bulk.quantile_closed(k as f64 * h));
        weights.push(if k == 0 || k == m - 1 { 0.5 * h } else { h });
    }
    (nodes, weights)
}
