//! Deterministic large-N limit of the matrix diffusion: the self-consistent
//! Stieltjes transform, its boundary density and velocity fields, the
//! quantile flow, the local resolvent, and the bulk overlap kernel.
//!
//! The central object is G(z, t) = int rho(l, t) / (z - l) dl for Im z > 0,
//! which solves the implicit characteristics equation
//!
//! ```text
//! G = int_0^1 dx / (z - a(x) - t G),
//! ```
//!
//! where a(x) is the tail quantile of the initial bulk. Everything else is
//! read off the boundary values G(l + i0, t): the density is -Im G / pi, the
//! particle velocity is Re G (a principal-value Hilbert transform), quantiles
//! come from the integrated density, and the bulk overlap kernel is
//!
//! ```text
//! w(l, m, t) = t / ((l - t v(l,t) - m)^2 + t^2 pi^2 rho(l,t)^2).
//! ```
//!
//! Boundary values are obtained by solving at Im z = eps for a decreasing
//! triple of eps and Richardson-extrapolating to the real axis.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{bisect_root, cumulative_integral_uniform, extrapolate_to_zero};
use crate::spectral_model::{bulk_support, quantile_a, DensitySpec, SpectralModel};

/// Fixed-point stopping residual for every solve.
pub const FIXED_POINT_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 10_000;
const DAMPING: f64 = 0.5;
/// Imaginary offsets for the boundary-value extrapolation.
const EPS_TRIPLE: [f64; 3] = [1e-3, 5e-4, 2.5e-4];
/// Panels of the uniform quantile grid behind the fixed-point integral.
const X_PANELS: usize = 4096;
/// Density below this level counts as "outside the support".
const SUPPORT_RHO_FLOOR: f64 = 1e-6;

/// A converged solution of the fixed-point equation at one (z, t).
#[derive(Clone, Copy, Debug)]
pub struct StieltjesSolution {
    pub z: Complex64,
    pub t: f64,
    pub g: Complex64,
    /// |G - F(G)| under the discretized map, guaranteed below
    /// [`FIXED_POINT_TOL`].
    pub residual: f64,
    pub iterations: usize,
}

/// Discretization of int_0^1 f(a(x)) dx as sum of w_k f(a_k). The Dirac bulk
/// collapses to a single node, which keeps its solves exact and cheap.
///
/// Continuous bulks use the substitution x = (phi - sin phi cos phi) / pi
/// and a uniform-phi trapezoid. A plain uniform-x trapezoid is poisoned by
/// the quantile's edge behavior a(x) ~ edge - c x^(2/3): its h^(5/3)
/// endpoint error sits exactly where the denominator z - a - tG is smallest
/// when z approaches the evolved edge, and grows like 1/gap^2 there. Under
/// the substitution the composite a(x(phi)) is smooth in phi for
/// square-root edges, so the trapezoid converges spectrally.
struct QuantileCtx {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuantileCtx {
    fn new(bulk: &DensitySpec) -> Self {
        if matches!(bulk, DensitySpec::ZeroBulk) {
            return QuantileCtx {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        let m = X_PANELS + 1;
        let dphi = PI / (m - 1) as f64;
        let mut nodes = Vec::with_capacity(m - 2);
        let mut weights = Vec::with_capacity(m - 2);
        let mut total = 0.0;
        for k in 1..m - 1 {
            let phi = dphi * k as f64;
            let x = (phi - phi.sin() * phi.cos()) / PI;
            let w = (2.0 / PI) * phi.sin().powi(2) * dphi;
            nodes.push(quantile_a(bulk, x).expect("x(phi) lies strictly inside (0, 1)"));
            weights.push(w);
            total += w;
        }
        // The sin^2 sums make total = 1 up to roundoff; normalize the last
        // few ulps away so that G ~ 1/z holds exactly at large z.
        for w in &mut weights {
            *w /= total;
        }
        QuantileCtx { nodes, weights }
    }

    /// Adds spike atoms with weight 1/n each and reweights the bulk to
    /// (n - l)/n: the finite-size corrected transform.
    fn with_atoms(mut self, spikes: &[f64], n: usize) -> Self {
        let l = spikes.len();
        let bulk_share = (n - l) as f64 / n as f64;
        for w in &mut self.weights {
            *w *= bulk_share;
        }
        for &s in spikes {
            self.nodes.push(s);
            self.weights.push(1.0 / n as f64);
        }
        self
    }

    /// The map G -> int dx / (z - a(x) - t G).
    fn apply(&self, z: Complex64, t: f64, g: Complex64) -> Complex64 {
        let shift = z - g.scale(t);
        let mut acc = Complex64::new(0.0, 0.0);
        for (&a, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w / (shift - a);
        }
        acc
    }

    fn solve(&self, z: Complex64, t: f64, init: Complex64) -> Result<StieltjesSolution> {
        if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::Domain(format!(
                "spectral argument must satisfy Im z > 0, got {z}"
            )));
        }
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!(
                "time must be finite and non-negative, got {t}"
            )));
        }
        let mut g = init;
        let mut residual = f64::INFINITY;
        for it in 1..=MAX_ITERATIONS {
            let fg = self.apply(z, t, g);
            residual = (g - fg).norm();
            if residual < FIXED_POINT_TOL {
                if g.im >= 0.0 {
                    return Err(Error::numeric(
                        "stieltjes fixed point",
                        format!("converged to Im G = {} >= 0 at z = {z}", g.im),
                    ));
                }
                return Ok(StieltjesSolution {
                    z,
                    t,
                    g,
                    residual,
                    iterations: it,
                });
            }
            g = g.scale(1.0 - DAMPING) + fg.scale(DAMPING);
        }
        Err(Error::SolverStalled {
            residual,
            iterations: MAX_ITERATIONS,
        })
    }
}

/// Solves the fixed-point equation by damped iteration (damping 1/2, initial
/// guess 1/z). Spikes carry no macroscopic weight and are excluded; see
/// [`solve_g_finite_n`] for the 1/N-corrected variant.
pub fn solve_g(model: &SpectralModel, z: Complex64, t: f64) -> Result<StieltjesSolution> {
    let ctx = QuantileCtx::new(model.bulk());
    ctx.solve(z, t, 1.0 / z)
}

/// Same fixed point with the spikes included as 1/n-weighted atoms and the
/// bulk reweighted to (n - l)/n, for finite-size comparisons.
pub fn solve_g_finite_n(
    model: &SpectralModel,
    z: Complex64,
    t: f64,
    n: usize,
) -> Result<StieltjesSolution> {
    let l = model.spikes().len();
    if n <= l {
        return Err(Error::Config(format!(
            "matrix size {n} must exceed the spike count {l}"
        )));
    }
    let ctx = QuantileCtx::new(model.bulk()).with_atoms(model.spikes(), n);
    ctx.solve(z, t, 1.0 / z)
}

fn clamp_density(raw: f64) -> Result<f64> {
    if raw >= 0.0 {
        Ok(raw)
    } else if raw > -1e-8 {
        Ok(0.0)
    } else {
        Err(Error::numeric(
            "density extrapolation",
            format!("extrapolated density {raw:.3e} is negative beyond tolerance"),
        ))
    }
}

/// Boundary pair (rho, Re G) at a real point: solves at Im z in
/// `EPS_TRIPLE`, warm-starting each solve from the previous one, and
/// extrapolates both parts to the real axis. Valid inside and outside the
/// support; outside, rho is clamped to zero and Re G is the real principal
/// value of the transform (the drift field felt by an isolated eigenvalue).
fn boundary_pair_ctx(ctx: &QuantileCtx, lambda: f64, t: f64) -> Result<(f64, f64)> {
    let mut res = [0.0; 3];
    let mut ims = [0.0; 3];
    let mut warm: Option<Complex64> = None;
    for (k, &eps) in EPS_TRIPLE.iter().enumerate() {
        let z = Complex64::new(lambda, eps);
        let sol = ctx.solve(z, t, warm.unwrap_or(1.0 / z))?;
        warm = Some(sol.g);
        res[k] = sol.g.re;
        ims[k] = sol.g.im;
    }
    let v = extrapolate_to_zero(&EPS_TRIPLE, &res);
    let rho = clamp_density(-extrapolate_to_zero(&EPS_TRIPLE, &ims) / PI)?;
    Ok((rho, v))
}

/// Extrapolated boundary values (rho(lambda, t), Re G(lambda + i0, t)).
pub fn boundary_values(model: &SpectralModel, lambda: f64, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "boundary values need t > 0, got {t}"
        )));
    }
    let ctx = QuantileCtx::new(model.bulk());
    boundary_pair_ctx(&ctx, lambda, t)
}

/// Spectral density rho(lambda, t) by Stieltjes inversion; zero (clamped)
/// outside the support.
pub fn density_rho(model: &SpectralModel, lambda: f64, t: f64) -> Result<f64> {
    boundary_values(model, lambda, t).map(|(rho, _)| rho)
}

/// Velocity field v(lambda, t) = Re G(lambda + i0, t), the principal-value
/// Hilbert transform of the density. Only defined strictly inside the
/// support.
pub fn velocity_v(model: &SpectralModel, lambda: f64, t: f64) -> Result<f64> {
    let (rho, v) = boundary_values(model, lambda, t)?;
    if rho <= SUPPORT_RHO_FLOOR {
        return Err(Error::Domain(format!(
            "lambda = {lambda} lies outside the time-{t} support (rho = {rho:.3e})"
        )));
    }
    Ok(v)
}

/// Support interval of the evolved bulk. Semicircular families evolve into
/// semicircles (radii add in quadrature under the flow) and the Dirac bulk
/// spreads to radius 2 sqrt(t); other bulks are bracketed by bisection on the
/// extrapolated density, accurate to a few times 1e-3.
pub fn support_edges(model: &SpectralModel, t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    match model.bulk() {
        DensitySpec::ZeroBulk => {
            let r = 2.0 * t.sqrt();
            Ok((-r, r))
        }
        DensitySpec::Semicircle { radius } => {
            let r = (radius * radius + 4.0 * t).sqrt();
            Ok((-r, r))
        }
        bulk => {
            let (lo0, hi0) = bulk_support(bulk);
            if t == 0.0 {
                return Ok((lo0, hi0));
            }
            let ctx = QuantileCtx::new(bulk);
            let spread = 2.0 * t.sqrt() + 1.0;
            let inner = quantile_a(bulk, 0.5)?;
            let threshold = 1e-4;
            let indicator =
                |l: f64| boundary_pair_ctx(&ctx, l, t).map_or(-threshold, |(r, _)| r - threshold);
            let hi = bisect_root(&indicator, inner, hi0 + spread, 1e-6)?;
            let lo = bisect_root(&indicator, lo0 - spread, inner, 1e-6)?;
            Ok((lo, hi))
        }
    }
}

/// Local resolvent U(z, a, t) = 1 / (z - a - t G(z, t)): the diagonal
/// resolvent entry seen from an initial eigenvalue at a. Integrating it over
/// the quantile grid recovers G.
pub fn local_resolvent_u(
    model: &SpectralModel,
    z: Complex64,
    a: f64,
    t: f64,
) -> Result<Complex64> {
    let sol = solve_g(model, z, t)?;
    Ok(1.0 / (z - a - sol.g.scale(t)))
}

/// Macroscopic squared-overlap kernel between a time-t bulk point lambda and
/// an initial bulk point mu.
pub fn overlap_kernel_w(model: &SpectralModel, lambda: f64, mu: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("overlap kernel needs t > 0, got {t}")));
    }
    let (lo0, hi0) = bulk_support(model.bulk());
    if mu < lo0 - 1e-9 || mu > hi0 + 1e-9 {
        return Err(Error::Domain(format!(
            "mu = {mu} lies outside the initial bulk support [{lo0}, {hi0}]"
        )));
    }
    let (rho, v) = boundary_values(model, lambda, t)?;
    if rho <= SUPPORT_RHO_FLOOR {
        return Err(Error::Domain(format!(
            "lambda = {lambda} lies outside the time-{t} support; the kernel \
             degenerates where the density vanishes"
        )));
    }
    let d = lambda - t * v - mu;
    Ok(t / (d * d + t * t * PI * PI * rho * rho))
}

/// Bulk fields at a fixed time, sampled on an arcsine-spaced grid (dense near
/// the edges, where the density has square-root behavior) plus the uniform
/// quantile grid lambda(x, t).
#[derive(Clone, Debug)]
pub struct BulkState {
    pub t: f64,
    /// Strictly increasing sample points spanning the support.
    pub lambda_grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub v: Vec<f64>,
    /// Uniform quantile abscissae (k + 1/2) / m, strictly inside (0, 1).
    pub x_grid: Vec<f64>,
    /// lambda(x, t): non-increasing in x (small x = upper tail).
    pub lambda_of_x: Vec<f64>,
    pub edges: (f64, f64),
    /// Marked where the grid point sits within 1e-3 of a support edge; the
    /// square-root edge degrades the eps-extrapolation there.
    pub low_confidence: Vec<bool>,
    /// Cumulative mass from the lower edge along `lambda_grid`.
    cdf: Vec<f64>,
    mass: f64,
}

/// Solves the bulk fields at time t on `lambda_points` grid nodes and
/// `x_points` quantile nodes. Total mass must come out as 1 within 1e-6 or
/// the construction reports a numeric error.
pub fn bulk_state(
    model: &SpectralModel,
    t: f64,
    lambda_points: usize,
    x_points: usize,
) -> Result<BulkState> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("bulk state needs t > 0, got {t}")));
    }
    if lambda_points < 16 || x_points < 4 {
        return Err(Error::Config(
            "bulk state needs at least 16 lambda points and 4 quantile points".into(),
        ));
    }
    let edges = support_edges(model, t)?;
    let (lo, hi) = edges;
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let m = lambda_points;
    let dtheta = PI / (m - 1) as f64;
    let ctx = QuantileCtx::new(model.bulk());

    let mut lambda_grid = Vec::with_capacity(m);
    let mut rho = Vec::with_capacity(m);
    let mut v = Vec::with_capacity(m);
    let mut speed = Vec::with_capacity(m);
    for k in 0..m {
        let theta = dtheta * k as f64;
        let l = mid - half * theta.cos();
        let (r, vel) = boundary_pair_ctx(&ctx, l, t)?;
        lambda_grid.push(l);
        rho.push(r);
        v.push(vel);
        // Integrand of the mass in the theta parametrization.
        speed.push(r * half * theta.sin());
    }
    let cdf = cumulative_integral_uniform(&speed, dtheta)?;
    let mass = *cdf.last().expect("nonempty grid");
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::numeric(
            "bulk state",
            format!("density mass {mass} deviates from 1 beyond 1e-6"),
        ));
    }
    let low_confidence = lambda_grid
        .iter()
        .map(|&l| (l - lo).abs() < 1e-3 || (l - hi).abs() < 1e-3)
        .collect();

    let mut x_grid = Vec::with_capacity(x_points);
    let mut lambda_of_x = Vec::with_capacity(x_points);
    let state_partial = BulkState {
        t,
        lambda_grid,
        rho,
        v,
        x_grid: Vec::new(),
        lambda_of_x: Vec::new(),
        edges,
        low_confidence,
        cdf,
        mass,
    };
    for k in 0..x_points {
        let x = (k as f64 + 0.5) / x_points as f64;
        x_grid.push(x);
        lambda_of_x.push(state_partial.quantile(x)?);
    }
    Ok(BulkState {
        x_grid,
        lambda_of_x,
        ..state_partial
    })
}

fn interp(grid: &[f64], values: &[f64], x: f64) -> f64 {
    match grid.binary_search_by(|p| p.partial_cmp(&x).expect("finite grid")) {
        Ok(k) => values[k],
        Err(0) => values[0],
        Err(k) if k >= grid.len() => values[grid.len() - 1],
        Err(k) => {
            let w = (x - grid[k - 1]) / (grid[k] - grid[k - 1]);
            values[k - 1] * (1.0 - w) + values[k] * w
        }
    }
}

impl BulkState {
    /// Total mass of the sampled density (1 within 1e-6 by construction).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Linear interpolation of the density; zero outside the support.
    pub fn rho_at(&self, lambda: f64) -> f64 {
        if lambda <= self.edges.0 || lambda >= self.edges.1 {
            return 0.0;
        }
        interp(&self.lambda_grid, &self.rho, lambda)
    }

    /// Linear interpolation of the velocity field, inside the support only.
    pub fn v_at(&self, lambda: f64) -> Result<f64> {
        if lambda <= self.edges.0 || lambda >= self.edges.1 {
            return Err(Error::Domain(format!(
                "lambda = {lambda} outside the support [{}, {}]",
                self.edges.0, self.edges.1
            )));
        }
        Ok(interp(&self.lambda_grid, &self.v, lambda))
    }

    /// Tail quantile lambda(x, t): bracketed root of the integrated tail mass
    /// on the sampled CDF, resolved to 1e-9.
    pub fn quantile(&self, x: f64) -> Result<f64> {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Domain(format!(
                "quantile argument must lie in (0, 1), got {x}"
            )));
        }
        let target = self.mass - x * self.mass;
        let f = |l: f64| interp(&self.lambda_grid, &self.cdf, l) - target;
        bisect_root(&f, self.edges.0, self.edges.1, 1e-9)
    }

    /// Overlap kernel w(lambda, mu, t) from the interpolated fields.
    pub fn kernel_w(&self, lambda: f64, mu: f64) -> Result<f64> {
        let rho = self.rho_at(lambda);
        if rho <= SUPPORT_RHO_FLOOR {
            return Err(Error::Domain(format!(
                "lambda = {lambda} outside the time-{} support",
                self.t
            )));
        }
        let v = self.v_at(lambda)?;
        let d = lambda - self.t * v - mu;
        Ok(self.t / (d * d + self.t * self.t * PI * PI * rho * rho))
    }

    /// Largest deviation of (d lambda / dx) * rho from -1 over the central
    /// quantile nodes: the discrete form of the statement that equal quantile
    /// steps carry equal mass. Nodes within eight grid steps of x = 0 or
    /// x = 1 are excluded: there d lambda / dx diverges like the inverse
    /// edge density and a uniform-x central difference cannot resolve it.
    pub fn quantile_density_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        let n = self.x_grid.len();
        let margin = 8.0 / n as f64;
        for k in 1..n.saturating_sub(1) {
            let x = self.x_grid[k];
            if x < margin || x > 1.0 - margin {
                continue;
            }
            let dl = self.lambda_of_x[k + 1] - self.lambda_of_x[k - 1];
            let dx = self.x_grid[k + 1] - self.x_grid[k - 1];
            let r = self.rho_at(self.lambda_of_x[k]);
            worst = worst.max((dl / dx * r + 1.0).abs());
        }
        worst
    }
}

/// Tail quantile of the evolved bulk: solves x = tail mass above lambda on
/// the numerically integrated density, bisection tolerance 1e-9. At t = 0
/// this is the model's own quantile function.
pub fn quantile_lambda(model: &SpectralModel, x: f64, t: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!(
            "quantile argument must lie in (0, 1), got {x}"
        )));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return quantile_a(model.bulk(), x);
    }
    let state = bulk_state(model, t, 481, 4)?;
    state.quantile(x)
}
