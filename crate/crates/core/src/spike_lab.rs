//! Isolated (spiked) eigenvalues and their eigenvector statistics: the spike
//! transport ODE, the principal overlap decay, the transverse overlap PDE,
//! and the Gaussian fluctuation moments of the principal component.
//!
//! The spike rides the velocity field generated by the bulk,
//!
//! ```text
//! d lambda_1 / dt = int rho(lambda, t) / (lambda_1(t) - lambda) dlambda,
//! ```
//!
//! while the squared overlap with its initial eigenvector decays as
//!
//! ```text
//! f(t) = exp(-int_0^t phi(s) ds),
//! phi(s) = int rho(lambda, s) / (lambda_1(s) - lambda)^2 dlambda.
//! ```
//!
//! The lost weight spreads over the bulk according to a transport PDE in the
//! quantile coordinate, with a principal-value kernel and the source
//! `f(t) / (lambda_1(t) - lambda(x,t))^2`. Conditional on the eigenvalues,
//! the centered principal overlap is asymptotically Gaussian; its moment
//! ladder closes over `phi` and the transverse solution and is marched here
//! as a coupled linear ODE system, which preserves the Gaussian moment
//! identities up to integrator error.

use crate::error::{Error, Result};
use crate::matrix_mc::{mc_overlap_ensemble, MatrixPathConfig};
use crate::numerics::{
    cumulative_integral_uniform, extrapolate_to_zero, kolmogorov_distance, sample_moments,
};
use crate::spectral_model::{DensitySpec, SpectralModel};
use crate::stieltjes::{bulk_state, solve_g, support_edges};
use num_complex::Complex64;

/// Spike-to-edge margin below which the spike is considered captured.
const DEATH_MARGIN: f64 = 1e-3;
/// Evaluations this close to the capture time are refused: the overlap
/// integrals develop integrable singularities there and the theory does not
/// supply a rate to extrapolate with.
const CRITICAL_WINDOW: f64 = 1e-3;
/// Epsilon sweep reused for boundary values of the transform.
const EPS_TRIPLE: [f64; 3] = [1e-3, 5e-4, 2.5e-4];
/// Stored-row budget for the transverse PDE history.
const PDE_ROW_BUDGET: usize = 512;

/// Path of one isolated eigenvalue together with the moving bulk edge.
#[derive(Clone, Debug)]
pub struct SpikeTrajectory {
    times: Vec<f64>,
    position: Vec<f64>,
    edge: Vec<f64>,
    alive: Vec<bool>,
}

impl SpikeTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn position(&self) -> &[f64] {
        &self.position
    }

    pub fn edge(&self) -> &[f64] {
        &self.edge
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    /// First time at which the spike is flagged as captured by the bulk,
    /// if that happens within the integrated window.
    pub fn death_time(&self) -> Option<f64> {
        self.alive
            .iter()
            .position(|&a| !a)
            .map(|idx| self.times[idx])
    }

    /// Linear interpolation of the spike position.
    pub fn position_at(&self, t: f64) -> f64 {
        interp_sorted(&self.times, &self.position, t)
    }
}

fn interp_sorted(grid: &[f64], values: &[f64], x: f64) -> f64 {
    if x <= grid[0] {
        return values[0];
    }
    if x >= *grid.last().unwrap() {
        return *values.last().unwrap();
    }
    let j = grid.partition_point(|&g| g < x).max(1);
    let (g0, g1) = (grid[j - 1], grid[j]);
    let w = if g1 > g0 { (x - g0) / (g1 - g0) } else { 0.0 };
    values[j - 1] * (1.0 - w) + values[j] * w
}

/// Transport speed felt by an eigenvalue isolated at `lambda`: the real
/// boundary value of the transform there, by the epsilon sweep and
/// extrapolation of the real part alone. The density clamp of the full
/// boundary-value pair is deliberately not involved: near the edge the
/// extrapolated imaginary part wobbles at the clamp scale, while the real
/// part (all the drift needs) stays well conditioned.
fn spike_drift(model: &SpectralModel, lambda: f64, t: f64) -> Result<f64> {
    let mut vals = [0.0; 3];
    for (k, &eps) in EPS_TRIPLE.iter().enumerate() {
        vals[k] = solve_g(model, Complex64::new(lambda, eps), t)?.g.re;
    }
    Ok(extrapolate_to_zero(&EPS_TRIPLE, &vals))
}

/// Integrates the trajectory of spike `j` (zero-based, largest first) up to
/// `t_max` with classical fourth-order steps of size `t_max / 1000`, tracking
/// the upper bulk edge alongside.
///
/// The spike is flagged captured at the step where its distance to the edge
/// bottoms out inside a 1e-3 margin: the gap of a grazing spike touches the
/// margin before the actual capture time, so the minimum, not the first
/// crossing, locates the transition.
pub fn spike_trajectory(model: &SpectralModel, j: usize, t_max: f64) -> Result<SpikeTrajectory> {
    let l = model.spikes().len();
    if j >= l {
        return Err(Error::Config(format!(
            "spike index {j} out of range for {l} spikes"
        )));
    }
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::Config(format!(
            "t_max must be finite and non-negative, got {t_max}"
        )));
    }
    let a_j = model.spikes()[j];
    if t_max == 0.0 {
        let (_, hi) = crate::spectral_model::bulk_support(model.bulk());
        return Ok(SpikeTrajectory {
            times: vec![0.0],
            position: vec![a_j],
            edge: vec![hi],
            alive: vec![true],
        });
    }

    let steps = 1000usize;
    let dt = t_max / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut position = Vec::with_capacity(steps + 1);
    let mut edge = Vec::with_capacity(steps + 1);

    let (_, hi0) = crate::spectral_model::bulk_support(model.bulk());
    times.push(0.0);
    position.push(a_j);
    edge.push(hi0);

    let mut lam = a_j;
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let k1 = spike_drift(model, lam, t0)?;
        let k2 = spike_drift(model, lam + 0.5 * dt * k1, t0 + 0.5 * dt)?;
        let k3 = spike_drift(model, lam + 0.5 * dt * k2, t0 + 0.5 * dt)?;
        let k4 = spike_drift(model, lam + dt * k3, t0 + dt)?;
        lam += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t1 = (k + 1) as f64 * dt;
        let (_, hi) = support_edges(model, t1)?;
        // A captured eigenvalue rides the edge: the edge is itself a
        // characteristic of the velocity field, so once the position dips
        // below it the physical trajectory coincides with it.
        if lam < hi {
            lam = hi;
        }
        times.push(t1);
        position.push(lam);
        edge.push(hi);
    }

    // Capture detection: the smallest spike-to-edge gap inside the margin.
    // A grazing spike dips under the margin before the actual tangency, so
    // the minimum, not the first crossing, marks the transition. A gap that
    // is still strictly shrinking at the horizon has not bottomed out.
    let gaps: Vec<f64> = position.iter().zip(&edge).map(|(p, e)| p - e).collect();
    let mut death_idx = None;
    let mut k = 0;
    while k < gaps.len() {
        if gaps[k] < DEATH_MARGIN {
            let mut m = k;
            while m + 1 < gaps.len() && gaps[m + 1] < gaps[m] {
                m += 1;
            }
            if m + 1 < gaps.len() || gaps[m] <= 0.0 {
                death_idx = Some(m);
            }
            break;
        }
        k += 1;
    }
    let alive = (0..times.len())
        .map(|i| death_idx.map_or(true, |d| i < d))
        .collect();

    Ok(SpikeTrajectory {
        times,
        position,
        edge,
        alive,
    })
}

/// Capture time of the leading spike, or `None` within the window.
/// For a Dirac bulk the closed form `a_1^2` is exact; other models locate it
/// from the integrated trajectory.
fn capture_time(model: &SpectralModel, horizon: f64) -> Result<Option<f64>> {
    if model.spikes().is_empty() {
        return Err(Error::Config("model has no spikes".into()));
    }
    if matches!(model.bulk(), DensitySpec::ZeroBulk) {
        let a = model.spikes()[0];
        return Ok(Some(a * a));
    }
    let traj = spike_trajectory(model, 0, horizon)?;
    Ok(traj.death_time())
}

fn check_alive_window(model: &SpectralModel, s: f64) -> Result<()> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!(
            "time must be finite and non-negative, got {s}"
        )));
    }
    let tc = capture_time(model, 2.0 * s + 1.0)?;
    if let Some(tc) = tc {
        if s > tc - CRITICAL_WINDOW {
            return Err(Error::Domain(format!(
                "spike is captured near t = {tc:.6}; refusing evaluation at {s} \
                 within {CRITICAL_WINDOW} of the transition"
            )));
        }
    }
    Ok(())
}

/// Decay rate of the principal overlap,
///
/// ```text
/// phi(s) = int rho(lambda, s) / (lambda_1(s) - lambda)^2 dlambda.
/// ```
///
/// For a Dirac bulk this is the closed form `1 / (a_1^2 - s)`; otherwise the
/// density is solved and integrated in the quantile coordinate.
pub fn phi(model: &SpectralModel, s: f64) -> Result<f64> {
    check_alive_window(model, s)?;
    if model.spikes().is_empty() {
        return Err(Error::Config("model has no spikes".into()));
    }
    let a = model.spikes()[0];
    if matches!(model.bulk(), DensitySpec::ZeroBulk) {
        return Ok(1.0 / (a * a - s));
    }
    if s == 0.0 {
        return phi_quadrature(model, 0.0, a);
    }
    let traj = spike_trajectory(model, 0, s)?;
    phi_quadrature(model, s, *traj.position().last().unwrap())
}

/// Quadrature of `rho(lambda, s) / (lam1 - lambda)^2` over the quantile
/// coordinate of the solved bulk.
fn phi_quadrature(model: &SpectralModel, s: f64, lam1: f64) -> Result<f64> {
    if s == 0.0 {
        let m = 2048usize;
        let mut acc = 0.0;
        for k in 0..m {
            let x = (k as f64 + 0.5) / m as f64;
            let lam = crate::spectral_model::quantile_a(model.bulk(), x)?;
            acc += 1.0 / ((lam1 - lam) * (lam1 - lam));
        }
        return Ok(acc / m as f64);
    }
    let state = bulk_state(model, s, 385, 4)?;
    let m = 512usize;
    let mut acc = 0.0;
    for k in 0..m {
        let x = (k as f64 + 0.5) / m as f64;
        let lam = state.quantile(x)?;
        acc += 1.0 / ((lam1 - lam) * (lam1 - lam));
    }
    Ok(acc / m as f64)
}

/// Memoized antiderivative of `phi` on a uniform grid over `[0, t_max]`.
struct PhiTable {
    t_grid: Vec<f64>,
    phi_vals: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PhiTable {
    fn build(model: &SpectralModel, t_max: f64) -> Result<Self> {
        check_alive_window(model, t_max)?;
        if model.spikes().is_empty() {
            return Err(Error::Config("model has no spikes".into()));
        }
        let a = model.spikes()[0];
        let zero_bulk = matches!(model.bulk(), DensitySpec::ZeroBulk);
        let samples = if zero_bulk { 4096 } else { 256 };
        let dt = t_max / samples as f64;
        let traj = if zero_bulk {
            None
        } else {
            Some(spike_trajectory(model, 0, t_max)?)
        };
        let mut t_grid = Vec::with_capacity(samples + 1);
        let mut phi_vals = Vec::with_capacity(samples + 1);
        for k in 0..=samples {
            let s = k as f64 * dt;
            t_grid.push(s);
            let value = if zero_bulk {
                1.0 / (a * a - s)
            } else {
                let lam1 = traj.as_ref().unwrap().position_at(s);
                phi_quadrature(model, s, lam1)?
            };
            phi_vals.push(value);
        }
        let cumulative = cumulative_integral_uniform(&phi_vals, dt)?;
        Ok(PhiTable {
            t_grid,
            phi_vals,
            cumulative,
        })
    }

    fn phi_at(&self, s: f64) -> f64 {
        interp_sorted(&self.t_grid, &self.phi_vals, s)
    }

    /// Integral of phi from 0 to s.
    fn antiderivative(&self, s: f64) -> f64 {
        interp_sorted(&self.t_grid, &self.cumulative, s)
    }
}

/// Principal mean squared overlap `f(t) = exp(-int_0^t phi)`, zero once the
/// spike has been captured.
pub fn principal_overlap_f(model: &SpectralModel, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    if let Some(tc) = capture_time(model, 2.0 * t + 1.0)? {
        if t >= tc {
            return Ok(0.0);
        }
        if t > tc - CRITICAL_WINDOW {
            return Err(Error::Domain(format!(
                "refusing evaluation within {CRITICAL_WINDOW} of the capture time {tc:.6}"
            )));
        }
    }
    let table = PhiTable::build(model, t)?;
    Ok((-table.antiderivative(t)).exp())
}

/// Mean signed overlap of the principal eigenvector, `exp(-1/2 int_0^t phi)`.
/// Equals the square root of `principal_overlap_f` up to roundoff: both are
/// computed from the same antiderivative.
pub fn mean_principal_overlap(model: &SpectralModel, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    if let Some(tc) = capture_time(model, 2.0 * t + 1.0)? {
        if t >= tc {
            return Ok(0.0);
        }
        if t > tc - CRITICAL_WINDOW {
            return Err(Error::Domain(format!(
                "refusing evaluation within {CRITICAL_WINDOW} of the capture time {tc:.6}"
            )));
        }
    }
    let table = PhiTable::build(model, t)?;
    Ok((-0.5 * table.antiderivative(t)).exp())
}

/// Time history of the transverse overlap profile and the fluctuation
/// moments derived from it.
#[derive(Clone, Debug)]
pub struct SpikeOverlapState {
    /// Stored times (decimated history plus the final state).
    pub times: Vec<f64>,
    /// Principal overlap f at each stored time.
    pub f: Vec<f64>,
    /// Transverse profile rows `u[r][k]` on the quantile grid.
    pub u: Vec<Vec<f64>>,
    /// Overlap-weighted repulsion integral h at each stored time.
    pub h: Vec<f64>,
    /// Fluctuation variance g2 at each stored time.
    pub g2: Vec<f64>,
    /// Tail-quantile grid midpoints (x = 0 is the upper edge side).
    pub x_grid: Vec<f64>,
}

impl SpikeOverlapState {
    /// Quadrature of the transverse profile over the quantile coordinate.
    pub fn transverse_mass(&self, row: usize) -> f64 {
        let m = self.u[row].len() as f64;
        self.u[row].iter().sum::<f64>() / m
    }

    /// Largest deviation of f + integral(u) from 1 across stored rows.
    pub fn mass_balance_defect(&self) -> f64 {
        (0..self.times.len())
            .map(|r| (self.f[r] + self.transverse_mass(r) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Geometry of the evolved bulk needed by the transverse PDE at one time.
struct BulkSlices {
    lambda: Vec<f64>,
    dlambda_dx: Vec<f64>,
    velocity: Vec<f64>,
}

/// Per-run cache of the evolved-bulk geometry along the quantile grid.
///
/// A Dirac initial bulk evolves into the semicircle of radius 2 sqrt(t),
/// whose quantile shape is time-independent up to the sqrt(t) scale and
/// whose velocity field is lambda / (2t): one bisection sweep at startup
/// serves every step. Other bulks re-solve the fields at each requested
/// time, which is accurate but much slower.
enum BulkGeometry {
    ScaledSemicircle { unit_lambda: Vec<f64> },
    Solved,
}

impl BulkGeometry {
    fn for_model(model: &SpectralModel, x_grid: &[f64]) -> Result<Self> {
        if matches!(model.bulk(), DensitySpec::ZeroBulk) {
            let unit = DensitySpec::Semicircle { radius: 2.0 };
            let unit_lambda = x_grid
                .iter()
                .map(|&x| crate::spectral_model::quantile_a(&unit, x))
                .collect::<Result<Vec<f64>>>()?;
            Ok(BulkGeometry::ScaledSemicircle { unit_lambda })
        } else {
            Ok(BulkGeometry::Solved)
        }
    }

    fn slices(&self, model: &SpectralModel, t: f64, x_grid: &[f64]) -> Result<BulkSlices> {
        let m = x_grid.len();
        let mut lambda = vec![0.0; m];
        let mut velocity = vec![0.0; m];
        match self {
            BulkGeometry::ScaledSemicircle { unit_lambda } => {
                let scale = t.sqrt();
                for k in 0..m {
                    lambda[k] = scale * unit_lambda[k];
                    velocity[k] = lambda[k] / (2.0 * t);
                }
            }
            BulkGeometry::Solved => {
                let state = bulk_state(model, t, 385, 4)?;
                for k in 0..m {
                    lambda[k] = state.quantile(x_grid[k])?;
                    velocity[k] = state.v_at(lambda[k])?;
                }
            }
        }
        let h = x_grid[1] - x_grid[0];
        let mut dlambda_dx = vec![0.0; m];
        for k in 0..m {
            dlambda_dx[k] = if k == 0 {
                (lambda[1] - lambda[0]) / h
            } else if k == m - 1 {
                (lambda[m - 1] - lambda[m - 2]) / h
            } else {
                (lambda[k + 1] - lambda[k - 1]) / (2.0 * h)
            };
        }
        Ok(BulkSlices {
            lambda,
            dlambda_dx,
            velocity,
        })
    }
}

/// Principal-value transport operator plus source, in the quantile
/// coordinate. The singular part is subtracted linearly in lambda; the
/// subtracted term integrates to the velocity field (the Hilbert transform
/// of the density), and the remainder is bounded with a Taylor patch on the
/// diagonal.
fn transverse_rhs(
    u: &[f64],
    geo: &BulkSlices,
    lam1: f64,
    f_now: f64,
    du: &mut [f64],
    rate: &mut [f64],
) {
    let m = u.len();
    let hx = 1.0 / m as f64;
    // Overlap derivative in lambda via the chain rule on the uniform grid.
    let mut w_prime = vec![0.0; m];
    for k in 0..m {
        let du_dx = if k == 0 {
            (u[1] - u[0]) / hx
        } else if k == m - 1 {
            (u[m - 1] - u[m - 2]) / hx
        } else {
            (u[k + 1] - u[k - 1]) / (2.0 * hx)
        };
        w_prime[k] = du_dx / geo.dlambda_dx[k];
    }
    // Second derivative of the overlap in lambda by nonuniform second
    // differences: the bounded remainder tends to w''/2 on the diagonal,
    // and dropping that cell costs a first-order mass leak.
    let mut w_second = vec![0.0; m];
    for k in 1..m - 1 {
        let dl = geo.lambda[k] - geo.lambda[k - 1];
        let dr = geo.lambda[k + 1] - geo.lambda[k];
        w_second[k] = 2.0 * ((u[k + 1] - u[k]) / dr - (u[k] - u[k - 1]) / dl) / (dl + dr);
    }
    w_second[0] = w_second[1];
    w_second[m - 1] = w_second[m - 2];
    for i in 0..m {
        let li = geo.lambda[i];
        let ci = w_prime[i];
        let mut acc = 0.0;
        let mut r = 0.0;
        for j in 0..m {
            if j == i {
                continue;
            }
            let d = geo.lambda[j] - li;
            let w = hx / (d * d);
            acc += w * (u[j] - u[i] - ci * d);
            r += w;
        }
        // The subtracted linear part integrates to minus the velocity field
        // (the principal value of the transform); the diagonal cell carries
        // the remainder limit w''/2.
        du[i] = acc + hx * 0.5 * w_second[i] - ci * geo.velocity[i]
            + f_now / ((lam1 - li) * (lam1 - li));
        rate[i] = r;
    }
}

/// Solves the transverse overlap PDE on `x_points` quantile midpoints up to
/// `t_max`, carrying the principal overlap, the repulsion integral h, and
/// the fluctuation variance along the march.
///
/// Explicit first-order stepping with the step bounded by the inverse of the
/// largest discrete exchange rate; the fluctuation ladder is re-integrated
/// on a fine uniform grid afterwards from the recorded h samples.
pub fn transverse_pde(
    model: &SpectralModel,
    t_max: f64,
    x_points: usize,
) -> Result<SpikeOverlapState> {
    if x_points < 128 {
        return Err(Error::Config(format!(
            "transverse grid needs at least 128 points, got {x_points}"
        )));
    }
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::Config(format!(
            "t_max must be finite and non-negative, got {t_max}"
        )));
    }
    if model.spikes().is_empty() {
        return Err(Error::Config("model has no spikes".into()));
    }
    let m = x_points;
    let x_grid: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) / m as f64).collect();
    if t_max == 0.0 {
        return Ok(SpikeOverlapState {
            times: vec![0.0],
            f: vec![1.0],
            u: vec![vec![0.0; m]],
            h: vec![0.0],
            g2: vec![0.0],
            x_grid,
        });
    }
    if let Some(tc) = capture_time(model, 2.0 * t_max + 1.0)? {
        if t_max > tc - CRITICAL_WINDOW {
            return Err(Error::Domain(format!(
                "spike is captured at t = {tc:.6} before the requested horizon {t_max}"
            )));
        }
    }

    let traj = spike_trajectory(model, 0, t_max)?;
    let table = PhiTable::build(model, t_max)?;
    let geometry = BulkGeometry::for_model(model, &x_grid)?;

    // The kernel is void while u = 0, so the march starts at a microscopic
    // positive time with u = 0; the neglected transverse mass there is
    // phi(0) * t_start, far below the mass-balance tolerance.
    let t_start = t_max * 1e-6;
    let mut t = t_start;
    let mut u = vec![0.0; m];
    let mut du = vec![0.0; m];
    let mut rate = vec![0.0; m];

    let mut rec_t = vec![0.0, t_start];
    let mut rec_u = vec![vec![0.0; m], u.clone()];
    let mut rec_h = vec![0.0, 0.0];
    let mut stride = 1u64;
    let mut counter = 0u64;
    let mut rec_steps = vec![0u64, 0u64];

    while t < t_max * (1.0 - 1e-12) {
        let geo = geometry.slices(model, t, &x_grid)?;
        let lam1 = traj.position_at(t);
        let f_now = (-table.antiderivative(t)).exp();
        transverse_rhs(&u, &geo, lam1, f_now, &mut du, &mut rate);
        let rate_max = rate.iter().cloned().fold(0.0, f64::max);
        if !rate_max.is_finite() || rate_max <= 0.0 {
            return Err(Error::StepSize(format!(
                "degenerate exchange rate {rate_max} at t = {t:.3e}"
            )));
        }
        let dt = (0.25 / rate_max).min(t_max - t).min(t_max / 64.0);
        for k in 0..m {
            u[k] += dt * du[k];
            if u[k] < 0.0 {
                u[k] = 0.0;
            }
        }
        t += dt;

        counter += 1;
        if counter % stride == 0 {
            let geo_h = geometry.slices(model, t, &x_grid)?;
            let lam1_h = traj.position_at(t);
            let mut h_now = 0.0;
            for k in 0..m {
                let d = lam1_h - geo_h.lambda[k];
                h_now += u[k] / (d * d);
            }
            h_now /= m as f64;
            rec_t.push(t);
            rec_u.push(u.clone());
            rec_h.push(h_now);
            rec_steps.push(counter);
            if rec_t.len() > PDE_ROW_BUDGET {
                stride *= 2;
                let mut w = 2;
                for r in 2..rec_t.len() {
                    if rec_steps[r] % stride == 0 {
                        rec_t.swap(w, r);
                        rec_u.swap(w, r);
                        rec_h.swap(w, r);
                        rec_steps.swap(w, r);
                        w += 1;
                    }
                }
                rec_t.truncate(w);
                rec_u.truncate(w);
                rec_h.truncate(w);
                rec_steps.truncate(w);
            }
        }
    }
    if *rec_t.last().unwrap() < t {
        let geo_h = geometry.slices(model, t, &x_grid)?;
        let lam1_h = traj.position_at(t);
        let mut h_now = 0.0;
        for k in 0..m {
            let d = lam1_h - geo_h.lambda[k];
            h_now += u[k] / (d * d);
        }
        h_now /= m as f64;
        rec_t.push(t);
        rec_u.push(u.clone());
        rec_h.push(h_now);
    }

    // Principal overlap and fluctuation ladder at the stored times.
    let f_vals: Vec<f64> = rec_t
        .iter()
        .map(|&s| (-table.antiderivative(s)).exp())
        .collect();
    let ladder = march_ladder(&table, &rec_t, &rec_h, 2, &rec_t)?;

    Ok(SpikeOverlapState {
        times: rec_t,
        f: f_vals,
        u: rec_u,
        h: rec_h,
        g2: ladder,
        x_grid,
    })
}

/// Integrates the moment ladder
///
/// ```text
/// d g_n / dt = -(n/2) phi g_n + (n(n-1)/2) g_{n-2} h,  g_0 = 1, g_n(0) = 0,
/// ```
///
/// up to order `n_top` on a fine uniform grid, sampling `h` from the
/// recorded march by monotone piecewise-cubic interpolation. Returns the
/// top-order values at the requested output times. Because every even
/// moment solves the same linear system, the Gaussian relations between
/// them survive to integrator accuracy.
fn march_ladder(
    table: &PhiTable,
    h_times: &[f64],
    h_vals: &[f64],
    n_top: usize,
    out_times: &[f64],
) -> Result<Vec<f64>> {
    debug_assert!(n_top >= 2 && n_top % 2 == 0);
    let t_end = *h_times.last().unwrap();
    let orders = n_top / 2;
    let mut g = vec![0.0; orders];
    let g_of = |g: &[f64], idx: isize| -> f64 {
        if idx < 0 {
            1.0
        } else {
            g[idx as usize]
        }
    };
    let steps = 32_768usize;
    let dt = t_end / steps as f64;
    let h_at = |s: f64| catmull_rom(h_times, h_vals, s);
    let mut out = Vec::with_capacity(out_times.len());
    let mut next_out = 0usize;
    let mut t = 0.0;
    for _ in 0..=steps {
        while next_out < out_times.len() && out_times[next_out] <= t + 0.5 * dt {
            out.push(g[orders - 1]);
            next_out += 1;
        }
        if t >= t_end {
            break;
        }
        // Classical fourth-order step of the coupled ladder.
        let deriv = |g: &[f64], s: f64| -> Vec<f64> {
            let phi_s = table.phi_at(s);
            let h_s = h_at(s);
            (0..orders)
                .map(|q| {
                    let n = 2 * (q + 1) as isize;
                    let nf = n as f64;
                    -0.5 * nf * phi_s * g_of(g, q as isize)
                        + 0.5 * nf * (nf - 1.0) * g_of(g, q as isize - 1) * h_s
                })
                .collect()
        };
        let k1 = deriv(&g, t);
        let g2v: Vec<f64> = (0..orders).map(|q| g[q] + 0.5 * dt * k1[q]).collect();
        let k2 = deriv(&g2v, t + 0.5 * dt);
        let g3v: Vec<f64> = (0..orders).map(|q| g[q] + 0.5 * dt * k2[q]).collect();
        let k3 = deriv(&g3v, t + 0.5 * dt);
        let g4v: Vec<f64> = (0..orders).map(|q| g[q] + dt * k3[q]).collect();
        let k4 = deriv(&g4v, t + dt);
        for q in 0..orders {
            g[q] += dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]);
        }
        t += dt;
    }
    while next_out < out_times.len() {
        out.push(g[orders - 1]);
        next_out += 1;
    }
    Ok(out)
}

/// Centripetal-free Catmull-Rom interpolation on a sorted grid, clamped at
/// the ends. Smooth enough that the ladder integrator keeps its order.
fn catmull_rom(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let n = grid.len();
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[n - 1] {
        return values[n - 1];
    }
    let j = grid.partition_point(|&g| g < x).max(1).min(n - 1);
    let (x0, x1) = (grid[j - 1], grid[j]);
    let (y0, y1) = (values[j - 1], values[j]);
    let hseg = x1 - x0;
    if hseg <= 0.0 {
        return y0;
    }
    let s = (x - x0) / hseg;
    // One-sided slopes at the segment ends.
    let m0 = if j >= 2 {
        (y1 - values[j - 2]) / (x1 - grid[j - 2]) * hseg
    } else {
        y1 - y0
    };
    let m1 = if j + 1 < n {
        (values[j + 1] - y0) / (grid[j + 1] - x0) * hseg
    } else {
        y1 - y0
    };
    let s2 = s * s;
    let s3 = s2 * s;
    y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + m0 * (s3 - 2.0 * s2 + s)
        + y1 * (-2.0 * s3 + 3.0 * s2)
        + m1 * (s3 - s2)
}

/// Variance of the rescaled principal-overlap fluctuation at time `t`.
pub fn variance_g2(model: &SpectralModel, t: f64) -> Result<f64> {
    moments_gn(model, 2, t)
}

/// Asymptotic moment of order `n` of the centered, rescaled principal
/// overlap. Odd orders vanish identically; even orders come from the moment
/// ladder driven by the transverse solution.
pub fn moments_gn(model: &SpectralModel, n: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "time must be finite and non-negative, got {t}"
        )));
    }
    if n % 2 == 1 {
        return Ok(0.0);
    }
    if n == 0 {
        return Ok(1.0);
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    check_alive_window(model, t)?;
    let state = transverse_pde(model, t, 256)?;
    let table = PhiTable::build(model, t)?;
    let out = march_ladder(&table, &state.times, &state.h, n, &[t])?;
    Ok(out[0])
}

/// Summary of the Gaussian fluctuation test of the principal overlap
/// against direct matrix Monte Carlo.
#[derive(Clone, Debug)]
pub struct CltReport {
    pub t: f64,
    pub n_samples: usize,
    /// Sample variance of sqrt(N) * (overlap - sample mean).
    pub empirical_variance: f64,
    /// Predicted fluctuation variance at this time.
    pub g2: f64,
    /// empirical / predicted, None when the prediction vanishes.
    pub variance_ratio: Option<f64>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov distance between the centered samples and the fitted
    /// normal distribution.
    pub normal_distance: f64,
    /// Variance of sqrt(N) * (overlap - conditional mean), where each
    /// sample is centered at the mean conditional on its own eigenvalue
    /// trajectory. Present when the checkpoint grid covers [0, t] with at
    /// least two points; this is the quantity the moment ladder predicts.
    pub conditional_variance: Option<f64>,
}

/// Samples the signed principal overlap by matrix Monte Carlo, forms
/// `sqrt(N) * (overlap - sample mean)`, and reports its variance against
/// the ladder prediction `g2`, its skewness and excess kurtosis, and the
/// Kolmogorov distance to a normal fitted to the sample.
///
/// A caveat for interpreting the numbers at moderate N: the prediction is
/// conditional on the eigenvalue path, but the sampled path itself carries
/// order-1/sqrt(N) randomness (the isolated eigenvalue has its own Brownian
/// motion). The induced wander of the conditional mean
/// `exp(-(1/2N) int sum_k 1/(lambda_1-lambda_k)^2 ds)` is of the same order
/// as the eigenvector noise, so the sample-mean-centered variance sits
/// strictly above `g2` even as N grows, and near-edge excursions of the
/// path feed a heavy left tail into the skewness and kurtosis. When the
/// checkpoint grid starts at 0 and has at least two points, the report also
/// centers each sample at its own trajectory's conditional mean (exact at
/// finite N, evaluated by trapezoid on that grid) and records the variance
/// of that residual in `conditional_variance`, which isolates the
/// transverse noise the ladder describes.
///
/// The signed overlap is recovered as the square root of the squared one:
/// the mean overlap is far from zero while the spike is alive, so the sign
/// ambiguity of sampled eigenvectors is immaterial.
pub fn clt_report(model: &SpectralModel, cfg: &MatrixPathConfig) -> Result<CltReport> {
    if model.spikes().len() != 1 {
        return Err(Error::Config(format!(
            "fluctuation report needs exactly one spike, got {}",
            model.spikes().len()
        )));
    }
    let t = cfg.t_max;
    if t > 0.0 {
        check_alive_window(model, t)?;
    }
    let spectrum = crate::spectral_model::discretize(model, cfg.n)?;
    let a = crate::matrix_mc::HermitianMatrix::from_diagonal(spectrum.values());
    let mut cfg_run = cfg.clone();
    if cfg_run.checkpoints.is_empty() {
        cfg_run.checkpoints = vec![t];
    }
    if let Some(&last) = cfg_run.checkpoints.last() {
        if (last - t).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "checkpoint grid must end at t_max = {t}, got {last}"
            )));
        }
    }
    let ens = mc_overlap_ensemble(&a, &cfg_run, 0)?;
    let n = cfg.n;
    let sqrt_n = (n as f64).sqrt();
    let last_c = ens.times.len() - 1;
    let n_samples = ens.overlaps[last_c].len();

    if t == 0.0 {
        return Ok(CltReport {
            t,
            n_samples,
            empirical_variance: 0.0,
            g2: 0.0,
            variance_ratio: None,
            skewness: 0.0,
            excess_kurtosis: 0.0,
            normal_distance: 0.0,
            conditional_variance: None,
        });
    }

    let overlaps: Vec<f64> = (0..n_samples)
        .map(|s| ens.overlaps[last_c][s][0].sqrt())
        .collect();
    let mean = overlaps.iter().sum::<f64>() / n_samples as f64;
    let mut centered: Vec<f64> = overlaps.iter().map(|o| sqrt_n * (o - mean)).collect();
    let stats = sample_moments(&centered);
    let g2 = variance_g2(model, t)?;
    let sigma = stats.variance.sqrt();
    let normal_distance = if sigma > 0.0 {
        kolmogorov_distance(&mut centered, |x| {
            0.5 * (1.0 + erf_approx(x / (sigma * std::f64::consts::SQRT_2)))
        })
    } else {
        0.0
    };

    // Conditional centering needs the repulsion integral from 0 to t along
    // each sample's own trajectory: only available when the checkpoint grid
    // spans the full interval.
    let grid_spans = cfg_run.checkpoints.len() >= 2 && ens.times[0].abs() < 1e-12;
    let conditional_variance = if grid_spans {
        let mut residuals = Vec::with_capacity(n_samples);
        for (s, &overlap) in overlaps.iter().enumerate() {
            let mut integral = 0.0;
            let mut prev = 0.0;
            for c in 0..=last_c {
                let evals = &ens.eigenvalues[c][s];
                let lam1 = evals[0];
                let mut sum = 0.0;
                for &lk in &evals[1..] {
                    let d = lam1 - lk;
                    sum += 1.0 / (d * d);
                }
                if c > 0 {
                    integral += 0.5 * (sum + prev) * (ens.times[c] - ens.times[c - 1]);
                }
                prev = sum;
            }
            let conditional_mean = (-integral / (2.0 * n as f64)).exp();
            residuals.push(sqrt_n * (overlap - conditional_mean));
        }
        Some(sample_moments(&residuals).variance)
    } else {
        None
    };

    Ok(CltReport {
        t,
        n_samples,
        empirical_variance: stats.variance,
        g2,
        variance_ratio: if g2 > 0.0 {
            Some(stats.variance / g2)
        } else {
            None
        },
        skewness: stats.skewness,
        excess_kurtosis: stats.excess_kurtosis,
        normal_distance,
        conditional_variance,
    })
}

/// Abramowitz-Stegun 7.1.26 error function approximation, absolute error
/// below 1.5e-7: ample for a distribution-distance diagnostic.
fn erf_approx(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}
