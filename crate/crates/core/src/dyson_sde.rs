//! Direct simulation of the coupled eigenvalue SDE, the overlap ODE driven
//! by a frozen eigenvalue path, and the rescaled microscopic particle system
//! that appears when time is measured in units of the local level spacing.
//!
//! The eigenvalues obey
//!
//! ```text
//! dl_i = sqrt(2 / (beta N)) dB_i + (1/N) sum_{k != i} dt / (l_i - l_k),
//! ```
//!
//! integrated by Euler-Maruyama with an adaptive step tied to the smallest
//! gap. Conditional on the path, the mean squared overlaps with a fixed
//! initial eigenvector evolve deterministically through a graph Laplacian,
//!
//! ```text
//! du_i = (1/N) sum_{k != i} (u_k - u_i) / (l_k - l_i)^2 dt,
//! ```
//!
//! so the constant vector is conserved exactly and no second layer of Monte
//! Carlo variance enters. The microscopic lattice system reuses both pieces
//! with positions rescaled so the mean spacing is one.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix_mc::{sample_hermitian_increment, Beta, HermitianMatrix};
use crate::numerics::integrate_adaptive;
use crate::spectral_model::DiscreteSpectrum;

/// Adaptive step rule: dt <= KAPPA * N * (min gap)^2. The drift on the
/// tightest pair is O(1/(N gap)), so this keeps the proposed move a small
/// fraction of the gap itself.
const KAPPA: f64 = 0.1;
/// Below this step size a colliding proposal is accepted by re-sorting
/// instead of halving further.
const DT_FLOOR: f64 = 1e-12;
const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000;
/// Stored rows are decimated (stride doubled) beyond this budget.
const ROW_BUDGET: usize = 8_192;
const MESO_ROW_BUDGET: usize = 256;

/// One realization of the eigenvalue process on its accepted step times.
///
/// `values[r]` is the spectrum at `times[r]`, sorted non-increasing. Rows
/// record every accepted step until the budget forces decimation; the first
/// and final states are always present.
#[derive(Clone, Debug)]
pub struct EigenvaluePath {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    beta: f64,
    sort_repairs: usize,
    jump_alerts: usize,
    decimated: bool,
}

impl EigenvaluePath {
    pub fn n(&self) -> usize {
        self.values[0].len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r]
    }

    pub fn last_row(&self) -> &[f64] {
        self.values.last().expect("path has at least one row")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("path has at least one row")
    }

    /// Steps that were accepted by sorting at the floor step size.
    pub fn sort_repairs(&self) -> usize {
        self.sort_repairs
    }

    /// Accepted steps whose largest move exceeded ten noise standard
    /// deviations plus the drift displacement.
    pub fn jump_alerts(&self) -> usize {
        self.jump_alerts
    }

    /// True when the row budget forced the recording stride above one
    /// accepted step per row.
    pub fn decimated(&self) -> bool {
        self.decimated
    }

    #[cfg(test)]
    fn from_parts(times: Vec<f64>, values: Vec<Vec<f64>>, beta: f64) -> Self {
        EigenvaluePath {
            times,
            values,
            beta,
            sort_repairs: 0,
            jump_alerts: 0,
            decimated: false,
        }
    }
}

/// Squared overlaps of the evolving eigenvectors with one fixed initial
/// eigenvector, sampled at the path's stored times.
#[derive(Clone, Debug)]
pub struct OverlapVector {
    j: usize,
    times: Vec<f64>,
    u: Vec<Vec<f64>>,
    clip_events: usize,
}

impl OverlapVector {
    pub fn j(&self) -> usize {
        self.j
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn final_row(&self) -> &[f64] {
        self.u.last().expect("overlap vector has at least one row")
    }

    /// Steps on which a component had to be clipped from below -1e-12.
    pub fn clip_events(&self) -> usize {
        self.clip_events
    }

    /// Worst deviation of the component sum from one over all stored rows.
    pub fn max_mass_defect(&self) -> f64 {
        self.u
            .iter()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn min_adjacent_gap(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min)
}

fn is_strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] > w[1])
}

/// Recording buffer that decimates by doubling its stride when the row
/// budget is exceeded, always keeping the first row.
struct RowRecorder {
    steps: Vec<u64>,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    stride: u64,
    budget: usize,
    counter: u64,
}

impl RowRecorder {
    fn new(t0: f64, v0: Vec<f64>, budget: usize) -> Self {
        RowRecorder {
            steps: vec![0],
            times: vec![t0],
            values: vec![v0],
            stride: 1,
            budget,
            counter: 0,
        }
    }

    fn push(&mut self, t: f64, v: &[f64]) {
        self.counter += 1;
        if self.counter % self.stride != 0 {
            return;
        }
        self.steps.push(self.counter);
        self.times.push(t);
        self.values.push(v.to_vec());
        if self.values.len() > self.budget {
            self.stride *= 2;
            // Row 0 (step 0) always survives; compact in place.
            let mut w = 1;
            for r in 1..self.steps.len() {
                if self.steps[r] % self.stride == 0 {
                    self.steps.swap(w, r);
                    self.times.swap(w, r);
                    self.values.swap(w, r);
                    w += 1;
                }
            }
            self.steps.truncate(w);
            self.times.truncate(w);
            self.values.truncate(w);
        }
    }

    /// Appends the final state unconditionally, then returns the rows.
    fn finish(mut self, t: f64, v: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, bool) {
        if self.times.last().map_or(true, |&last| last < t) {
            self.times.push(t);
            self.values.push(v.to_vec());
        }
        (self.times, self.values, self.stride > 1)
    }
}

/// Integrates the eigenvalue SDE from the given spectrum up to `t_max`.
///
/// The effective step is min(dt_cap, KAPPA * N * min_gap^2), shrunk further
/// when a proposal breaks the ordering: the step halves down to 1e-12, at
/// which point the proposal is accepted sorted and a repair is counted.
/// More than a thousand consecutive rejections abort with a stiffness error.
///
/// A spectrum with coincident entries has no usable gap scale and an
/// unbounded repulsion, so it is first advanced by one exact-in-law Gaussian
/// perturbation of size min(dt_cap, t_max / 1000) through the matrix
/// representation; this exists only for beta 1 or 2.
pub fn integrate_dyson(
    spectrum: &DiscreteSpectrum,
    beta: f64,
    t_max: f64,
    dt_cap: f64,
    rng: &mut ChaCha12Rng,
) -> Result<EigenvaluePath> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }
    if !(t_max >= 0.0) || !t_max.is_finite() {
        return Err(Error::Config(format!(
            "t_max must be finite and non-negative, got {t_max}"
        )));
    }
    if !(dt_cap > 0.0) || !dt_cap.is_finite() {
        return Err(Error::Config(format!(
            "dt_cap must be finite and positive, got {dt_cap}"
        )));
    }
    if spectrum.is_empty() {
        return Err(Error::Config("spectrum must not be empty".into()));
    }
    let mut lam = spectrum.values().to_vec();
    if lam.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("spectrum contains non-finite values".into()));
    }
    if lam.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Input("spectrum must be sorted non-increasing".into()));
    }
    let n = lam.len();
    let nf = n as f64;

    let mut recorder = RowRecorder::new(0.0, lam.clone(), ROW_BUDGET);
    let mut t = 0.0;
    let mut sort_repairs = 0usize;
    let mut jump_alerts = 0usize;

    if t_max > 0.0 && n > 1 && min_adjacent_gap(&lam) == 0.0 {
        let kind = if beta == 1.0 {
            Beta::One
        } else if beta == 2.0 {
            Beta::Two
        } else {
            return Err(Error::Stiffness(format!(
                "coincident eigenvalues cannot be separated by the explicit \
                 scheme and beta = {beta} has no matrix realization"
            )));
        };
        let t0 = (t_max / 1000.0).min(dt_cap);
        let mut x = HermitianMatrix::from_diagonal(&lam);
        x += &sample_hermitian_increment(n, t0, kind, rng);
        let (eigenvalues, _) = x.eigen()?;
        lam = eigenvalues;
        t = t0;
        recorder.push(t, &lam);
    }

    let mut drift = vec![0.0; n];
    let mut proposal = vec![0.0; n];
    let mut consecutive_rejections = 0usize;
    let mut pending_dt: Option<f64> = None;

    while t < t_max * (1.0 - 1e-15) {
        let gap = if n > 1 {
            min_adjacent_gap(&lam)
        } else {
            f64::INFINITY
        };
        let rule = if gap.is_finite() {
            (KAPPA * nf * gap * gap).max(DT_FLOOR)
        } else {
            dt_cap
        };
        let dt = pending_dt
            .take()
            .unwrap_or_else(|| dt_cap.min(rule))
            .min(t_max - t);
        let at_floor = dt <= DT_FLOOR;

        drift.fill(0.0);
        for i in 0..n {
            for k in (i + 1)..n {
                let d = lam[i] - lam[k];
                if d > 0.0 {
                    let inv = 1.0 / d;
                    drift[i] += inv;
                    drift[k] -= inv;
                }
                // Exact ties carry no usable direction; the sort below
                // realizes their repulsion instead.
            }
        }
        let sigma = (2.0 * dt / (beta * nf)).sqrt();
        for i in 0..n {
            drift[i] /= nf;
            let z: f64 = rng.sample(StandardNormal);
            proposal[i] = lam[i] + dt * drift[i] + sigma * z;
        }

        let ordered = is_strictly_decreasing(&proposal) || n == 1;
        if !ordered && !at_floor {
            consecutive_rejections += 1;
            if consecutive_rejections > MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::Stiffness(format!(
                    "{MAX_CONSECUTIVE_REJECTIONS} consecutive collisions near t = {t:.6e} \
                     (min gap {gap:.3e})"
                )));
            }
            pending_dt = Some((dt / 2.0).max(DT_FLOOR));
            continue;
        }
        if !ordered {
            proposal.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
            sort_repairs += 1;
        }
        let limit_base = 10.0 * sigma;
        if (0..n).any(|i| (proposal[i] - lam[i]).abs() > limit_base + dt * drift[i].abs()) {
            jump_alerts += 1;
        }
        lam.copy_from_slice(&proposal);
        t += dt;
        consecutive_rejections = 0;
        recorder.push(t, &lam);
    }

    let (times, values, decimated) = recorder.finish(t_max.max(t), &lam);
    Ok(EigenvaluePath {
        times,
        values,
        beta,
        sort_repairs,
        jump_alerts,
        decimated,
    })
}

/// Evolves the squared overlaps with initial eigenvector `j` (zero-based)
/// along a frozen eigenvalue path.
///
/// Explicit Euler in flux form: every pair exchanges
/// (u_k - u_i) / (N (l_k - l_i)^2) antisymmetrically, so the total mass is
/// conserved to machine precision. Row intervals are subdivided when the
/// largest exchange rate demands it, with eigenvalues interpolated linearly
/// inside the interval.
pub fn integrate_overlap_ode(path: &EigenvaluePath, j: usize) -> Result<OverlapVector> {
    let n = path.n();
    if j >= n {
        return Err(Error::Config(format!(
            "reference index {j} out of range for {n} eigenvalues"
        )));
    }
    for (r, row) in path.rows().iter().enumerate() {
        if n > 1 && min_adjacent_gap(row) <= 0.0 {
            return Err(Error::SingularKernel(format!(
                "coincident eigenvalues at stored time {} (row {r})",
                path.times()[r]
            )));
        }
    }

    let mut u = vec![0.0; n];
    u[j] = 1.0;
    let mut rows = Vec::with_capacity(path.times().len());
    rows.push(u.clone());
    let mut clip_events = 0usize;

    let inv_n = 1.0 / n as f64;
    let mut lam_s = vec![0.0; n];
    let mut du = vec![0.0; n];
    let mut rate = vec![0.0; n];

    for r in 0..path.times().len() - 1 {
        let (t0, t1) = (path.times()[r], path.times()[r + 1]);
        let (a, b) = (path.row(r), path.row(r + 1));
        let span = t1 - t0;
        let mut s = 0.0;
        while s < span * (1.0 - 1e-12) {
            let frac = s / span;
            for i in 0..n {
                lam_s[i] = a[i] + frac * (b[i] - a[i]);
            }
            du.fill(0.0);
            rate.fill(0.0);
            for i in 0..n {
                for k in (i + 1)..n {
                    let d = lam_s[i] - lam_s[k];
                    let w = inv_n / (d * d);
                    let flux = w * (u[k] - u[i]);
                    du[i] += flux;
                    du[k] -= flux;
                    rate[i] += w;
                    rate[k] += w;
                }
            }
            let rate_max = rate.iter().cloned().fold(0.0, f64::max);
            let dt = if rate_max > 0.0 {
                (span - s).min(0.45 / rate_max)
            } else {
                span - s
            };
            for i in 0..n {
                u[i] += dt * du[i];
                if u[i] < 0.0 {
                    if u[i] < -1e-12 {
                        clip_events += 1;
                    }
                    u[i] = 0.0;
                }
            }
            s += dt;
        }
        rows.push(u.clone());
    }

    let out = OverlapVector {
        j,
        times: path.times().to_vec(),
        u: rows,
        clip_events,
    };
    let defect = out.max_mass_defect();
    if defect > 1e-8 {
        return Err(Error::numeric(
            "overlap ode",
            format!("mass defect {defect:.3e} exceeds 1e-8"),
        ));
    }
    Ok(out)
}

/// Deterministic lattice overlap weights: the inverse Fourier coefficients
///
/// ```text
/// v_n(tau) = int_0^1 exp(-2 pi^2 xi (1 - xi) rho tau) cos(2 pi xi n) dxi,
/// ```
///
/// computed by adaptive quadrature to 1e-12 absolute. Exactly symmetric in
/// n <-> -n by construction.
pub fn fekete_v(n: i64, tau: f64, rho_j: f64) -> Result<f64> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!(
            "tau must be finite and non-negative, got {tau}"
        )));
    }
    if !(rho_j > 0.0) || !rho_j.is_finite() {
        return Err(Error::Domain(format!(
            "local density must be positive, got {rho_j}"
        )));
    }
    let m = n.unsigned_abs() as f64;
    let decay = 2.0 * PI * PI * rho_j * tau;
    let f = |xi: f64| (-decay * xi * (1.0 - xi)).exp() * (2.0 * PI * xi * m).cos();
    // Seed panels at the cosine oscillation scale before refining.
    let panels = 8 + 4 * n.unsigned_abs() as usize;
    integrate_adaptive(&f, 0.0, 1.0, 1e-12, panels)
}

/// Long-time limit of the lattice weights: a Cauchy profile in the lattice
/// index, tau rho / (n^2 + pi^2 tau^2 rho^2).
pub fn cauchy_profile(n: i64, tau: f64, rho: f64) -> Result<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!(
            "local density must be positive, got {rho}"
        )));
    }
    let nf = n as f64;
    Ok(tau * rho / (nf * nf + PI * PI * tau * tau * rho * rho))
}

/// Snapshot of the truncated lattice particle system.
///
/// Index `n` runs over -K..=K and maps to slot `n + K`. Positions start on
/// the integer lattice; weights start as the indicator of n = 0.
#[derive(Clone, Debug)]
pub struct MesoscopicState {
    pub rho_j: f64,
    pub tau: f64,
    pub k_half: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl MesoscopicState {
    pub fn slot(&self, n: i64) -> usize {
        (n + self.k_half as i64) as usize
    }

    pub fn position(&self, n: i64) -> f64 {
        self.x[self.slot(n)]
    }

    pub fn weight(&self, n: i64) -> f64 {
        self.v[self.slot(n)]
    }

    pub fn sum_v(&self) -> f64 {
        self.v.iter().sum()
    }

    /// Weight that has reached the outer quarter of the index range, where
    /// truncation distorts the dynamics.
    pub fn boundary_mass(&self) -> f64 {
        let k = self.k_half as i64;
        (-k..=k)
            .filter(|n| 4 * n.abs() > 3 * k)
            .map(|n| self.weight(n))
            .sum()
    }
}

/// Evolution rate of the weights at frozen positions, in flux form, plus the
/// largest per-slot exchange rate (for step-size control).
fn weight_rate(x: &[f64], v: &[f64], rho: f64, dv: &mut [f64], rate: &mut [f64]) -> f64 {
    let m = x.len();
    dv.fill(0.0);
    rate.fill(0.0);
    for i in 0..m {
        for k in (i + 1)..m {
            let d = x[i] - x[k];
            let w = rho / (d * d);
            let flux = w * (v[k] - v[i]);
            dv[i] += flux;
            dv[k] -= flux;
            rate[i] += w;
            rate[k] += w;
        }
    }
    rate.iter().cloned().fold(0.0, f64::max)
}

/// Simulates the truncated lattice system: 2K+1 particles started on the
/// integer lattice with unit local density `rho_j`, and the weight vector
/// started as the indicator of the center site.
///
/// Each particle interacts with a window of neighbors symmetric in lattice
/// index (half-width K - |n|), which keeps the integer lattice an exact
/// stationary point of the noise-free drift; the weight exchange runs over
/// the full truncated index set, so the total weight is conserved exactly.
/// With `with_noise` false the positions follow the deterministic most
/// probable trajectory; with it true they diffuse with variance 2 rho / beta
/// per unit time. Weights advance by a classical fourth-order step at frozen
/// positions within each accepted move.
pub fn simulate_mesoscopic(
    k_half: usize,
    tau_max: f64,
    rho_j: f64,
    beta: f64,
    with_noise: bool,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<MesoscopicState>> {
    if k_half < 32 {
        return Err(Error::Config(format!(
            "truncation half-width must be at least 32, got {k_half}"
        )));
    }
    if !(tau_max > 0.0) || !tau_max.is_finite() {
        return Err(Error::Config(format!(
            "tau_max must be finite and positive, got {tau_max}"
        )));
    }
    if !(rho_j > 0.0) || !rho_j.is_finite() {
        return Err(Error::Config(format!(
            "local density must be positive, got {rho_j}"
        )));
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }

    let k = k_half as i64;
    let m = 2 * k_half + 1;
    let mut x: Vec<f64> = (-k..=k).map(|n| n as f64).collect();
    let mut v = vec![0.0; m];
    v[k_half] = 1.0;

    // Joint (step, tau, x, v) rows, decimated together by stride doubling.
    let mut rec_steps: Vec<u64> = vec![0];
    let mut rec_taus: Vec<f64> = vec![0.0];
    let mut rec_x: Vec<Vec<f64>> = vec![x.clone()];
    let mut rec_v: Vec<Vec<f64>> = vec![v.clone()];
    let mut stride: u64 = 1;
    let mut counter: u64 = 0;

    let mut drift = vec![0.0; m];
    let mut proposal = vec![0.0; m];
    let mut dv = vec![0.0; m];
    let mut rate = vec![0.0; m];
    let mut stage = vec![0.0; m];
    let mut acc = vec![0.0; m];

    let mut tau = 0.0;
    let mut pending: Option<f64> = None;
    let mut consecutive_rejections = 0usize;
    let dtau_cap = 0.1 / rho_j;

    while tau < tau_max * (1.0 - 1e-15) {
        let gap = min_adjacent_gap_ascending(&x);
        let rule = (KAPPA * gap * gap / rho_j).max(DT_FLOOR);
        let dtau = pending
            .take()
            .unwrap_or_else(|| dtau_cap.min(rule))
            .min(tau_max - tau);
        let at_floor = dtau <= DT_FLOOR;

        // Windowed repulsion: slot s talks to slots within K - |n| lattice
        // places on either side.
        for s in 0..m {
            let w_half = k_half - (s as i64 - k).unsigned_abs() as usize;
            let mut d = 0.0;
            for step in 1..=w_half {
                d += 1.0 / (x[s] - x[s - step]) + 1.0 / (x[s] - x[s + step]);
            }
            drift[s] = rho_j * d;
        }
        let sigma = if with_noise {
            (2.0 * rho_j * dtau / beta).sqrt()
        } else {
            0.0
        };
        for s in 0..m {
            let z: f64 = if with_noise {
                rng.sample(StandardNormal)
            } else {
                0.0
            };
            proposal[s] = x[s] + dtau * drift[s] + sigma * z;
        }
        let ordered = proposal.windows(2).all(|w| w[0] < w[1]);
        if !ordered && !at_floor {
            consecutive_rejections += 1;
            if consecutive_rejections > MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::Stiffness(format!(
                    "{MAX_CONSECUTIVE_REJECTIONS} consecutive collisions near tau = {tau:.6e}"
                )));
            }
            pending = Some((dtau / 2.0).max(DT_FLOOR));
            continue;
        }
        if !ordered {
            proposal.sort_by(|a, b| a.partial_cmp(b).expect("finite positions"));
        }

        // Fourth-order weight update at frozen positions, substepped when
        // the exchange rate outruns the move.
        let mut s_done = 0.0;
        while s_done < dtau * (1.0 - 1e-12) {
            let r_max = weight_rate(&x, &v, rho_j, &mut dv, &mut rate);
            let h = if r_max > 0.0 {
                (dtau - s_done).min(1.0 / r_max)
            } else {
                dtau - s_done
            };
            // dv already holds k1.
            for s in 0..m {
                acc[s] = dv[s];
                stage[s] = v[s] + 0.5 * h * dv[s];
            }
            weight_rate(&x, &stage, rho_j, &mut dv, &mut rate);
            for s in 0..m {
                acc[s] += 2.0 * dv[s];
                stage[s] = v[s] + 0.5 * h * dv[s];
            }
            weight_rate(&x, &stage, rho_j, &mut dv, &mut rate);
            for s in 0..m {
                acc[s] += 2.0 * dv[s];
                stage[s] = v[s] + h * dv[s];
            }
            weight_rate(&x, &stage, rho_j, &mut dv, &mut rate);
            for s in 0..m {
                v[s] += h / 6.0 * (acc[s] + dv[s]);
                if v[s] < 0.0 {
                    v[s] = 0.0;
                }
            }
            s_done += h;
        }

        x.copy_from_slice(&proposal);
        tau += dtau;
        consecutive_rejections = 0;
        counter += 1;
        if counter % stride == 0 {
            rec_steps.push(counter);
            rec_taus.push(tau);
            rec_x.push(x.clone());
            rec_v.push(v.clone());
            if rec_steps.len() > MESO_ROW_BUDGET {
                stride *= 2;
                let mut w = 1;
                for r in 1..rec_steps.len() {
                    if rec_steps[r] % stride == 0 {
                        rec_steps.swap(w, r);
                        rec_taus.swap(w, r);
                        rec_x.swap(w, r);
                        rec_v.swap(w, r);
                        w += 1;
                    }
                }
                rec_steps.truncate(w);
                rec_taus.truncate(w);
                rec_x.truncate(w);
                rec_v.truncate(w);
            }
        }
    }

    if rec_taus.last().map_or(true, |&last| last < tau) {
        rec_taus.push(tau);
        rec_x.push(x.clone());
        rec_v.push(v.clone());
    }
    let mut states = Vec::with_capacity(rec_taus.len());
    for ((t, xr), vr) in rec_taus.into_iter().zip(rec_x).zip(rec_v) {
        let state = MesoscopicState {
            rho_j,
            tau: t,
            k_half,
            x: xr,
            v: vr,
        };
        let total = state.sum_v();
        if total > 1.0 + 1e-8 || state.v.iter().any(|&w| w < 0.0) {
            return Err(Error::numeric(
                "mesoscopic weights",
                format!("weight sum {total} escaped [0, 1 + 1e-8] at tau {t}"),
            ));
        }
        states.push(state);
    }
    Ok(states)
}

fn min_adjacent_gap_ascending(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}
