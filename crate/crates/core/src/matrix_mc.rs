//! Monte Carlo ground truth for the matrix diffusion `X_t = A + B_t` and its
//! Ornstein-Uhlenbeck variant, together with squared-overlap measurements
//! between the time-t eigenbasis and the initial one.
//!
//! `B_t` is a Hermitian Brownian motion normalized so that an off-diagonal
//! entry carries total variance `t/N` (split evenly between real and
//! imaginary parts in the complex case) and a diagonal entry carries
//! `(2/beta) t/N`. With this scaling the spectrum of `B_t` alone fills
//! `[-2 sqrt(t), 2 sqrt(t)]` for large `N`, and the eigenvalues of `X_t`
//! perform Dyson dynamics at inverse temperature `beta`.
//!
//! The Ornstein-Uhlenbeck variant solves `dX_t = -X_t dt / 2 + dB_t`. Its
//! entrywise transition over a step `d` is sampled exactly,
//! `X <- exp(-d/2) X + xi`, where `xi` is a fresh Hermitian Gaussian at the
//! Brownian entry scales with time parameter `1 - exp(-d)`, so checkpoint
//! marginals carry no discretization bias. The invariant law is the Wigner
//! ensemble whose spectral density is the radius-2 semicircle.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{substream, StreamKind};

/// Symmetry class of the noise: real symmetric (`One`) or complex Hermitian
/// (`Two`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Beta {
    One,
    Two,
}

impl Beta {
    pub fn value(self) -> f64 {
        match self {
            Beta::One => 1.0,
            Beta::Two => 2.0,
        }
    }
}

/// Evolution law for the matrix path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dynamics {
    /// `X_t = A + B_t`: checkpoint increments are sampled directly, using
    /// Brownian additivity, with no time stepping in between.
    Additive,
    /// `dX_t = -X_t dt / 2 + dB_t`, sampled by exact transitions.
    OrnsteinUhlenbeck,
}

/// Configuration for a batch of matrix paths sharing one master seed.
#[derive(Clone, Debug)]
pub struct MatrixPathConfig {
    pub n: usize,
    pub beta: Beta,
    pub t_max: f64,
    /// Sorted observation times in `[0, t_max]`. An empty list is shorthand
    /// for observing at `t_max` only.
    pub checkpoints: Vec<f64>,
    pub dynamics: Dynamics,
    pub seed: u64,
    pub n_samples: usize,
}

impl MatrixPathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("matrix dimension must be at least 1".into()));
        }
        if !self.t_max.is_finite() || self.t_max < 0.0 {
            return Err(Error::Config(format!(
                "t_max must be finite and non-negative, got {}",
                self.t_max
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        let mut prev = 0.0;
        for (k, &t) in self.checkpoints.iter().enumerate() {
            if !t.is_finite() || t < 0.0 || t > self.t_max {
                return Err(Error::Config(format!(
                    "checkpoint {k} = {t} lies outside [0, {}]",
                    self.t_max
                )));
            }
            if t < prev {
                return Err(Error::Config(format!(
                    "checkpoints must be sorted, but entry {k} = {t} < {prev}"
                )));
            }
            prev = t;
        }
        Ok(())
    }

    fn checkpoint_times(&self) -> Vec<f64> {
        if self.checkpoints.is_empty() {
            vec![self.t_max]
        } else {
            self.checkpoints.clone()
        }
    }
}

/// A Hermitian matrix in either symmetry class. Real symmetric states keep
/// the cheaper real eigensolver; mixing classes promotes to complex.
#[derive(Clone, Debug)]
pub enum HermitianMatrix {
    Symmetric(DMatrix<f64>),
    Complex(DMatrix<Complex<f64>>),
}

impl HermitianMatrix {
    pub fn zero(n: usize) -> Self {
        HermitianMatrix::Symmetric(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        HermitianMatrix::Symmetric(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        match self {
            HermitianMatrix::Symmetric(m) => m.nrows(),
            HermitianMatrix::Complex(m) => m.nrows(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            HermitianMatrix::Symmetric(m) => m.iter().fold(0.0, |acc, x| acc.max(x.abs())),
            HermitianMatrix::Complex(m) => m.iter().fold(0.0, |acc, z| acc.max(z.norm())),
        }
    }

    /// Largest entrywise deviation between the matrix and its adjoint.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = match self {
                    HermitianMatrix::Symmetric(m) => (m[(i, j)] - m[(j, i)]).abs(),
                    HermitianMatrix::Complex(m) => (m[(i, j)] - m[(j, i)].conj()).norm(),
                };
                worst = worst.max(d);
            }
        }
        worst
    }

    fn to_complex(&self) -> DMatrix<Complex<f64>> {
        match self {
            HermitianMatrix::Symmetric(m) => m.map(|x| Complex::new(x, 0.0)),
            HermitianMatrix::Complex(m) => m.clone(),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            HermitianMatrix::Symmetric(m) => m.iter().all(|x| x.is_finite()),
            HermitianMatrix::Complex(m) => m.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        }
    }

    /// Eigenvalues in non-increasing order with the matching eigenbasis.
    /// Each eigenvector is normalized so its largest-modulus component is
    /// real and positive; squared overlaps do not depend on this, but stable
    /// signs make paths and debug dumps comparable across runs.
    pub fn eigen(&self) -> Result<(Vec<f64>, EigenBasis)> {
        if !self.is_finite() {
            return Err(Error::Input("matrix has NaN or infinite entries".into()));
        }
        let n = self.dim();
        let max_iter = 80 * n.max(8);
        match self {
            HermitianMatrix::Symmetric(m) => {
                let eig = m
                    .clone()
                    .try_symmetric_eigen(f64::EPSILON, max_iter)
                    .ok_or_else(|| eigen_failure(n, self.max_abs(), max_iter))?;
                let (vals, mut basis) = sort_columns_real(&eig.eigenvalues, &eig.eigenvectors);
                fix_signs_real(&mut basis);
                Ok((vals, EigenBasis::Orthogonal(basis)))
            }
            HermitianMatrix::Complex(m) => {
                let eig = m
                    .clone()
                    .try_symmetric_eigen(f64::EPSILON, max_iter)
                    .ok_or_else(|| eigen_failure(n, self.max_abs(), max_iter))?;
                let (vals, mut basis) = sort_columns_complex(&eig.eigenvalues, &eig.eigenvectors);
                fix_phases_complex(&mut basis);
                Ok((vals, EigenBasis::Unitary(basis)))
            }
        }
    }
}

impl std::ops::AddAssign<&HermitianMatrix> for HermitianMatrix {
    fn add_assign(&mut self, rhs: &HermitianMatrix) {
        assert_eq!(self.dim(), rhs.dim(), "dimension mismatch in matrix sum");
        if matches!(self, HermitianMatrix::Symmetric(_))
            && matches!(rhs, HermitianMatrix::Complex(_))
        {
            *self = HermitianMatrix::Complex(self.to_complex());
        }
        match (&mut *self, rhs) {
            (HermitianMatrix::Symmetric(a), HermitianMatrix::Symmetric(b)) => *a += b,
            (HermitianMatrix::Complex(a), HermitianMatrix::Complex(b)) => *a += b,
            (HermitianMatrix::Complex(a), HermitianMatrix::Symmetric(b)) => {
                for j in 0..b.ncols() {
                    for i in 0..b.nrows() {
                        a[(i, j)] += Complex::new(b[(i, j)], 0.0);
                    }
                }
            }
            (HermitianMatrix::Symmetric(_), HermitianMatrix::Complex(_)) => unreachable!(),
        }
    }
}

impl std::ops::MulAssign<f64> for HermitianMatrix {
    fn mul_assign(&mut self, c: f64) {
        match self {
            HermitianMatrix::Symmetric(m) => *m *= c,
            HermitianMatrix::Complex(m) => *m *= Complex::new(c, 0.0),
        }
    }
}

fn eigen_failure(n: usize, max_abs: f64, max_iter: usize) -> Error {
    Error::numeric(
        "eigendecomposition",
        format!(
            "symmetric QR iteration did not converge within {max_iter} sweeps \
             (n = {n}, max entry modulus = {max_abs:.3e})"
        ),
    )
}

fn sort_order(vals: &DVector<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).expect("finite eigenvalues"));
    idx
}

fn sort_columns_real(vals: &DVector<f64>, vecs: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let idx = sort_order(vals);
    let n = idx.len();
    let mut basis = DMatrix::zeros(n, n);
    for (c, &k) in idx.iter().enumerate() {
        basis.set_column(c, &vecs.column(k));
    }
    (idx.iter().map(|&k| vals[k]).collect(), basis)
}

fn sort_columns_complex(
    vals: &DVector<f64>,
    vecs: &DMatrix<Complex<f64>>,
) -> (Vec<f64>, DMatrix<Complex<f64>>) {
    let idx = sort_order(vals);
    let n = idx.len();
    let mut basis = DMatrix::zeros(n, n);
    for (c, &k) in idx.iter().enumerate() {
        basis.set_column(c, &vecs.column(k));
    }
    (idx.iter().map(|&k| vals[k]).collect(), basis)
}

fn fix_signs_real(basis: &mut DMatrix<f64>) {
    for c in 0..basis.ncols() {
        let mut col = basis.column_mut(c);
        let lead = col.iter().cloned().fold(0.0f64, |acc: f64, x| {
            if x.abs() > acc.abs() {
                x
            } else {
                acc
            }
        });
        if lead < 0.0 {
            col *= -1.0;
        }
    }
}

fn fix_phases_complex(basis: &mut DMatrix<Complex<f64>>) {
    for c in 0..basis.ncols() {
        let mut col = basis.column_mut(c);
        let mut lead = Complex::new(0.0, 0.0);
        for z in col.iter() {
            if z.norm_sqr() > lead.norm_sqr() {
                lead = *z;
            }
        }
        let r = lead.norm();
        if r > 0.0 {
            let phase = lead.conj() / r;
            col *= phase;
        }
    }
}

/// An orthonormal eigenbasis, stored column per eigenvector.
#[derive(Clone, Debug)]
pub enum EigenBasis {
    Orthogonal(DMatrix<f64>),
    Unitary(DMatrix<Complex<f64>>),
}

impl EigenBasis {
    pub fn identity(n: usize) -> Self {
        EigenBasis::Orthogonal(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        match self {
            EigenBasis::Orthogonal(b) => b.nrows(),
            EigenBasis::Unitary(b) => b.nrows(),
        }
    }

    /// Largest entrywise deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let n = self.dim();
        let gram: DMatrix<Complex<f64>> = match self {
            EigenBasis::Orthogonal(b) => (b.transpose() * b).map(|x| Complex::new(x, 0.0)),
            EigenBasis::Unitary(b) => b.adjoint() * b,
        };
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - Complex::new(target, 0.0)).norm());
            }
        }
        worst
    }

    fn to_complex(&self) -> DMatrix<Complex<f64>> {
        match self {
            EigenBasis::Orthogonal(b) => b.map(|x| Complex::new(x, 0.0)),
            EigenBasis::Unitary(b) => b.clone(),
        }
    }

    /// Full matrix of squared overlaps: entry `(i, j)` is the squared modulus
    /// of the scalar product of eigenvector `i` of `self` with eigenvector
    /// `j` of `initial`.
    pub fn overlap_matrix(&self, initial: &EigenBasis) -> DMatrix<f64> {
        match (self, initial) {
            (EigenBasis::Orthogonal(bt), EigenBasis::Orthogonal(b0)) => {
                (bt.transpose() * b0).map(|x| x * x)
            }
            (EigenBasis::Unitary(bt), EigenBasis::Unitary(b0)) => {
                (bt.adjoint() * b0).map(|z| z.norm_sqr())
            }
            (bt, b0) => (bt.to_complex().adjoint() * b0.to_complex()).map(|z| z.norm_sqr()),
        }
    }

    /// Squared overlaps of every eigenvector of `self` with column `j` of
    /// `initial` only; avoids the full matrix product when a single initial
    /// vector is tracked.
    pub fn overlap_column(&self, initial: &EigenBasis, j: usize) -> Vec<f64> {
        let n = self.dim();
        match (self, initial) {
            (EigenBasis::Orthogonal(bt), EigenBasis::Orthogonal(b0)) => {
                let col = b0.column(j);
                (0..n).map(|i| bt.column(i).dot(&col).powi(2)).collect()
            }
            (EigenBasis::Unitary(bt), EigenBasis::Unitary(b0)) => {
                let col = b0.column(j);
                (0..n)
                    .map(|i| bt.column(i).dotc(&col).norm_sqr())
                    .collect()
            }
            (EigenBasis::Unitary(bt), EigenBasis::Orthogonal(b0)) => {
                let col: DVector<Complex<f64>> =
                    b0.column(j).map(|x| Complex::new(x, 0.0)).into_owned();
                (0..n)
                    .map(|i| bt.column(i).dotc(&col).norm_sqr())
                    .collect()
            }
            (EigenBasis::Orthogonal(bt), EigenBasis::Unitary(b0)) => {
                let col = b0.column(j);
                (0..n)
                    .map(|i| {
                        let mut acc = Complex::new(0.0, 0.0);
                        for r in 0..n {
                            acc += col[r] * bt[(r, i)];
                        }
                        acc.norm_sqr()
                    })
                    .collect()
            }
        }
    }
}

/// One observation of the squared-overlap matrix along a sampled path.
#[derive(Clone, Debug)]
pub struct OverlapRecord {
    pub time: f64,
    pub sample_index: usize,
    /// Eigenvalues of the observed matrix, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Entry `(i, j)`: squared overlap of time-t eigenvector `i` with
    /// initial eigenvector `j`.
    pub squared_overlaps: DMatrix<f64>,
}

impl OverlapRecord {
    /// Worst deviation of any row or column sum from 1. Both bases being
    /// orthonormal makes the overlap matrix doubly stochastic, so this is a
    /// pure roundoff diagnostic.
    pub fn bistochastic_defect(&self) -> f64 {
        let n = self.squared_overlaps.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.squared_overlaps[(i, j)]).sum();
            let col: f64 = (0..n).map(|j| self.squared_overlaps[(j, i)]).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        worst
    }
}

/// Samples one Hermitian Brownian increment over time `dt`: off-diagonal
/// variance `dt/N` in total, diagonal variance `2 dt / (beta N)`. Panics if
/// `dt` is not strictly positive and finite.
pub fn sample_hermitian_increment(
    n: usize,
    dt: f64,
    beta: Beta,
    rng: &mut ChaCha12Rng,
) -> HermitianMatrix {
    assert!(dt > 0.0 && dt.is_finite(), "increment time must be positive");
    let nf = n as f64;
    match beta {
        Beta::One => {
            let sig_off = (dt / nf).sqrt();
            let sig_diag = (2.0 * dt / nf).sqrt();
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                let g: f64 = rng.sample(StandardNormal);
                m[(i, i)] = sig_diag * g;
                for j in (i + 1)..n {
                    let g: f64 = rng.sample(StandardNormal);
                    let x = sig_off * g;
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            HermitianMatrix::Symmetric(m)
        }
        Beta::Two => {
            let sig_off = (dt / (2.0 * nf)).sqrt();
            let sig_diag = (dt / nf).sqrt();
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                let g: f64 = rng.sample(StandardNormal);
                m[(i, i)] = Complex::new(sig_diag * g, 0.0);
                for j in (i + 1)..n {
                    let gre: f64 = rng.sample(StandardNormal);
                    let gim: f64 = rng.sample(StandardNormal);
                    let z = Complex::new(sig_off * gre, sig_off * gim);
                    m[(i, j)] = z;
                    m[(j, i)] = z.conj();
                }
            }
            HermitianMatrix::Complex(m)
        }
    }
}

/// Draws from the invariant law of the Ornstein-Uhlenbeck flow: a Wigner
/// matrix with off-diagonal entry variance `1/N`, whose spectrum converges
/// to the radius-2 semicircle.
pub fn sample_stationary(n: usize, beta: Beta, rng: &mut ChaCha12Rng) -> HermitianMatrix {
    sample_hermitian_increment(n, 1.0, beta, rng)
}

/// Evolves `a` through the configured dynamics and returns the state at each
/// checkpoint. The noise stream is the substream of `cfg.seed` indexed by
/// `sample_index`, so paths are reproducible entry by entry and independent
/// across sample indices.
pub fn evolve(
    a: &HermitianMatrix,
    cfg: &MatrixPathConfig,
    sample_index: usize,
) -> Result<Vec<HermitianMatrix>> {
    cfg.validate()?;
    if a.dim() != cfg.n {
        return Err(Error::Input(format!(
            "initial matrix is {}x{} but the configuration says N = {}",
            a.dim(),
            a.dim(),
            cfg.n
        )));
    }
    let scale = 1.0 + a.max_abs();
    if a.hermiticity_defect() > 1e-10 * scale {
        return Err(Error::Input(
            "initial matrix is not Hermitian within 1e-10".into(),
        ));
    }
    let mut rng = substream(cfg.seed, StreamKind::MatrixIncrement, sample_index as u64);
    let mut x = a.clone();
    if cfg.beta == Beta::Two {
        x = HermitianMatrix::Complex(x.to_complex());
    }
    let mut out = Vec::with_capacity(cfg.checkpoint_times().len());
    let mut t_prev = 0.0;
    for t in cfg.checkpoint_times() {
        let delta = t - t_prev;
        if delta > 0.0 {
            match cfg.dynamics {
                Dynamics::Additive => {
                    x += &sample_hermitian_increment(cfg.n, delta, cfg.beta, &mut rng);
                }
                Dynamics::OrnsteinUhlenbeck => {
                    x *= (-delta / 2.0).exp();
                    let noise_time = 1.0 - (-delta).exp();
                    x += &sample_hermitian_increment(cfg.n, noise_time, cfg.beta, &mut rng);
                }
            }
        }
        t_prev = t;
        out.push(x.clone());
    }
    Ok(out)
}

/// Diagonalizes `x` and measures the squared overlaps against an initial
/// orthonormal basis (within 1e-10). Fails on non-Hermitian input.
pub fn eigen_overlaps(
    x: &HermitianMatrix,
    initial_basis: &EigenBasis,
    time: f64,
    sample_index: usize,
) -> Result<OverlapRecord> {
    if x.dim() != initial_basis.dim() {
        return Err(Error::Input(format!(
            "matrix dimension {} does not match basis dimension {}",
            x.dim(),
            initial_basis.dim()
        )));
    }
    let scale = 1.0 + x.max_abs();
    if x.hermiticity_defect() > 1e-10 * scale {
        return Err(Error::Input(
            "matrix is not Hermitian within 1e-10 of its entry scale".into(),
        ));
    }
    if initial_basis.orthonormality_defect() > 1e-10 {
        return Err(Error::Input(
            "initial basis is not orthonormal within 1e-10".into(),
        ));
    }
    let (eigenvalues, basis_t) = x.eigen()?;
    let squared_overlaps = basis_t.overlap_matrix(initial_basis);
    Ok(OverlapRecord {
        time,
        sample_index,
        eigenvalues,
        squared_overlaps,
    })
}

/// Raw per-sample overlap data against one tracked initial eigenvector.
/// Index layout: `eigenvalues[c][s][i]` and `overlaps[c][s][i]` for
/// checkpoint `c`, sample `s`, eigenvector `i` of the sampled matrix.
#[derive(Clone, Debug)]
pub struct OverlapEnsemble {
    pub times: Vec<f64>,
    pub j: usize,
    pub eigenvalues: Vec<Vec<Vec<f64>>>,
    pub overlaps: Vec<Vec<Vec<f64>>>,
}

/// Mean squared overlaps with the tracked initial eigenvector, with the
/// standard error of each mean.
#[derive(Clone, Debug)]
pub struct MeanOverlapSeries {
    pub times: Vec<f64>,
    pub j: usize,
    /// `mean[c][i]`: sample mean of the squared overlap of time-t
    /// eigenvector `i` with initial eigenvector `j` at checkpoint `c`.
    pub mean: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
}

/// Runs `cfg.n_samples` independent paths from `a` and records, at every
/// checkpoint, the eigenvalues and the squared overlaps with eigenvector `j`
/// of `a`. Samples run in parallel; results are assembled in sample order,
/// so the output is deterministic for fixed `(a, cfg, j)` regardless of the
/// thread count.
pub fn mc_overlap_ensemble(
    a: &HermitianMatrix,
    cfg: &MatrixPathConfig,
    j: usize,
) -> Result<OverlapEnsemble> {
    cfg.validate()?;
    if j >= cfg.n {
        return Err(Error::Input(format!(
            "tracked eigenvector index {j} out of range for N = {}",
            cfg.n
        )));
    }
    let (_, basis0) = a.eigen()?;
    let times = cfg.checkpoint_times();
    let per_sample: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
            let path = evolve(a, cfg, s)?;
            path.iter()
                .map(|x| {
                    let (evals, basis_t) = x.eigen()?;
                    let w = basis_t.overlap_column(&basis0, j);
                    Ok((evals, w))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut eigenvalues = vec![Vec::with_capacity(cfg.n_samples); times.len()];
    let mut overlaps = vec![Vec::with_capacity(cfg.n_samples); times.len()];
    for sample in per_sample {
        for (c, (evals, w)) in sample.into_iter().enumerate() {
            eigenvalues[c].push(evals);
            overlaps[c].push(w);
        }
    }
    Ok(OverlapEnsemble {
        times,
        j,
        eigenvalues,
        overlaps,
    })
}

/// Averages `mc_overlap_ensemble` over samples. At `t = 0` every sample
/// reproduces the initial basis, so the mean is the indicator at `i = j`
/// with zero standard error.
pub fn mc_mean_overlaps(
    a: &HermitianMatrix,
    cfg: &MatrixPathConfig,
    j: usize,
) -> Result<MeanOverlapSeries> {
    let ens = mc_overlap_ensemble(a, cfg, j)?;
    let m = cfg.n_samples as f64;
    let mut mean = Vec::with_capacity(ens.times.len());
    let mut std_err = Vec::with_capacity(ens.times.len());
    for samples in &ens.overlaps {
        let mut mu = vec![0.0; cfg.n];
        for w in samples {
            for (acc, &x) in mu.iter_mut().zip(w.iter()) {
                *acc += x;
            }
        }
        for x in &mut mu {
            *x /= m;
        }
        let mut se = vec![0.0; cfg.n];
        if cfg.n_samples > 1 {
            for w in samples {
                for ((acc, &x), &mu_i) in se.iter_mut().zip(w.iter()).zip(mu.iter()) {
                    *acc += (x - mu_i) * (x - mu_i);
                }
            }
            for x in &mut se {
                *x = (*x / (m - 1.0) / m).sqrt();
            }
        }
        mean.push(mu);
        std_err.push(se);
    }
    Ok(MeanOverlapSeries {
        times: ens.times,
        j,
        mean,
        std_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{kolmogorov_distance, sample_moments};
    use crate::spectral_model::DensitySpec;
    use approx::assert_abs_diff_eq;

    fn rng_for(tag: u64) -> ChaCha12Rng {
        substream(0xC0FFEE, StreamKind::Experiment, tag)
    }

    fn variance_tolerance(target: f64, m: usize) -> f64 {
        3.0 * target * (2.0 / (m as f64 - 1.0)).sqrt()
    }

    #[test]
    fn increment_variances_beta_one() {
        let m = 100_000;
        let mut rng = rng_for(1);
        let (mut off, mut diag) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for _ in 0..m {
            match sample_hermitian_increment(10, 1.0, Beta::One, &mut rng) {
                HermitianMatrix::Symmetric(h) => {
                    assert_eq!(h[(0, 1)], h[(1, 0)]);
                    off.push(h[(0, 1)]);
                    diag.push(h[(0, 0)]);
                }
                HermitianMatrix::Complex(_) => unreachable!(),
            }
        }
        let so = sample_moments(&off);
        let sd = sample_moments(&diag);
        assert_abs_diff_eq!(so.variance, 0.1, epsilon = variance_tolerance(0.1, m));
        assert_abs_diff_eq!(sd.variance, 0.2, epsilon = variance_tolerance(0.2, m));
        assert!(so.mean.abs() < 3.0 * (0.1f64 / m as f64).sqrt());
        assert!(sd.mean.abs() < 3.0 * (0.2f64 / m as f64).sqrt());
    }

    #[test]
    fn increment_variances_beta_two() {
        let m = 100_000;
        let mut rng = rng_for(2);
        let (mut re, mut im, mut diag) = (
            Vec::with_capacity(m),
            Vec::with_capacity(m),
            Vec::with_capacity(m),
        );
        for _ in 0..m {
            match sample_hermitian_increment(10, 1.0, Beta::Two, &mut rng) {
                HermitianMatrix::Complex(h) => {
                    assert_eq!(h[(1, 0)], h[(0, 1)].conj());
                    assert_eq!(h[(0, 0)].im, 0.0);
                    re.push(h[(0, 1)].re);
                    im.push(h[(0, 1)].im);
                    diag.push(h[(0, 0)].re);
                }
                HermitianMatrix::Symmetric(_) => unreachable!(),
            }
        }
        let total = sample_moments(&re).variance + sample_moments(&im).variance;
        assert_abs_diff_eq!(total, 0.1, epsilon = 1.5 * variance_tolerance(0.1, m));
        assert_abs_diff_eq!(
            sample_moments(&diag).variance,
            0.1,
            epsilon = variance_tolerance(0.1, m)
        );
    }

    #[test]
    fn zero_horizon_returns_initial_matrix() {
        let a = HermitianMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let cfg = MatrixPathConfig {
            n: 3,
            beta: Beta::One,
            t_max: 0.0,
            checkpoints: vec![],
            dynamics: Dynamics::Additive,
            seed: 7,
            n_samples: 1,
        };
        let out = evolve(&a, &cfg, 0).unwrap();
        assert_eq!(out.len(), 1);
        match (&out[0], &a) {
            (HermitianMatrix::Symmetric(x), HermitianMatrix::Symmetric(y)) => assert_eq!(x, y),
            _ => panic!("representation changed"),
        }
    }

    #[test]
    fn brownian_variance_accumulates_across_checkpoints() {
        let m = 20_000;
        let cfg = MatrixPathConfig {
            n: 10,
            beta: Beta::One,
            t_max: 1.0,
            checkpoints: vec![0.25, 1.0],
            dynamics: Dynamics::Additive,
            seed: 99,
            n_samples: m,
        };
        let a = HermitianMatrix::zero(10);
        let (mut early, mut late) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for s in 0..m {
            let path = evolve(&a, &cfg, s).unwrap();
            match (&path[0], &path[1]) {
                (HermitianMatrix::Symmetric(x), HermitianMatrix::Symmetric(y)) => {
                    early.push(x[(0, 1)]);
                    late.push(y[(0, 1)]);
                }
                _ => unreachable!(),
            }
        }
        assert_abs_diff_eq!(
            sample_moments(&early).variance,
            0.025,
            epsilon = variance_tolerance(0.025, m)
        );
        assert_abs_diff_eq!(
            sample_moments(&late).variance,
            0.1,
            epsilon = variance_tolerance(0.1, m)
        );
    }

    #[test]
    fn ou_transition_is_exact_for_scalar_case() {
        let m = 30_000;
        let t = 0.7;
        for (beta, var_scale) in [(Beta::One, 2.0), (Beta::Two, 1.0)] {
            let cfg = MatrixPathConfig {
                n: 1,
                beta,
                t_max: t,
                checkpoints: vec![t],
                dynamics: Dynamics::OrnsteinUhlenbeck,
                seed: 1234,
                n_samples: m,
            };
            let a = HermitianMatrix::from_diagonal(&[2.0]);
            let mut xs = Vec::with_capacity(m);
            for s in 0..m {
                match &evolve(&a, &cfg, s).unwrap()[0] {
                    HermitianMatrix::Symmetric(x) => xs.push(x[(0, 0)]),
                    HermitianMatrix::Complex(x) => {
                        assert_eq!(x[(0, 0)].im, 0.0);
                        xs.push(x[(0, 0)].re);
                    }
                }
            }
            let stats = sample_moments(&xs);
            let mean = 2.0 * (-t / 2.0f64).exp();
            let var = var_scale * (1.0 - (-t as f64).exp());
            assert_abs_diff_eq!(stats.mean, mean, epsilon = 3.0 * (var / m as f64).sqrt());
            assert_abs_diff_eq!(stats.variance, var, epsilon = variance_tolerance(var, m));
        }
    }

    #[test]
    fn additive_spectrum_matches_semicircle() {
        let cfg = MatrixPathConfig {
            n: 200,
            beta: Beta::One,
            t_max: 1.0,
            checkpoints: vec![1.0],
            dynamics: Dynamics::Additive,
            seed: 5,
            n_samples: 1,
        };
        let a = HermitianMatrix::zero(200);
        let x = &evolve(&a, &cfg, 0).unwrap()[0];
        let (mut vals, _) = x.eigen().unwrap();
        let sc = DensitySpec::Semicircle { radius: 2.0 };
        let ks = kolmogorov_distance(&mut vals, |l| sc.cdf(l));
        assert!(ks < 0.05, "KS distance {ks} against radius-2 semicircle");
    }

    #[test]
    fn ou_spectrum_relaxes_to_stationary_semicircle() {
        let cfg = MatrixPathConfig {
            n: 200,
            beta: Beta::Two,
            t_max: 12.0,
            checkpoints: vec![12.0],
            dynamics: Dynamics::OrnsteinUhlenbeck,
            seed: 6,
            n_samples: 1,
        };
        let a = HermitianMatrix::zero(200);
        let x = &evolve(&a, &cfg, 0).unwrap()[0];
        let (mut vals, _) = x.eigen().unwrap();
        let sc = DensitySpec::Semicircle { radius: 2.0 };
        let ks = kolmogorov_distance(&mut vals, |l| sc.cdf(l));
        assert!(ks < 0.05, "KS distance {ks} against stationary semicircle");
    }

    #[test]
    fn ou_equals_additive_under_time_change() {
        // Eigenvectors are scale invariant, so the OU state at time t has the
        // same overlap law as the additive state at s = exp(t) - 1. Compare
        // the mean tracked overlap from both routes.
        let n = 60;
        let m = 400;
        let t: f64 = 0.4;
        let s = t.exp() - 1.0;
        let mut diag: Vec<f64> = (0..n).map(|k| 3.0 * (k as f64) / (n as f64)).collect();
        diag.reverse();
        let a = HermitianMatrix::from_diagonal(&diag);
        let run = |dynamics: Dynamics, horizon: f64, seed: u64| {
            let cfg = MatrixPathConfig {
                n,
                beta: Beta::One,
                t_max: horizon,
                checkpoints: vec![horizon],
                dynamics,
                seed,
                n_samples: m,
            };
            mc_mean_overlaps(&a, &cfg, n / 2).unwrap()
        };
        let ou = run(Dynamics::OrnsteinUhlenbeck, t, 21);
        let add = run(Dynamics::Additive, s, 22);
        let i = n / 2;
        let diff = (ou.mean[0][i] - add.mean[0][i]).abs();
        let se = ou.std_err[0][i].hypot(add.std_err[0][i]);
        assert!(
            diff < 3.0 * se,
            "overlap mismatch {diff} exceeds 3 combined standard errors {se}"
        );
    }

    #[test]
    fn overlaps_of_initial_matrix_are_identity() {
        let a = HermitianMatrix::from_diagonal(&[0.5, 0.0, -0.5, -0.75]);
        let (_, basis) = a.eigen().unwrap();
        let rec = eigen_overlaps(&a, &basis, 0.0, 0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(rec.squared_overlaps[(i, j)], target, epsilon = 1e-12);
            }
        }
        assert!(rec.bistochastic_defect() < 1e-12);
    }

    #[test]
    fn overlap_matrix_is_doubly_stochastic() {
        let mut rng = rng_for(3);
        let mut x = HermitianMatrix::from_diagonal(&[1.0, 0.7, 0.4, 0.1, -0.3, -0.9, -1.4, -2.0]);
        x += &sample_hermitian_increment(8, 0.7, Beta::Two, &mut rng);
        let rec = eigen_overlaps(&x, &EigenBasis::identity(8), 0.7, 0).unwrap();
        assert!(rec.bistochastic_defect() < 1e-8);
        for w in rec.squared_overlaps.iter() {
            assert!(*w >= 0.0 && *w <= 1.0 + 1e-12);
        }
        for pair in rec.eigenvalues.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        let x = HermitianMatrix::Symmetric(m);
        assert!(eigen_overlaps(&x, &EigenBasis::identity(3), 0.0, 0).is_err());

        let skewed = EigenBasis::Orthogonal(DMatrix::identity(3, 3) * 2.0);
        let ok = HermitianMatrix::zero(3);
        assert!(eigen_overlaps(&ok, &skewed, 0.0, 0).is_err());

        let cfg = MatrixPathConfig {
            n: 3,
            beta: Beta::One,
            t_max: 1.0,
            checkpoints: vec![0.5, 0.2],
            dynamics: Dynamics::Additive,
            seed: 0,
            n_samples: 1,
        };
        assert!(cfg.validate().is_err());
        let cfg2 = MatrixPathConfig {
            checkpoints: vec![2.0],
            ..cfg
        };
        assert!(cfg2.validate().is_err());
    }

    #[test]
    fn tracked_overlap_at_time_zero_is_indicator() {
        let a = HermitianMatrix::from_diagonal(&[2.0, 1.0, -1.0, -2.0]);
        let cfg = MatrixPathConfig {
            n: 4,
            beta: Beta::One,
            t_max: 0.5,
            checkpoints: vec![0.0, 0.5],
            dynamics: Dynamics::Additive,
            seed: 11,
            n_samples: 6,
        };
        let series = mc_mean_overlaps(&a, &cfg, 2).unwrap();
        for i in 0..4 {
            let target = if i == 2 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(series.mean[0][i], target, epsilon = 1e-12);
            assert_eq!(series.std_err[0][i], 0.0);
        }
        let total: f64 = series.mean[1].iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn factor_model_overlap_at_half_life() {
        // Rank-one factor at 5: the top squared overlap decays as 1 - t/25,
        // which is 1/2 at t = 12.5.
        let n = 200;
        let mut diag = vec![0.0; n];
        diag[0] = 5.0;
        let a = HermitianMatrix::from_diagonal(&diag);
        let cfg = MatrixPathConfig {
            n,
            beta: Beta::One,
            t_max: 12.5,
            checkpoints: vec![12.5],
            dynamics: Dynamics::Additive,
            seed: 31,
            n_samples: 200,
        };
        let ens = mc_overlap_ensemble(&a, &cfg, 0).unwrap();
        let top: Vec<f64> = ens.overlaps[0].iter().map(|w| w[0]).collect();
        let stats = sample_moments(&top);
        let se = (stats.variance / top.len() as f64).sqrt();
        assert!(
            (stats.mean - 0.5).abs() < 3.0 * se,
            "mean top overlap {} +- {se} vs 0.5",
            stats.mean
        );
    }

    #[test]
    fn columns_are_exchangeable_for_isotropic_start() {
        let n = 30;
        let m = 1500;
        let collect = |j: usize, seed: u64| -> Vec<f64> {
            let cfg = MatrixPathConfig {
                n,
                beta: Beta::One,
                t_max: 0.5,
                checkpoints: vec![0.5],
                dynamics: Dynamics::Additive,
                seed,
                n_samples: m,
            };
            let ens = mc_overlap_ensemble(&HermitianMatrix::zero(n), &cfg, j).unwrap();
            ens.overlaps[0].iter().map(|w| w[0]).collect()
        };
        let a = sample_moments(&collect(3, 41));
        let b = sample_moments(&collect(27, 42));
        let se = ((a.variance + b.variance) / m as f64).sqrt();
        assert!(
            (a.mean - b.mean).abs() < 3.0 * se,
            "column means {} vs {} differ beyond noise",
            a.mean,
            b.mean
        );
    }

    #[test]
    fn results_are_reproducible_for_fixed_seed() {
        let a = HermitianMatrix::from_diagonal(&[1.0, 0.5, -0.5, -1.0, 0.0, 0.2, -0.2, 0.8]);
        let cfg = MatrixPathConfig {
            n: 8,
            beta: Beta::Two,
            t_max: 0.9,
            checkpoints: vec![0.2, 0.9],
            dynamics: Dynamics::Additive,
            seed: 123,
            n_samples: 5,
        };
        let one = mc_mean_overlaps(&a, &cfg, 1).unwrap();
        let two = mc_mean_overlaps(&a, &cfg, 1).unwrap();
        assert_eq!(one.mean, two.mean);
        assert_eq!(one.std_err, two.std_err);
        let other = MatrixPathConfig { seed: 124, ..cfg };
        let three = mc_mean_overlaps(&a, &other, 1).unwrap();
        assert_ne!(one.mean, three.mean);
    }
}
