use dysonlab_core::matrix_mc::{mc_overlap_ensemble, Beta, Dynamics, HermitianMatrix, MatrixPathConfig};
use dysonlab_core::spectral_model::{discretize, SpectralModel};
use dysonlab_core::spike_lab::transverse_pde;

fn trapezoid(times: &[f64], vals: &[f64]) -> f64 {
    let mut acc = 0.0;
    for c in 1..times.len() {
        acc += 0.5 * (vals[c] + vals[c - 1]) * (times[c] - times[c - 1]);
    }
    acc
}

fn main() {
    let model = SpectralModel::factor(5.0).unwrap();
    let n = 200usize;
    let t = 10.0;
    let nf = n as f64;
    let spectrum = discretize(&model, n).unwrap();
    let a = HermitianMatrix::from_diagonal(spectrum.values());
    let cfg = MatrixPathConfig {
        n,
        beta: Beta::One,
        t_max: t,
        checkpoints: (0..=32).map(|k| t * k as f64 / 32.0).collect(),
        dynamics: Dynamics::Additive,
        seed: 0x5EED_0303,
        n_samples: 600,
    };
    let ens = mc_overlap_ensemble(&a, &cfg, 0).unwrap();
    let nc = ens.times.len();
    let ns = ens.overlaps[0].len();

    // Per-sample: S(s) = sum_k 1/(lam1-lamk)^2, hraw(s) = sum_k w_k/(lam1-lamk)^2.
    let mut s_path = vec![vec![0.0; nc]; ns];
    let mut hraw_path = vec![vec![0.0; nc]; ns];
    for c in 0..nc {
        for s in 0..ns {
            let ev = &ens.eigenvalues[c][s];
            let w = &ens.overlaps[c][s];
            let lam1 = ev[0];
            let mut acc_s = 0.0;
            let mut acc_h = 0.0;
            for k in 1..n {
                let d = lam1 - ev[k];
                acc_s += 1.0 / (d * d);
                acc_h += w[k] / (d * d);
            }
            s_path[s][c] = acc_s;
            hraw_path[s][c] = acc_h;
        }
    }

    // Conditional means on the full grid and on the half grid.
    let mut m33 = vec![0.0; ns];
    let mut m17 = vec![0.0; ns];
    let mut vhat = vec![0.0; ns];
    let mut y = vec![0.0; ns];
    for s in 0..ns {
        let t_all: Vec<f64> = ens.times.clone();
        let s_all = &s_path[s];
        m33[s] = (-trapezoid(&t_all, s_all) / (2.0 * nf)).exp();
        let t_half: Vec<f64> = (0..nc).step_by(2).map(|c| t_all[c]).collect();
        let s_half: Vec<f64> = (0..nc).step_by(2).map(|c| s_all[c]).collect();
        m17[s] = (-trapezoid(&t_half, &s_half) / (2.0 * nf)).exp();
        y[s] = ens.overlaps[nc - 1][s][0].sqrt();
        // Conditional-variance prediction along this path:
        // N Var = fhat(t) int hraw / fhat ds, fhat(s) = exp(-(1/N) int_0^s S).
        let mut cum = vec![0.0; nc];
        for c in 1..nc {
            cum[c] = cum[c - 1] + 0.5 * (s_all[c] + s_all[c - 1]) * (t_all[c] - t_all[c - 1]);
        }
        let fhat: Vec<f64> = cum.iter().map(|&x| (-x / nf).exp()).collect();
        let integrand: Vec<f64> = (0..nc).map(|c| hraw_path[s][c] / fhat[c]).collect();
        vhat[s] = fhat[nc - 1] * trapezoid(&t_all, &integrand);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let my = mean(&y);
    let mm = mean(&m33);
    println!("mean y = {my:.5}, mean m33 = {mm:.5}, sqrt(f) = {:.5}", 0.6f64.sqrt());
    let resid: Vec<f64> = (0..ns).map(|s| (y[s] - m33[s]) * nf.sqrt()).collect();
    println!("residual mean = {:+.5}, residual variance = {:.5}", mean(&resid), var(&resid));
    let dm: Vec<f64> = (0..ns).map(|s| (m17[s] - m33[s]) * nf.sqrt()).collect();
    println!("grid-halving shift: mean {:+.6}, variance {:.6}", mean(&dm), var(&dm));
    println!("conditional-variance prediction: mean {:.5} +- {:.5}, spread SD {:.5}",
        mean(&vhat), (var(&vhat) / ns as f64).sqrt(), var(&vhat).sqrt());

    // Ensemble h(s) from MC vs the PDE h.
    let state = transverse_pde(&model, t, 256).unwrap();
    for &s_probe in &[2.5, 5.0, 7.5, 10.0] {
        let c = ens.times.iter().position(|&x| (x - s_probe).abs() < 1e-9).unwrap();
        let hmc: Vec<f64> = (0..ns).map(|s| hraw_path[s][c]).collect();
        // PDE h at the nearest recorded time.
        let (mut best, mut hb) = (f64::INFINITY, 0.0);
        for (k, &tt) in state.times.iter().enumerate() {
            if (tt - s_probe).abs() < best {
                best = (tt - s_probe).abs();
                hb = state.h[k];
            }
        }
        println!("s = {s_probe:5.2}: MC h = {:.5} +- {:.5}   PDE h = {hb:.5}",
            mean(&hmc), (var(&hmc) / ns as f64).sqrt());
    }

    // Tail census of the conditionally centered residuals.
    let sd = var(&resid).sqrt();
    let beyond3 = resid.iter().filter(|&&z| z.abs() > 3.0 * sd).count();
    println!("residuals beyond 3 SD: {beyond3} of {ns} (Gaussian expectation {:.1})", 0.0027 * ns as f64);
}
