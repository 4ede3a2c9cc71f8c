use dysonlab_core::matrix_mc::{mc_overlap_ensemble, Beta, Dynamics, HermitianMatrix, MatrixPathConfig};
use dysonlab_core::numerics::sample_moments;
use dysonlab_core::spectral_model::{discretize, SpectralModel};

fn main() {
    let model = SpectralModel::factor(5.0).unwrap();
    let n = 200usize;
    let t = 10.0;
    let spectrum = discretize(&model, n).unwrap();
    let a = HermitianMatrix::from_diagonal(spectrum.values());
    for (beta, tag) in [(Beta::Two, "beta2"), (Beta::One, "beta1")] {
        let cfg = MatrixPathConfig {
            n,
            beta,
            t_max: t,
            checkpoints: vec![t],
            dynamics: Dynamics::Additive,
            seed: 0x5EED_0404,
            n_samples: 1000,
        };
        let ens = mc_overlap_ensemble(&a, &cfg, 0).unwrap();
        let y: Vec<f64> = ens.overlaps[0].iter().map(|w| w[0].sqrt()).collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let z: Vec<f64> = y.iter().map(|v| (v - mean) * (n as f64).sqrt()).collect();
        let stats = sample_moments(&z);
        println!(
            "{tag}: mean={mean:.5} var={:.5} ratio_vs_g2={:.3} skew={:+.3} exkurt={:+.3}",
            stats.variance,
            stats.variance / 0.19234,
            stats.skewness,
            stats.excess_kurtosis
        );
    }
}
