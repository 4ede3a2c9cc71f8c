use dysonlab_core::spectral_model::SpectralModel;
use dysonlab_core::spike_lab::transverse_pde;

fn h_at(times: &[f64], h: &[f64], s: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut val = 0.0;
    for (k, &t) in times.iter().enumerate() {
        if (t - s).abs() < best {
            best = (t - s).abs();
            val = h[k];
        }
    }
    val
}

fn main() {
    let model = SpectralModel::factor(5.0).unwrap();
    for m in [128usize, 256, 384, 512, 768] {
        let t0 = std::time::Instant::now();
        let state = transverse_pde(&model, 10.0, m).unwrap();
        let h25 = h_at(&state.times, &state.h, 2.5);
        let h5 = h_at(&state.times, &state.h, 5.0);
        let h75 = h_at(&state.times, &state.h, 7.5);
        let h10 = state.h.last().unwrap();
        let g2 = state.g2.last().unwrap();
        println!(
            "m={m:4}: h(2.5)={h25:.6} h(5)={h5:.6} h(7.5)={h75:.6} h(10)={h10:.6} g2(10)={g2:.6} defect={:.2e} [{:?}]",
            state.mass_balance_defect(),
            t0.elapsed()
        );
    }
}
