//! Simulated Dickey–Fuller quantiles versus the interpolated critical values.

use epf_core::eval::df_critical_value;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// t-ratio of `γ` in `Δy_t = c + γ y_{t-1} + e_t`, computed from raw sums.
fn df_t_stat(y: &[f64]) -> f64 {
    let m = (y.len() - 1) as f64;
    let (mut sx, mut sxx, mut sz, mut sxz, mut szz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for w in y.windows(2) {
        let (x, z) = (w[0], w[1] - w[0]);
        sx += x;
        sxx += x * x;
        sz += z;
        sxz += x * z;
        szz += z * z;
    }
    let cxx = sxx - sx * sx / m;
    let cxz = sxz - sx * sz / m;
    let czz = szz - sz * sz / m;
    let gamma = cxz / cxx;
    let rss = czz - gamma * cxz;
    let s2 = rss / (m - 2.0);
    gamma / (s2 / cxx).sqrt()
}

#[test]
fn simulated_quantiles_match_critical_values() {
    const N: usize = 1000;
    const REPS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut y = vec![0.0; N];
    let mut stats: Vec<f64> = (0..REPS)
        .map(|_| {
            let mut level = 0.0;
            for v in y.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                level += e;
                *v = level;
            }
            df_t_stat(&y)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    for p in [0.01, 0.05, 0.10] {
        let simulated = stats[(p * REPS as f64) as usize];
        let tabulated = df_critical_value(p, N);
        println!("DF {:>4}%: simulated {simulated:.4}, interpolated {tabulated:.4}", p * 100.0);
        assert!((simulated - tabulated).abs() <= 0.03, "{p}: simulated {simulated} vs {tabulated}");
    }
}
