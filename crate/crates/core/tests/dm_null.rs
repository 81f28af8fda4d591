//! Under equal accuracy, DM p-values at h = 1 are close to uniform.

use chrono::{Duration, NaiveDate};
use epf_core::eval::dm_test;
use epf_core::features::N_COMPONENTS;
use epf_core::models::ForecastRecord;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DAYS: usize = 120;

fn records(model: &str, rng: &mut ChaCha8Rng, noise: &Normal<f64>) -> Vec<ForecastRecord> {
    let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    (0..DAYS * 24)
        .map(|i| {
            let target = start + Duration::days((i / 24) as i64);
            ForecastRecord {
                model: model.into(),
                origin: target - Duration::days(1),
                horizon: 1,
                target,
                hour: (i % 24) as u8 + 1,
                prediction: 50.0 + noise.sample(rng),
                actual: 50.0,
                intercept: 0.0,
                components: [0.0; N_COMPONENTS],
                flags: 0,
            }
        })
        .collect()
}

#[test]
fn p_values_are_uniform_under_the_null() {
    const REPS: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 10.0).unwrap();
    let mut p: Vec<f64> = (0..REPS)
        .map(|_| {
            let a = records("a", &mut rng, &noise);
            let b = records("b", &mut rng, &noise);
            dm_test(&a, &b, 1).unwrap().p_value
        })
        .collect();
    p.sort_by(f64::total_cmp);
    let n = REPS as f64;
    let ks = p
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max);
    println!("KS distance {ks:.4} over {REPS} replications");
    assert!(ks < 0.05, "KS distance {ks}");
}
