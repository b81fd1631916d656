use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed;

/// `len` i.i.d. draws from `Normal(0, 2 / fan_in)`.
pub fn he_normal_init(len: usize, fan_in: usize, seed: u64) -> Vec<f64> {
    assert!(fan_in >= 1, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    let mut rng = seed::rng(seed, "he-normal", 0);
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
