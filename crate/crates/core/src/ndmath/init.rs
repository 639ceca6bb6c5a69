use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::array::NdArray;

/// Seeded fan-in uniform initializer: weights ~ U(−√(1/fan_in), √(1/fan_in)).
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn fan_in_uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> NdArray<T> {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        // draw in f64 so f32 and f64 builds start from the same values
        let data = (0..n).map(|_| T::lit(self.rng.random_range(-bound..bound))).collect();
        NdArray::from_vec(shape, data).expect("shape")
    }
}
