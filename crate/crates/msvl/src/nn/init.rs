//! Seeded weight initialization: He-uniform for layers feeding rectifiers,
//! Xavier-uniform elsewhere.

use rand_chacha::ChaCha12Rng;

use crate::nn::tensor::Tensor;
use crate::util::uniform_in;

/// He-uniform: `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform_tensor(shape, bound, rng)
}

/// Xavier-uniform: `U(-sqrt(6 / (fan_in + fan_out)), ...)`.
pub fn xavier_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha12Rng,
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    uniform_tensor(shape, bound, rng)
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut ChaCha12Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| uniform_in(rng, -bound, bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data lengths agree by construction")
}
