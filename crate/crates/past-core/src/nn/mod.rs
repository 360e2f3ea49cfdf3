//! Self-contained neural-network substrate: autodiff tape, convolution
//! kernels, optimizers, weight init, checkpoint archive.

mod checkpoint;
mod conv;
mod optim;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, NamedTensor};
pub use optim::{Adam, SgdMomentum};
pub use tape::{NodeId, Tape};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// He-normal init for conv weights: std = sqrt(2 / fan_in).
pub fn he_normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f32> {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng) as f32)
}

/// Small uniform init for output-layer weights.
pub fn uniform_small(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> ArrayD<f32> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-scale..scale))
}

pub fn zeros(shape: &[usize]) -> ArrayD<f32> {
    ArrayD::zeros(IxDyn(shape))
}

/// Exact equality of two parameter lists (bitwise on the f32 values).
pub fn params_identical(a: &[NamedTensor], b: &[NamedTensor]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.name == y.name
                && x.value.shape() == y.value.shape()
                && x.value
                    .iter()
                    .zip(y.value.iter())
                    .all(|(p, q)| p.to_bits() == q.to_bits())
        })
}
