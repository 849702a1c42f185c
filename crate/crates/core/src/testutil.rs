//! Shared helpers for unit tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{ParamStore, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_| n.sample(rng))
}

/// Scatters every parameter with Gaussian noise so no entry sits at its
/// structured initial value (zero biases, unit scales).
pub fn jitter(store: &mut ParamStore, std: f64, rng: &mut ChaCha8Rng) {
    let n = Normal::new(0.0, std).unwrap();
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += n.sample(rng);
        }
    }
}

/// Largest relative gradient error over all parameters.
pub fn max_relative_error(
    store: &ParamStore,
    analytic: &ParamStore,
    h: f64,
    loss: impl Fn(&ParamStore) -> f64 + Sync,
) -> f64 {
    crate::tensor::gradcheck::check_gradients(store, analytic, h, loss).max_relative_error
}
