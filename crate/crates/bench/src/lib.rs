//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinefuse_core::io::{generate_phantom, Phantom, PhantomSpec};
use spinefuse_core::{LabelVolume, Tensor};

/// A default phantom and a copy of its labels with every `every`-th
/// foreground voxel flipped to the next class.
pub fn phantom_pair(every: usize) -> (Phantom, LabelVolume) {
    let phantom = generate_phantom(&PhantomSpec::default()).expect("default phantom");
    let mut pred = phantom.labels.clone();
    for (i, v) in pred.voxels.iter_mut().enumerate() {
        if *v != 0 && i % every == 0 {
            *v += 1;
        }
    }
    (phantom, pred)
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape matches data")
}
