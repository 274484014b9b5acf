//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relucert_core::certifier::select_target;
use relucert_core::model::{argmax, random_network};
use relucert_core::{Matrix, Network, TargetMode};

/// A seeded network with an input in `[0, 1]^n0`, its predicted class and
/// the runner-up target.
pub struct Fixture {
    pub net: Network,
    pub x0: Vec<f64>,
    pub class: usize,
    pub target: usize,
}

pub fn fixture(dims: &[usize], seed: u64) -> Fixture {
    let net = random_network(dims, seed).expect("valid dims");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x0: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(0.0..1.0)).collect();
    let logits = net.forward(&x0).expect("input matches network");
    let class = argmax(&logits);
    let target = select_target(&logits, class, TargetMode::RunnerUp).expect("≥ 2 classes");
    Fixture {
        net,
        x0,
        class,
        target,
    }
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}
