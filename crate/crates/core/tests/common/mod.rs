#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use relucert_core::fastlin::propagate_bounds;
use relucert_core::fastlip::grad_bound_all;
use relucert_core::model::random_network;
use relucert_core::{Layer, LayerBounds, MarginNetwork, Network, NormOrder, Perturbation};

/// A seeded random instance: network, anchor, class pair and radius.
pub struct Instance {
    pub net: Network,
    pub x0: Vec<f64>,
    pub c: usize,
    pub j: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Instance {
    pub fn margin_net(&self) -> MarginNetwork {
        self.net.merge_last_layer(self.c, self.j).unwrap()
    }

    pub fn region(&self, p: NormOrder) -> Perturbation {
        Perturbation::new(self.x0.clone(), self.eps, p).unwrap()
    }
}

/// Replaces the zero biases of `random_network` with small Gaussian ones so
/// that neurons straddle zero in a less symmetric way.
pub fn with_random_biases(net: Network, rng: &mut ChaCha8Rng, scale: f64) -> Network {
    let normal = Normal::new(0.0, scale).unwrap();
    let layers = net
        .layers()
        .iter()
        .map(|l| {
            Layer::new(
                l.weights.clone(),
                (0..l.outputs()).map(|_| normal.sample(rng)).collect(),
            )
            .unwrap()
        })
        .collect();
    Network::new(layers).unwrap()
}

/// Net with `depth` layers (2..=4 by default), hidden widths ≤ 32, n0 ≤ 16.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(2..=4);
    let n0 = rng.random_range(1..=16);
    let n_out = rng.random_range(2..=10);
    let mut dims = vec![n0];
    for _ in 1..depth {
        dims.push(rng.random_range(2..=32));
    }
    dims.push(n_out);
    instance_with_dims(&dims, seed, &mut rng)
}

/// Instance on a fixed shape. The true class is the prediction at `x0` and
/// the target is the runner-up, so the margin is positive.
pub fn instance_with_dims(dims: &[usize], seed: u64, rng: &mut ChaCha8Rng) -> Instance {
    let net = random_network(dims, seed).unwrap();
    let net = with_random_biases(net, rng, 0.1);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x0: Vec<f64> = (0..dims[0]).map(|_| normal.sample(rng)).collect();
    let logits = net.forward(&x0).unwrap();
    let c = relucert_core::model::argmax(&logits);
    let j = (0..logits.len())
        .filter(|&j| j != c)
        .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
        .unwrap();
    let eps = rng.random_range(0.01..0.3);
    Instance {
        net,
        x0,
        c,
        j,
        eps,
        seed,
    }
}

pub fn margin_at(g: &MarginNetwork, x: &[f64]) -> f64 {
    g.margin(x).unwrap()
}

pub fn hidden_bounds(g: &MarginNetwork, region: &Perturbation) -> Vec<LayerBounds> {
    propagate_bounds(g, region).unwrap()
}

pub fn fastlip_v(g: &MarginNetwork, region: &Perturbation) -> Vec<f64> {
    grad_bound_all(g, &hidden_bounds(g, region)).unwrap()
}

/// True when no hidden pre-activation at `x` sits within `tol` of zero.
pub fn differentiable_at(net: &Network, x: &[f64], tol: f64) -> bool {
    let z = net.pre_activations(x).unwrap();
    z[..z.len() - 1].iter().flatten().all(|v| v.abs() > tol)
}

/// Central finite-difference gradient of the margin.
pub fn finite_difference(g: &MarginNetwork, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (margin_at(g, &a) - margin_at(g, &b)) / (2.0 * h)
        })
        .collect()
}
