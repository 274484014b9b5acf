//! Fully connected ReLU networks: representation, file format, evaluation.
//!
//! A network with `m` layers computes `φ_k(x) = σ(W_k φ_{k-1}(x) + b_k)` for
//! `k < m` and returns the affine `W_m φ_{m-1}(x) + b_m` without a final ReLU.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::shape("Layer::new", weights.rows(), bias.len()));
        }
        Ok(Layer { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// `W x + b`.
    pub fn affine(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = linalg::matvec(&self.weights, x)?;
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Validates dimension chaining and finiteness.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Schema {
                layer: None,
                message: "network must have at least one layer".into(),
            });
        }
        for (k, layer) in layers.iter().enumerate() {
            let idx = k + 1;
            if layer.weights.rows() == 0 || layer.weights.cols() == 0 {
                return Err(Error::Schema {
                    layer: Some(idx),
                    message: "weight matrix must be non-empty".into(),
                });
            }
            if layer.bias.len() != layer.weights.rows() {
                return Err(Error::DimensionMismatch {
                    layer: idx,
                    message: format!(
                        "bias has {} entries but weights have {} rows",
                        layer.bias.len(),
                        layer.weights.rows()
                    ),
                });
            }
            if k > 0 && layer.inputs() != layers[k - 1].outputs() {
                return Err(Error::DimensionMismatch {
                    layer: idx,
                    message: format!(
                        "weights have {} columns but layer {} has {} outputs",
                        layer.inputs(),
                        k,
                        layers[k - 1].outputs()
                    ),
                });
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Schema {
                    layer: Some(idx),
                    message: "non-finite weight or bias entry".into(),
                });
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `k` in 1-based numbering.
    pub fn layer(&self, k: usize) -> &Layer {
        &self.layers[k - 1]
    }

    /// Number of affine layers `m`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// `[n_0, n_1, ..., n_m]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("forward", self.input_dim(), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.affine(&h)?;
            if k < last {
                relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    /// Pre-activation vectors `z^(1..m)`; the last entry is the network output.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&h)?;
            h = z.clone();
            relu_in_place(&mut h);
            out.push(z);
        }
        Ok(out)
    }

    /// Index of the largest output (first one on ties).
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Replaces the last layer by the single row `W_c − W_j` (bias `b_c − b_j`).
    pub fn merge_last_layer(&self, c: usize, j: usize) -> Result<MarginNetwork> {
        let n_out = self.output_dim();
        if c == j {
            return Err(Error::param(format!(
                "true class and target class are both {c}"
            )));
        }
        if c >= n_out || j >= n_out {
            return Err(Error::param(format!(
                "class index out of range: c={c}, j={j}, outputs={n_out}"
            )));
        }
        let last = &self.layers[self.layers.len() - 1];
        let wbar: Vec<f64> = last
            .weights
            .row(c)
            .iter()
            .zip(last.weights.row(j))
            .map(|(a, b)| a - b)
            .collect();
        let bbar = last.bias[c] - last.bias[j];
        let mut layers = self.layers[..self.layers.len() - 1].to_vec();
        layers.push(Layer {
            weights: Matrix::row_vector(&wbar),
            bias: vec![bbar],
        });
        Ok(MarginNetwork {
            net: Network { layers },
            true_class: c,
            target_class: j,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            what: "model file",
            source,
        })?;
        let mut layers = Vec::with_capacity(file.layers.len());
        for (k, l) in file.layers.into_iter().enumerate() {
            let weights = Matrix::from_rows(&l.weights).map_err(|_| Error::Schema {
                layer: Some(k + 1),
                message: "weight rows have unequal lengths".into(),
            })?;
            layers.push(Layer {
                weights,
                bias: l.bias,
            });
        }
        Network::new(layers)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: l.weights.to_rows(),
                    bias: l.bias.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("finite floats always serialize")
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    Network::load(path)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    net.save(path)
}

pub fn forward(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    net.forward(x)
}

pub fn merge_last_layer(net: &Network, c: usize, j: usize) -> Result<MarginNetwork> {
    net.merge_last_layer(c, j)
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Network whose single output is the margin `g(x) = f_c(x) − f_j(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginNetwork {
    net: Network,
    true_class: usize,
    target_class: usize,
}

impl MarginNetwork {
    /// Wraps a network that already has a one-row last layer.
    pub fn from_network(net: Network, true_class: usize, target_class: usize) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::param(format!(
                "margin network needs exactly one output, found {}",
                net.output_dim()
            )));
        }
        Ok(MarginNetwork {
            net,
            true_class,
            target_class,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn true_class(&self) -> usize {
        self.true_class
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    /// The merged last-layer row `w̄`.
    pub fn margin_weights(&self) -> &[f64] {
        self.net.layer(self.net.depth()).weights.row(0)
    }

    pub fn margin_bias(&self) -> f64 {
        self.net.layer(self.net.depth()).bias[0]
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(x)?[0])
    }
}

impl std::ops::Deref for MarginNetwork {
    type Target = Network;

    fn deref(&self) -> &Network {
        &self.net
    }
}

/// Seeded random network: weights i.i.d. N(0, 1/fan_in), zero biases.
pub fn random_network(dims: &[usize], seed: u64) -> Result<Network> {
    if dims.len() < 2 {
        return Err(Error::param("need at least input and output dimensions"));
    }
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(Error::param(format!("dimension {i} is zero")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| normal.sample(&mut rng))
                .collect();
            Layer {
                weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Network::new(layers)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// Contents of an input-vector file: `{"input": [...], "label": 3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    pub input: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl InputFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: InputFile = serde_json::from_str(text).map_err(|source| Error::Parse {
            what: "input file",
            source,
        })?;
        if f.input.is_empty() || f.input.iter().any(|x| !x.is_finite()) {
            return Err(Error::Schema {
                layer: None,
                message: "input must be a non-empty vector of finite numbers".into(),
            });
        }
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite floats always serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(rows: &[&[f64]], bias: &[f64]) -> Layer {
        Layer::new(Matrix::from_rows(rows).unwrap(), bias.to_vec()).unwrap()
    }

    #[test]
    fn load_single_layer() {
        let net = Network::from_json(r#"{"layers":[{"weights":[[1,-1]],"bias":[0]}]}"#).unwrap();
        assert_eq!(net.depth(), 1);
        assert_eq!(net.dims(), vec![2, 1]);
    }

    #[test]
    fn load_chained_shape() {
        let net = random_network(&[784, 20, 20, 10], 3).unwrap();
        let back = Network::from_json(&net.to_json()).unwrap();
        assert_eq!(back.depth(), 3);
        assert_eq!(back, net);
    }

    #[test]
    fn load_rejects_dimension_mismatch() {
        let text = r#"{"layers":[
            {"weights":[[1,0],[0,1]],"bias":[0,0]},
            {"weights":[[1,1,1]],"bias":[0]}]}"#;
        match Network::from_json(text) {
            Err(Error::DimensionMismatch { layer: 2, .. }) => {}
            other => panic!("expected dimension mismatch at layer 2, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_bad_documents() {
        assert!(matches!(Network::from_json("{"), Err(Error::Parse { .. })));
        assert!(matches!(
            Network::from_json(r#"{"layers":[{"weights":[[1]],"bias":[0],"extra":1}]}"#),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Network::from_json(r#"{"layers":[{"weights":[[1,2],[3]],"bias":[0,0]}]}"#),
            Err(Error::Schema { layer: Some(1), .. })
        ));
        assert!(matches!(
            Network::from_json(r#"{"layers":[{"weights":[[1,2]],"bias":[0,0]}]}"#),
            Err(Error::DimensionMismatch { layer: 1, .. })
        ));
        assert!(matches!(
            Network::from_json(r#"{"layers":[]}"#),
            Err(Error::Schema { layer: None, .. })
        ));
    }

    #[test]
    fn forward_examples() {
        let net = Network::new(vec![layer(&[&[1.0, -1.0]], &[0.0])]).unwrap();
        assert_eq!(net.forward(&[3.0, 1.0]).unwrap(), vec![2.0]);

        let net = Network::new(vec![
            layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]),
            layer(&[&[1.0, 1.0]], &[0.0]),
        ])
        .unwrap();
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![2.0]);

        let net = random_network(&[4, 6, 3], 9).unwrap();
        assert_eq!(net.forward(&[0.0; 4]).unwrap(), vec![0.0; 3]);
        assert!(net.forward(&[0.0; 3]).is_err());
    }

    #[test]
    fn merge_examples() {
        let net = Network::new(vec![layer(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.5, -0.5])]).unwrap();
        let g = net.merge_last_layer(0, 1).unwrap();
        assert_eq!(g.margin_weights(), &[1.0, -1.0]);
        assert_eq!(g.margin_bias(), 1.0);
        assert!(net.merge_last_layer(1, 1).is_err());
        assert!(net.merge_last_layer(0, 2).is_err());
    }

    #[test]
    fn merged_margin_matches_difference() {
        use rand::Rng;
        let net = random_network(&[5, 8, 8, 4], 11).unwrap();
        let g = net.merge_last_layer(2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = net.forward(&x).unwrap();
            let m = g.margin(&x).unwrap();
            assert!((m - (f[2] - f[0])).abs() <= 1e-12 * (1.0 + m.abs()));
        }
    }

    #[test]
    fn random_network_is_deterministic() {
        let a = random_network(&[2, 20, 20, 2], 1).unwrap();
        let b = random_network(&[2, 20, 20, 2], 1).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a, random_network(&[2, 20, 20, 2], 2).unwrap());
        assert!(random_network(&[2, 0, 2], 1).is_err());
        assert!(random_network(&[2], 1).is_err());
    }

    #[test]
    fn large_shape_fixture() {
        let net = random_network(&[784, 1024, 1024, 10], 7).unwrap();
        assert_eq!(net.depth(), 3);
        assert_eq!(net.dims(), vec![784, 1024, 1024, 10]);
    }

    #[test]
    fn input_file_schema() {
        let f = InputFile::from_json(r#"{"input":[0.5,1],"label":1}"#).unwrap();
        assert_eq!(f.label, Some(1));
        assert!(InputFile::from_json(r#"{"input":[0.5],"foo":1}"#).is_err());
        assert!(InputFile::from_json(r#"{"input":[]}"#).is_err());
    }
}
