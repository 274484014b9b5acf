//! Layer-wise output bounds from linear upper/lower relaxations of ReLU.
//!
//! Every uncertain neuron (`l < 0 < u`) is sandwiched between the two lines
//! `d·y ≤ σ(y) ≤ d·(y − l)` with slope `d = u / (u − l)`. Folding these through
//! the network gives affine functions `f^L ≤ f ≤ f^U` on the perturbation set,
//! whose extremes over the set are available in closed form.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{Layer, Network};
use crate::region::Perturbation;

/// Pre-activation interval `[lower, upper]` for every neuron of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LayerBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::shape("LayerBounds::new", lower.len(), upper.len()));
        }
        Ok(LayerBounds { lower, upper })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronStatus {
    /// `l ≥ 0`: the ReLU is the identity on the whole set.
    Active,
    /// `u ≤ 0`: the ReLU outputs zero on the whole set.
    Inactive,
    /// `l < 0 < u`.
    Uncertain,
}

/// Split of a layer's neurons into always-active, always-inactive and uncertain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronPartition {
    status: Vec<NeuronStatus>,
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub uncertain: Vec<usize>,
}

impl NeuronPartition {
    pub fn from_status(status: Vec<NeuronStatus>) -> Self {
        let mut part = NeuronPartition {
            active: Vec::new(),
            inactive: Vec::new(),
            uncertain: Vec::new(),
            status: Vec::new(),
        };
        for (r, s) in status.iter().enumerate() {
            match s {
                NeuronStatus::Active => part.active.push(r),
                NeuronStatus::Inactive => part.inactive.push(r),
                NeuronStatus::Uncertain => part.uncertain.push(r),
            }
        }
        part.status = status;
        part
    }

    pub fn status(&self, r: usize) -> NeuronStatus {
        self.status[r]
    }

    pub fn statuses(&self) -> &[NeuronStatus] {
        &self.status
    }

    pub fn len(&self) -> usize {
        self.status.len()
    }

    pub fn is_empty(&self) -> bool {
        self.status.is_empty()
    }
}

pub fn classify_neurons(lb: &LayerBounds) -> Result<NeuronPartition> {
    let status = lb
        .lower
        .iter()
        .zip(&lb.upper)
        .enumerate()
        .map(|(r, (&l, &u))| {
            if l.is_nan() || u.is_nan() || l > u {
                return Err(Error::InvalidState(format!(
                    "neuron {r} has lower bound {l} above upper bound {u}"
                )));
            }
            Ok(if l == u {
                // degenerate interval: classify by sign, zero counts as inactive
                if l > 0.0 {
                    NeuronStatus::Active
                } else {
                    NeuronStatus::Inactive
                }
            } else if l >= 0.0 {
                NeuronStatus::Active
            } else if u <= 0.0 {
                NeuronStatus::Inactive
            } else {
                NeuronStatus::Uncertain
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NeuronPartition::from_status(status))
}

/// Diagonal of the relaxation slope matrix: `u/(u−l)` on uncertain neurons,
/// 1 on active and 0 on inactive ones.
pub fn slope_matrix(lb: &LayerBounds, part: &NeuronPartition) -> Vec<f64> {
    part.statuses()
        .iter()
        .enumerate()
        .map(|(r, s)| match s {
            NeuronStatus::Active => 1.0,
            NeuronStatus::Inactive => 0.0,
            NeuronStatus::Uncertain => lb.upper[r] / (lb.upper[r] - lb.lower[r]),
        })
        .collect()
}

/// Closed-form bounds `γ^L ≤ z ≤ γ^U` on a layer's pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSideBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl From<TwoSideBounds> for LayerBounds {
    fn from(b: TwoSideBounds) -> Self {
        LayerBounds {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

/// Full intermediate state for bounding layer `m′` from layers `1..m′−1`.
///
/// Index `k` of `a` holds `A^(k)` (shape `n_{m′} × n_k`); `slopes`, `upper_sel`
/// and `lower_sel` are indexed by `k − 1` for hidden layers `k = 1..m′−1`.
#[derive(Debug, Clone)]
pub struct BoundState {
    pub a: Vec<Matrix>,
    pub slopes: Vec<Vec<f64>>,
    /// `T^(k)`, shape `n_k × n_{m′}`: `l_r` where `r` is uncertain and `A^(k)_{j,r} > 0`.
    pub upper_sel: Vec<Matrix>,
    /// `H^(k)`, shape `n_k × n_{m′}`: `l_r` where `r` is uncertain and `A^(k)_{j,r} < 0`.
    pub lower_sel: Vec<Matrix>,
    pub nu: Vec<f64>,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub gamma: TwoSideBounds,
}

fn check_prior(net: &Network, prior: &[LayerBounds], target: usize) -> Result<()> {
    if target == 0 || target > net.depth() {
        return Err(Error::param(format!(
            "target layer {target} outside 1..={}",
            net.depth()
        )));
    }
    if prior.len() != target - 1 {
        return Err(Error::InvalidState(format!(
            "bounding layer {target} needs bounds for {} earlier layers, got {}",
            target - 1,
            prior.len()
        )));
    }
    for (k, lb) in prior.iter().enumerate() {
        if lb.len() != net.layer(k + 1).outputs() {
            return Err(Error::InvalidState(format!(
                "bounds for layer {} have {} entries, layer has {} neurons",
                k + 1,
                lb.len(),
                net.layer(k + 1).outputs()
            )));
        }
    }
    Ok(())
}

fn check_region(net: &Network, region: &Perturbation) -> Result<()> {
    if region.dim() != net.input_dim() {
        return Err(Error::shape(
            "perturbation anchor",
            net.input_dim(),
            region.dim(),
        ));
    }
    Ok(())
}

/// Builds the `A/D/T/H` matrices for layer `target` from scratch and
/// evaluates the closed-form bounds.
pub fn bound_state(
    net: &Network,
    region: &Perturbation,
    prior: &[LayerBounds],
    target: usize,
) -> Result<BoundState> {
    check_region(net, region)?;
    check_prior(net, prior, target)?;
    let parts = prior
        .iter()
        .map(classify_neurons)
        .collect::<Result<Vec<_>>>()?;
    let slopes: Vec<Vec<f64>> = prior
        .iter()
        .zip(&parts)
        .map(|(lb, p)| slope_matrix(lb, p))
        .collect();

    // A^(target-1) = W^(target) D^(target-1); A^(k-1) = A^(k) W^(k) D^(k-1)
    let mut a = vec![Matrix::zeros(0, 0); target];
    a[target - 1] = if target == 1 {
        net.layer(1).weights.clone()
    } else {
        net.layer(target)
            .weights
            .scale_columns(&slopes[target - 2])?
    };
    for k in (1..target).rev() {
        let prod = a[k].matmul(&net.layer(k).weights)?;
        a[k - 1] = if k == 1 {
            prod
        } else {
            prod.scale_columns(&slopes[k - 2])?
        };
    }

    let n_out = net.layer(target).outputs();
    let mut upper_sel = Vec::with_capacity(target - 1);
    let mut lower_sel = Vec::with_capacity(target - 1);
    for k in 1..target {
        let n_k = net.layer(k).outputs();
        let mut t = Matrix::zeros(n_k, n_out);
        let mut h = Matrix::zeros(n_k, n_out);
        for &r in &parts[k - 1].uncertain {
            for j in 0..n_out {
                let coeff = a[k][(j, r)];
                if coeff > 0.0 {
                    t[(r, j)] = prior[k - 1].lower[r];
                } else if coeff < 0.0 {
                    h[(r, j)] = prior[k - 1].lower[r];
                }
            }
        }
        upper_sel.push(t);
        lower_sel.push(h);
    }

    let bias_out = &net.layer(target).bias;
    let mut nu = vec![0.0; n_out];
    let mut mu_plus = vec![0.0; n_out];
    let mut mu_minus = vec![0.0; n_out];
    let mut gamma = TwoSideBounds {
        lower: vec![0.0; n_out],
        upper: vec![0.0; n_out],
    };
    for j in 0..n_out {
        let a0 = a[0].row(j);
        let mut offset = bias_out[j];
        for k in 1..target {
            let row = a[k].row(j);
            offset += dot(row, &net.layer(k).bias);
            mu_plus[j] -= dot(row, &upper_sel[k - 1].column(j));
            mu_minus[j] -= dot(row, &lower_sel[k - 1].column(j));
        }
        nu[j] = dot(a0, region.x0()) + offset;
        let (lin_lo, lin_hi) = region.linear_range(a0);
        gamma.lower[j] = mu_minus[j] + offset + lin_lo;
        gamma.upper[j] = mu_plus[j] + offset + lin_hi;
    }
    check_finite(&gamma, target)?;
    Ok(BoundState {
        a,
        slopes,
        upper_sel,
        lower_sel,
        nu,
        mu_plus,
        mu_minus,
        gamma,
    })
}

/// `γ^L, γ^U` for the pre-activations of layer `target` (1-based), given
/// bounds for every earlier layer.
pub fn compute_two_side_bounds(
    net: &Network,
    region: &Perturbation,
    prior: &[LayerBounds],
    target: usize,
) -> Result<TwoSideBounds> {
    Ok(bound_state(net, region, prior, target)?.gamma)
}

fn check_finite(g: &TwoSideBounds, layer: usize) -> Result<()> {
    if g.lower.iter().chain(&g.upper).any(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            layer,
            message: "pre-activation bound is not finite".into(),
        });
    }
    Ok(())
}

/// Incremental layer-by-layer bound propagation.
///
/// Keeps the products `A^(k)` from the previous layer so that advancing one
/// layer costs one multiplication per saved matrix.
#[derive(Debug, Clone)]
pub struct FastLin<'a> {
    net: &'a Network,
    region: &'a Perturbation,
    bounds: Vec<LayerBounds>,
    parts: Vec<NeuronPartition>,
    slopes: Vec<Vec<f64>>,
    saved: Vec<Matrix>,
}

impl<'a> FastLin<'a> {
    pub fn new(net: &'a Network, region: &'a Perturbation) -> Result<Self> {
        check_region(net, region)?;
        Ok(FastLin {
            net,
            region,
            bounds: Vec::with_capacity(net.depth()),
            parts: Vec::with_capacity(net.depth()),
            slopes: Vec::with_capacity(net.depth()),
            saved: Vec::new(),
        })
    }

    /// Number of layers bounded so far.
    pub fn bounded(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[LayerBounds] {
        &self.bounds
    }

    pub fn partitions(&self) -> &[NeuronPartition] {
        &self.parts
    }

    pub fn into_bounds(self) -> Vec<LayerBounds> {
        self.bounds
    }

    /// Bounds the next layer and records its partition and slopes.
    pub fn advance(&mut self) -> Result<&LayerBounds> {
        let target = self.bounds.len() + 1;
        if target > self.net.depth() {
            return Err(Error::InvalidState("all layers already bounded".into()));
        }
        let layer = self.net.layer(target);
        self.saved = self.chain_for(layer)?;
        let gamma = self.gamma_from(&self.saved, &layer.bias, target)?;
        let lb: LayerBounds = gamma.into();
        let part = classify_neurons(&lb)?;
        self.slopes.push(slope_matrix(&lb, &part));
        self.parts.push(part);
        self.bounds.push(lb);
        Ok(&self.bounds[target - 1])
    }

    /// Bounds an arbitrary layer placed on top of the layers bounded so far,
    /// without mutating the engine.
    pub fn bound_on_top(&self, layer: &Layer) -> Result<TwoSideBounds> {
        let chain = self.chain_for(layer)?;
        self.gamma_from(&chain, &layer.bias, self.bounds.len() + 1)
    }

    fn chain_for(&self, layer: &Layer) -> Result<Vec<Matrix>> {
        let target = self.bounds.len() + 1;
        if target == 1 {
            if layer.inputs() != self.net.input_dim() {
                return Err(Error::shape(
                    "FastLin layer",
                    self.net.input_dim(),
                    layer.inputs(),
                ));
            }
            return Ok(vec![layer.weights.clone()]);
        }
        let top = layer.weights.scale_columns(&self.slopes[target - 2])?;
        let mut chain = Vec::with_capacity(target);
        for saved in &self.saved {
            chain.push(top.matmul(saved)?);
        }
        chain.push(top);
        Ok(chain)
    }

    fn gamma_from(&self, a: &[Matrix], bias_out: &[f64], target: usize) -> Result<TwoSideBounds> {
        let n_out = a[0].rows();
        let mut lower = vec![0.0; n_out];
        let mut upper = vec![0.0; n_out];
        for j in 0..n_out {
            let mut offset = bias_out[j];
            let (mut mu_plus, mut mu_minus) = (0.0, 0.0);
            for (k, ak) in a.iter().enumerate().take(target).skip(1) {
                let row = ak.row(j);
                offset += dot(row, &self.net.layer(k).bias);
                let lb = &self.bounds[k - 1].lower;
                for &r in &self.parts[k - 1].uncertain {
                    let coeff = row[r];
                    if coeff > 0.0 {
                        mu_plus -= coeff * lb[r];
                    } else if coeff < 0.0 {
                        mu_minus -= coeff * lb[r];
                    }
                }
            }
            let (lin_lo, lin_hi) = self.region.linear_range(a[0].row(j));
            lower[j] = mu_minus + offset + lin_lo;
            upper[j] = mu_plus + offset + lin_hi;
        }
        let g = TwoSideBounds { lower, upper };
        check_finite(&g, target)?;
        Ok(g)
    }
}

/// Pre-activation bounds for every hidden layer `1..m−1`.
pub fn propagate_bounds(net: &Network, region: &Perturbation) -> Result<Vec<LayerBounds>> {
    let mut engine = FastLin::new(net, region)?;
    for _ in 1..net.depth() {
        engine.advance()?;
    }
    Ok(engine.into_bounds())
}

/// Bounds for all `m` layers; the last entry bounds the network output.
pub fn propagate_all(net: &Network, region: &Perturbation) -> Result<Vec<LayerBounds>> {
    let mut engine = FastLin::new(net, region)?;
    for _ in 0..net.depth() {
        engine.advance()?;
    }
    Ok(engine.into_bounds())
}

/// `x ↦ ⟨coeffs, x⟩ + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForm {
    pub coeffs: Vec<f64>,
    pub constant: f64,
}

impl AffineForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x) + self.constant
    }
}

/// The explicit linear bounding functions of every network output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputBoundFunctions {
    pub lower: Vec<AffineForm>,
    pub upper: Vec<AffineForm>,
}

/// `f^L_j(x) = A^(0)_j x + b^(m)_j + Σ_k A^(k)_j (b^(k) − H^(k)_{:,j})` and the
/// analogous `f^U` with `T^(k)`, valid on the region the bounds came from.
pub fn output_bound_functions(
    net: &Network,
    region: &Perturbation,
    hidden: &[LayerBounds],
) -> Result<OutputBoundFunctions> {
    let st = bound_state(net, region, hidden, net.depth())?;
    let n_out = net.output_dim();
    let mut lower = Vec::with_capacity(n_out);
    let mut upper = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let coeffs = st.a[0].row(j).to_vec();
        let base = st.nu[j] - dot(&coeffs, region.x0());
        lower.push(AffineForm {
            coeffs: coeffs.clone(),
            constant: base + st.mu_minus[j],
        });
        upper.push(AffineForm {
            coeffs,
            constant: base + st.mu_plus[j],
        });
    }
    Ok(OutputBoundFunctions { lower, upper })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::NormOrder;

    fn net(layers: &[(&[&[f64]], &[f64])]) -> Network {
        Network::new(
            layers
                .iter()
                .map(|(w, b)| Layer::new(Matrix::from_rows(w).unwrap(), b.to_vec()).unwrap())
                .collect(),
        )
        .unwrap()
    }

    /// f(x) = σ(x) + σ(−x) = |x|
    fn hat() -> Network {
        net(&[(&[&[1.0], &[-1.0]], &[0.0, 0.0]), (&[&[1.0, 1.0]], &[0.0])])
    }

    fn ball(x0: &[f64], eps: f64, p: NormOrder) -> Perturbation {
        Perturbation::new(x0.to_vec(), eps, p).unwrap()
    }

    #[test]
    fn classify_examples() {
        let lb = LayerBounds::new(vec![-1.0, 2.0, -3.0], vec![1.0, 3.0, -1.0]).unwrap();
        let p = classify_neurons(&lb).unwrap();
        assert_eq!(p.uncertain, vec![0]);
        assert_eq!(p.active, vec![1]);
        assert_eq!(p.inactive, vec![2]);

        let zero = LayerBounds::new(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(classify_neurons(&zero).unwrap().inactive, vec![0]);
        let edge = LayerBounds::new(vec![0.0], vec![5.0]).unwrap();
        assert_eq!(classify_neurons(&edge).unwrap().active, vec![0]);
        let upper_zero = LayerBounds::new(vec![-2.0], vec![0.0]).unwrap();
        assert_eq!(classify_neurons(&upper_zero).unwrap().inactive, vec![0]);

        let bad = LayerBounds::new(vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(
            classify_neurons(&bad),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn slope_examples() {
        let lb = LayerBounds::new(vec![-1.0, -1.0, 1.0, -2.0], vec![1.0, 3.0, 2.0, -1.0]).unwrap();
        let p = classify_neurons(&lb).unwrap();
        assert_eq!(slope_matrix(&lb, &p), vec![0.5, 0.75, 1.0, 0.0]);
    }

    #[test]
    fn linear_first_layer() {
        let n = net(&[(&[&[1.0, -1.0]], &[0.0])]);
        let g =
            compute_two_side_bounds(&n, &ball(&[0.0, 0.0], 1.0, NormOrder::Inf), &[], 1).unwrap();
        assert_eq!(g.lower, vec![-2.0]);
        assert_eq!(g.upper, vec![2.0]);
    }

    #[test]
    fn hat_network_output_range() {
        let n = hat();
        let prior = [LayerBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()];
        let g = compute_two_side_bounds(&n, &ball(&[0.0], 1.0, NormOrder::Inf), &prior, 2).unwrap();
        assert!((g.lower[0] - 0.0).abs() < 1e-15, "{:?}", g);
        assert!((g.upper[0] - 1.0).abs() < 1e-15, "{:?}", g);
    }

    #[test]
    fn hat_network_bound_functions() {
        let n = hat();
        let region = ball(&[0.0], 1.0, NormOrder::Inf);
        let hidden = propagate_bounds(&n, &region).unwrap();
        assert_eq!(hidden[0].lower, vec![-1.0, -1.0]);
        let f = output_bound_functions(&n, &region, &hidden).unwrap();
        assert_eq!(f.upper[0].coeffs, vec![0.0]);
        assert_eq!(f.upper[0].constant, 1.0);
        assert_eq!(f.lower[0].coeffs, vec![0.0]);
        assert_eq!(f.lower[0].constant, 0.0);
    }

    #[test]
    fn missing_prior_is_invalid_state() {
        let n = hat();
        let r = ball(&[0.0], 1.0, NormOrder::Inf);
        assert!(matches!(
            compute_two_side_bounds(&n, &r, &[], 2),
            Err(Error::InvalidState(_))
        ));
        assert!(compute_two_side_bounds(&n, &r, &[], 3).is_err());
    }

    #[test]
    fn zero_radius_gives_exact_activations() {
        let n = crate::model::random_network(&[3, 6, 5, 2], 4).unwrap();
        let x0 = [0.3, -0.7, 1.1];
        let bounds = propagate_all(&n, &ball(&x0, 0.0, NormOrder::L2)).unwrap();
        let z = n.pre_activations(&x0).unwrap();
        for (lb, zk) in bounds.iter().zip(&z) {
            for ((l, u), z) in lb.lower.iter().zip(&lb.upper).zip(zk) {
                assert!((l - z).abs() < 1e-12);
                assert!((u - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn engine_matches_from_scratch() {
        let n = crate::model::random_network(&[4, 7, 6, 5, 3], 21).unwrap();
        for p in NormOrder::ALL {
            let region = ball(&[0.2, -0.1, 0.4, 0.0], 0.3, p);
            let all = propagate_all(&n, &region).unwrap();
            for target in 1..=n.depth() {
                let g = compute_two_side_bounds(&n, &region, &all[..target - 1], target).unwrap();
                for i in 0..g.lower.len() {
                    assert!((g.lower[i] - all[target - 1].lower[i]).abs() < 1e-12);
                    assert!((g.upper[i] - all[target - 1].upper[i]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn selectors_are_exclusive() {
        let n = crate::model::random_network(&[3, 8, 8, 4], 5).unwrap();
        let region = ball(&[0.5, -0.5, 0.1], 0.4, NormOrder::Inf);
        let hidden = propagate_bounds(&n, &region).unwrap();
        let st = bound_state(&n, &region, &hidden, n.depth()).unwrap();
        for (t, h) in st.upper_sel.iter().zip(&st.lower_sel) {
            for (a, b) in t.as_slice().iter().zip(h.as_slice()) {
                assert!(*a == 0.0 || *b == 0.0);
            }
        }
        for d in st.slopes.iter().flatten() {
            assert!((0.0..=1.0).contains(d));
        }
    }
}
