//! Local Lipschitz bounds from worst-case activation patterns.
//!
//! On the perturbation set the margin gradient is `w̄ Λ_{m−1} W_{m−1} ⋯ Λ_1 W_1`
//! where each diagonal `Λ_k` is fixed to 1 on active neurons, 0 on inactive
//! ones and unknown in {0, 1} on uncertain ones. Each gradient coordinate is
//! bounded by interval arithmetic over those unknowns, tracked as a constant
//! part `C` plus slack `L ≤ 0 ≤ U`.

use crate::error::{Error, Result};
use crate::fastlin::{
    classify_neurons, propagate_bounds, LayerBounds, NeuronPartition, NeuronStatus,
};
use crate::linalg::{induced_norm, vec_qnorm, Matrix, NormOrder};
use crate::model::{MarginNetwork, Network};
use crate::region::Perturbation;

/// Interval bounds `[C + L, C + U]` on a partially multiplied gradient product.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBoundState {
    pub c: Matrix,
    pub l: Matrix,
    pub u: Matrix,
}

impl GradBoundState {
    /// An exactly known product: no slack.
    pub fn exact(c: Matrix) -> Self {
        let (r, k) = c.shape();
        GradBoundState {
            c,
            l: Matrix::zeros(r, k),
            u: Matrix::zeros(r, k),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.c.shape()
    }

    /// Elementwise `max(|C + L|, |C + U|)`.
    pub fn abs_max(&self) -> Matrix {
        let data = self
            .c
            .as_slice()
            .iter()
            .zip(self.l.as_slice())
            .zip(self.u.as_slice())
            .map(|((c, l), u)| (c + l).abs().max((c + u).abs()))
            .collect();
        Matrix::from_vec(self.c.rows(), self.c.cols(), data).expect("same shape")
    }

    pub fn lower(&self) -> Matrix {
        add(&self.c, &self.l)
    }

    pub fn upper(&self) -> Matrix {
        add(&self.c, &self.u)
    }
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x + y)
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Accumulates `w · y` for `y ∈ [c + l, c + u]` through a ReLU gate of the
/// given status into (`c_out`, `l_out`, `u_out`).
#[inline]
#[allow(clippy::too_many_arguments)]
fn accumulate(
    status: NeuronStatus,
    w: f64,
    c: f64,
    l: f64,
    u: f64,
    c_out: &mut f64,
    l_out: &mut f64,
    u_out: &mut f64,
) {
    match status {
        NeuronStatus::Inactive => {}
        NeuronStatus::Active => {
            *c_out += w * c;
            if w > 0.0 {
                *u_out += w * u;
                *l_out += w * l;
            } else if w < 0.0 {
                *u_out += w * l;
                *l_out += w * u;
            }
        }
        NeuronStatus::Uncertain => {
            let (cl, cu) = (c + l, c + u);
            if w > 0.0 {
                if cu > 0.0 {
                    *u_out += w * cu;
                }
                if cl < 0.0 {
                    *l_out += w * cl;
                }
            } else if w < 0.0 {
                if cl < 0.0 {
                    *u_out += w * cl;
                }
                if cu > 0.0 {
                    *l_out += w * cu;
                }
            }
        }
    }
}

/// One right-to-left step: bounds `W_next · Λ · Y` where `Y` is bounded by
/// `state` (rows indexed by the neurons of `part`).
pub fn bound_layer_grad(
    state: &GradBoundState,
    w_next: &Matrix,
    part: &NeuronPartition,
) -> Result<GradBoundState> {
    let (n, n0) = state.shape();
    if part.len() != n || w_next.cols() != n {
        return Err(Error::shape(
            "bound_layer_grad",
            format!("{n} neurons"),
            format!(
                "partition of {}, weights with {} columns",
                part.len(),
                w_next.cols()
            ),
        ));
    }
    let rows = w_next.rows();
    let mut c = Matrix::zeros(rows, n0);
    let mut l = Matrix::zeros(rows, n0);
    let mut u = Matrix::zeros(rows, n0);
    for j in 0..rows {
        let (c_out, l_out, u_out) = (c.row_mut(j), l.row_mut(j), u.row_mut(j));
        for (i, &w) in w_next.row(j).iter().enumerate() {
            let status = part.status(i);
            if w == 0.0 || status == NeuronStatus::Inactive {
                continue;
            }
            let (ci, li, ui) = (state.c.row(i), state.l.row(i), state.u.row(i));
            for k in 0..n0 {
                accumulate(
                    status,
                    w,
                    ci[k],
                    li[k],
                    ui[k],
                    &mut c_out[k],
                    &mut l_out[k],
                    &mut u_out[k],
                );
            }
        }
    }
    Ok(GradBoundState { c, l, u })
}

/// One left-to-right step: bounds `Y · Λ · W` where `Y` is bounded by `state`
/// (columns indexed by the neurons of `part`).
pub fn bound_layer_grad_left(
    state: &GradBoundState,
    part: &NeuronPartition,
    w: &Matrix,
) -> Result<GradBoundState> {
    let (rows, n) = state.shape();
    if part.len() != n || w.rows() != n {
        return Err(Error::shape(
            "bound_layer_grad_left",
            format!("{n} neurons"),
            format!(
                "partition of {}, weights with {} rows",
                part.len(),
                w.rows()
            ),
        ));
    }
    let n_prev = w.cols();
    let mut c = Matrix::zeros(rows, n_prev);
    let mut l = Matrix::zeros(rows, n_prev);
    let mut u = Matrix::zeros(rows, n_prev);
    for j in 0..rows {
        let (c_out, l_out, u_out) = (c.row_mut(j), l.row_mut(j), u.row_mut(j));
        for i in 0..n {
            let status = part.status(i);
            if status == NeuronStatus::Inactive {
                continue;
            }
            let (ci, li, ui) = (state.c[(j, i)], state.l[(j, i)], state.u[(j, i)]);
            for (k, &wik) in w.row(i).iter().enumerate() {
                accumulate(
                    status,
                    wik,
                    ci,
                    li,
                    ui,
                    &mut c_out[k],
                    &mut l_out[k],
                    &mut u_out[k],
                );
            }
        }
    }
    Ok(GradBoundState { c, l, u })
}

fn hidden_partitions(net: &Network, hidden: &[LayerBounds]) -> Result<Vec<NeuronPartition>> {
    if hidden.len() != net.depth() - 1 {
        return Err(Error::InvalidState(format!(
            "need bounds for {} hidden layers, got {}",
            net.depth() - 1,
            hidden.len()
        )));
    }
    hidden.iter().map(classify_neurons).collect()
}

/// Interval bounds on every coordinate of the margin gradient, computed from
/// the output row backwards (state shaped `1 × n_k`).
pub fn grad_bound_state(net: &MarginNetwork, hidden: &[LayerBounds]) -> Result<GradBoundState> {
    let parts = hidden_partitions(net, hidden)?;
    let m = net.depth();
    let mut state = GradBoundState::exact(net.layer(m).weights.clone());
    for k in (1..m).rev() {
        state = bound_layer_grad_left(&state, &parts[k - 1], &net.layer(k).weights)?;
    }
    Ok(state)
}

/// The same bounds folded from the input side, `C^(0) = W^(1)`, one
/// [`bound_layer_grad`] per layer.
pub fn grad_bound_state_right_to_left(
    net: &MarginNetwork,
    hidden: &[LayerBounds],
) -> Result<GradBoundState> {
    let parts = hidden_partitions(net, hidden)?;
    let m = net.depth();
    let mut state = GradBoundState::exact(net.layer(1).weights.clone());
    for k in 1..m {
        state = bound_layer_grad(&state, &net.layer(k + 1).weights, &parts[k - 1])?;
    }
    Ok(state)
}

/// `v_k ≥ max |∂g/∂x_k|` over the set the hidden bounds were computed on.
pub fn grad_bound_all(net: &MarginNetwork, hidden: &[LayerBounds]) -> Result<Vec<f64>> {
    Ok(grad_bound_state(net, hidden)?.abs_max().into_vec())
}

/// A Lipschitz-based certified radius for one ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzBound {
    /// `g(x0)`.
    pub margin: f64,
    /// Upper bound on the local Lipschitz constant in the dual norm.
    pub lipschitz: f64,
    /// `min(g(x0) / lipschitz, ε)`, or 0 if `g(x0) ≤ 0`.
    pub radius: f64,
}

impl LipschitzBound {
    fn new(margin: f64, lipschitz: f64, eps: f64) -> Self {
        let radius = if margin <= 0.0 {
            0.0
        } else if lipschitz == 0.0 {
            // g cannot decrease anywhere on the ball
            eps
        } else {
            (margin / lipschitz).min(eps)
        };
        LipschitzBound {
            margin,
            lipschitz,
            radius,
        }
    }

    pub fn misclassified(&self) -> bool {
        self.margin <= 0.0
    }

    /// Whether the whole queried radius is certified.
    pub fn certifies(&self, eps: f64) -> bool {
        !self.misclassified() && self.radius >= eps
    }
}

/// Fast-Lip certificate for the ball in `region`.
pub fn lip_lower_bound(net: &MarginNetwork, region: &Perturbation) -> Result<LipschitzBound> {
    let margin = net.margin(region.x0())?;
    let hidden = propagate_bounds(net, region)?;
    let v = grad_bound_all(net, &hidden)?;
    let lip = vec_qnorm(&v, region.q());
    if !lip.is_finite() {
        return Err(Error::Numeric {
            layer: net.depth(),
            message: "gradient bound is not finite".into(),
        });
    }
    Ok(LipschitzBound::new(margin, lip, region.eps()))
}

/// Global Lipschitz constant `‖w̄‖_q · ∏_{k<m} ‖W^(k)‖_{p→p}` of the margin.
pub fn opnorm_lipschitz(net: &MarginNetwork, p: NormOrder) -> Result<f64> {
    let mut lip = vec_qnorm(net.margin_weights(), p.dual());
    for k in 1..net.depth() {
        lip *= induced_norm(&net.layer(k).weights, p)?;
    }
    Ok(lip)
}

/// Operator-norm certified radius `g(x0) / L_global`.
///
/// Returns `f64::INFINITY` when the global constant is zero and 0 when `x0`
/// is already on the wrong side of the margin.
pub fn opnorm_bound(net: &Network, x0: &[f64], c: usize, j: usize, p: NormOrder) -> Result<f64> {
    let g = net.merge_last_layer(c, j)?;
    let margin = g.margin(x0)?;
    if margin <= 0.0 {
        return Ok(0.0);
    }
    let lip = opnorm_lipschitz(&g, p)?;
    Ok(if lip == 0.0 {
        f64::INFINITY
    } else {
        margin / lip
    })
}

/// Sub-additive Lipschitz bound for a single hidden layer:
/// `‖w̄ Λ_a W1‖_q + Σ_{r uncertain} ‖w̄_r W1_{r,:}‖_q`.
pub fn appendix_e_bound_2layer(
    net: &MarginNetwork,
    part: &NeuronPartition,
    q: NormOrder,
) -> Result<f64> {
    if net.depth() != 2 {
        return Err(Error::param(format!(
            "the sub-additive bound needs exactly one hidden layer, network has {} layers",
            net.depth()
        )));
    }
    let w1 = &net.layer(1).weights;
    if part.len() != w1.rows() {
        return Err(Error::shape(
            "appendix_e_bound_2layer",
            w1.rows(),
            part.len(),
        ));
    }
    let wbar = net.margin_weights();
    let mut active = vec![0.0; w1.cols()];
    for &r in &part.active {
        for (a, x) in active.iter_mut().zip(w1.row(r)) {
            *a += wbar[r] * x;
        }
    }
    let uncertain: f64 = part
        .uncertain
        .iter()
        .map(|&r| wbar[r].abs() * vec_qnorm(w1.row(r), q))
        .sum();
    Ok(vec_qnorm(&active, q) + uncertain)
}

/// Certified radius from [`appendix_e_bound_2layer`] on the ball in `region`.
pub fn appendix_e_lower_bound(
    net: &MarginNetwork,
    region: &Perturbation,
) -> Result<LipschitzBound> {
    let margin = net.margin(region.x0())?;
    let hidden = propagate_bounds(net, region)?;
    let part = hidden
        .first()
        .map(classify_neurons)
        .transpose()?
        .ok_or_else(|| Error::param("the sub-additive bound needs one hidden layer"))?;
    let lip = appendix_e_bound_2layer(net, &part, region.q())?;
    Ok(LipschitzBound::new(margin, lip, region.eps()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;

    fn margin_net(layers: &[(&[&[f64]], &[f64])]) -> MarginNetwork {
        let net = Network::new(
            layers
                .iter()
                .map(|(w, b)| Layer::new(Matrix::from_rows(w).unwrap(), b.to_vec()).unwrap())
                .collect(),
        )
        .unwrap();
        MarginNetwork::from_network(net, 0, 1).unwrap()
    }

    fn part(status: &[NeuronStatus]) -> NeuronPartition {
        NeuronPartition::from_status(status.to_vec())
    }

    use NeuronStatus::{Active as A, Inactive as I, Uncertain as U};

    #[test]
    fn passthrough_and_dead_layers() {
        let c0 = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let w = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap();
        let st = bound_layer_grad(&GradBoundState::exact(c0.clone()), &w, &part(&[A, A])).unwrap();
        assert_eq!(st.c, w.matmul(&c0).unwrap());
        assert_eq!(st.l, Matrix::zeros(2, 2));
        assert_eq!(st.u, Matrix::zeros(2, 2));

        let st = bound_layer_grad(&GradBoundState::exact(c0), &w, &part(&[I, I])).unwrap();
        assert_eq!(st, GradBoundState::exact(Matrix::zeros(2, 2)));
    }

    #[test]
    fn hat_step_bounds() {
        let c0 = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let w = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let st = bound_layer_grad(&GradBoundState::exact(c0), &w, &part(&[U, U])).unwrap();
        assert_eq!(st.c.as_slice(), &[0.0]);
        assert_eq!(st.u.as_slice(), &[1.0]);
        assert_eq!(st.l.as_slice(), &[-1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let st = GradBoundState::exact(Matrix::zeros(2, 1));
        assert!(bound_layer_grad(&st, &Matrix::zeros(1, 3), &part(&[A, A])).is_err());
        assert!(bound_layer_grad(&st, &Matrix::zeros(1, 2), &part(&[A])).is_err());
    }

    #[test]
    fn linear_margin_gradient() {
        let g = margin_net(&[(&[&[1.0, -1.0]], &[0.0])]);
        assert_eq!(grad_bound_all(&g, &[]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn hat_gradient_bound() {
        let g = margin_net(&[(&[&[1.0], &[-1.0]], &[0.0, 0.0]), (&[&[1.0, 1.0]], &[0.0])]);
        let hidden = [LayerBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()];
        assert_eq!(grad_bound_all(&g, &hidden).unwrap(), vec![1.0]);
        let dead = [LayerBounds::new(vec![-2.0, -2.0], vec![-1.0, -1.0]).unwrap()];
        assert_eq!(grad_bound_all(&g, &dead).unwrap(), vec![0.0]);
    }

    #[test]
    fn lip_examples() {
        let g = margin_net(&[(&[&[1.0, -1.0]], &[0.0])]);
        let r = Perturbation::new(vec![1.0, 0.0], 2.0, NormOrder::Inf).unwrap();
        let b = lip_lower_bound(&g, &r).unwrap();
        assert_eq!((b.margin, b.lipschitz, b.radius), (1.0, 2.0, 0.5));
        let r = Perturbation::new(vec![1.0, 0.0], 0.2, NormOrder::Inf).unwrap();
        assert_eq!(lip_lower_bound(&g, &r).unwrap().radius, 0.2);

        // W1 = W2 = I, margin row (1, −1)
        let g = margin_net(&[
            (&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]),
            (&[&[1.0, -1.0]], &[0.0]),
        ]);
        let r = Perturbation::new(vec![1.0, 0.0], 0.6, NormOrder::Inf).unwrap();
        let hidden = propagate_bounds(&g, &r).unwrap();
        assert_eq!(grad_bound_all(&g, &hidden).unwrap(), vec![1.0, 1.0]);
        assert_eq!(lip_lower_bound(&g, &r).unwrap().radius, 0.5);

        // every hidden neuron dead
        let g = margin_net(&[(&[&[1.0]], &[-10.0]), (&[&[1.0]], &[1.0])]);
        let r = Perturbation::new(vec![0.0], 3.0, NormOrder::L2).unwrap();
        let b = lip_lower_bound(&g, &r).unwrap();
        assert_eq!((b.lipschitz, b.radius), (0.0, 3.0));

        let g = margin_net(&[(&[&[-1.0, 0.0]], &[0.0])]);
        let r = Perturbation::new(vec![1.0, 0.0], 1.0, NormOrder::L2).unwrap();
        assert!(lip_lower_bound(&g, &r).unwrap().misclassified());
    }

    fn classes(rows: &[&[f64]], bias: &[f64], hidden: Option<&[&[f64]]>) -> Network {
        let mut layers = Vec::new();
        if let Some(h) = hidden {
            layers.push(Layer::new(Matrix::from_rows(h).unwrap(), vec![0.0; h.len()]).unwrap());
        }
        layers.push(Layer::new(Matrix::from_rows(rows).unwrap(), bias.to_vec()).unwrap());
        Network::new(layers).unwrap()
    }

    #[test]
    fn opnorm_examples() {
        let id: &[&[f64]] = &[&[1.0, 0.0], &[0.0, 1.0]];
        let lin = classes(id, &[0.0, 0.0], None);
        assert_eq!(
            opnorm_bound(&lin, &[1.0, 0.0], 0, 1, NormOrder::Inf).unwrap(),
            0.5
        );
        let two = classes(id, &[0.0, 0.0], Some(id));
        assert_eq!(
            opnorm_bound(&two, &[1.0, 0.0], 0, 1, NormOrder::Inf).unwrap(),
            0.5
        );
        let scaled = classes(id, &[0.0, 0.0], Some(&[&[2.0, 0.0], &[0.0, 2.0]]));
        assert_eq!(
            opnorm_bound(&scaled, &[1.0, 0.0], 0, 1, NormOrder::Inf).unwrap(),
            0.5
        );
        let flat = classes(&[&[0.0, 0.0], &[0.0, 0.0]], &[1.0, 0.0], None);
        assert_eq!(
            opnorm_bound(&flat, &[1.0, 0.0], 0, 1, NormOrder::L2).unwrap(),
            f64::INFINITY
        );
        assert_eq!(
            opnorm_bound(&lin, &[0.0, 1.0], 0, 1, NormOrder::L2).unwrap(),
            0.0
        );
    }

    #[test]
    fn appendix_e_examples() {
        let hat = margin_net(&[(&[&[1.0], &[-1.0]], &[0.0, 0.0]), (&[&[1.0, 1.0]], &[0.0])]);
        assert_eq!(
            appendix_e_bound_2layer(&hat, &part(&[U, U]), NormOrder::L1).unwrap(),
            2.0
        );
        assert_eq!(
            appendix_e_bound_2layer(&hat, &part(&[I, I]), NormOrder::L1).unwrap(),
            0.0
        );

        let g = margin_net(&[
            (&[&[1.0, 2.0], &[-1.0, 3.0]], &[0.0, 0.0]),
            (&[&[2.0, 1.0]], &[0.0]),
        ]);
        // w̄ W1 = (1, 7)
        assert_eq!(
            appendix_e_bound_2layer(&g, &part(&[A, A]), NormOrder::L1).unwrap(),
            8.0
        );
        assert_eq!(
            appendix_e_bound_2layer(&g, &part(&[A, A]), NormOrder::Inf).unwrap(),
            7.0
        );

        let lin = margin_net(&[(&[&[1.0, -1.0]], &[0.0])]);
        assert!(appendix_e_bound_2layer(&lin, &part(&[A]), NormOrder::L1).is_err());
    }
}
