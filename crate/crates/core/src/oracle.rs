//! Reference checks that do not go through the bound engines: sampling,
//! exact gradients, exhaustive grids and pattern enumeration, and a small
//! gradient attack that yields upper bounds on the minimum distortion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certifier::{CertStatus, Certificate};
use crate::error::{Error, Result};
use crate::fastlin::{classify_neurons, LayerBounds, NeuronStatus};
use crate::linalg::{vec_qnorm, NormOrder};
use crate::model::{MarginNetwork, Network};
use crate::region::Perturbation;

/// Pre-activations closer to zero than this count as a kink.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Largest number of uncertain neurons [`pattern_gradients`] will enumerate.
pub const MAX_ENUM_UNCERTAIN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    GridMin,
    PatternEnum,
    AttackUpper,
    SampleCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// A distortion (or Lipschitz value) was found.
    Value(f64),
    /// Nothing misclassifying within the searched radius.
    NotFound {
        searched: f64,
    },
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub kind: OracleKind,
    pub outcome: Outcome,
    /// Perturbation `δ` realizing the outcome (a misclassifying point for
    /// grid/attack results, a counterexample for failed sample checks).
    pub witness: Option<Vec<f64>>,
    /// Points evaluated.
    pub samples: usize,
}

impl OracleResult {
    pub fn value(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

/// What counts as a successful attack at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `f_c(x) − f_j(x) ≤ 0`.
    Targeted { c: usize, j: usize },
    /// Some `j ≠ c` with `f_j(x) ≥ f_c(x)`.
    Untargeted { c: usize },
}

impl Objective {
    /// The smallest margin `f_c − f_j` over the relevant targets.
    fn margin(self, logits: &[f64]) -> f64 {
        match self {
            Objective::Targeted { c, j } => logits[c] - logits[j],
            Objective::Untargeted { c } => logits
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != c)
                .map(|(_, &v)| logits[c] - v)
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn flipped(self, net: &Network, x: &[f64]) -> Result<bool> {
        Ok(self.margin(&net.forward(x)?) <= 0.0)
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Uniform-ish points of the ℓp ball: uniform per coordinate for ∞, and a
/// uniform direction with radius `ε·u^{1/n}` for 1 and 2. Points are clipped
/// into the region's input domain, if any.
pub fn sample_in_ball(region: &Perturbation, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = region.dim();
    let eps = region.eps();
    (0..n)
        .map(|_| {
            let delta: Vec<f64> = match region.p() {
                NormOrder::Inf => (0..dim)
                    .map(|_| rng.random_range(-1.0..=1.0) * eps)
                    .collect(),
                p => {
                    let dir = random_direction(&mut rng, dim, p);
                    let u: f64 = rng.random();
                    let r = eps * u.powf(1.0 / dim as f64);
                    dir.into_iter().map(|d| d * r).collect()
                }
            };
            let mut x = add(region.x0(), &delta);
            region.clip(&mut x);
            x
        })
        .collect()
}

/// Points with `‖x − x0‖_p = ε` (before domain clipping), biased towards the
/// extreme points of the ball: cube vertices for ∞ and signed basis vectors
/// for 1 make up half the draws.
pub fn sample_on_sphere(region: &Perturbation, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = region.dim();
    let eps = region.eps();
    (0..n)
        .map(|i| {
            let vertex = i % 2 == 0;
            let delta: Vec<f64> = match region.p() {
                NormOrder::Inf => {
                    let mut d: Vec<f64> = (0..dim)
                        .map(|_| {
                            if vertex {
                                if rng.random::<bool>() {
                                    eps
                                } else {
                                    -eps
                                }
                            } else {
                                rng.random_range(-1.0..=1.0) * eps
                            }
                        })
                        .collect();
                    if !vertex && dim > 0 {
                        let k = rng.random_range(0..dim);
                        d[k] = if rng.random::<bool>() { eps } else { -eps };
                    }
                    d
                }
                NormOrder::L1 if vertex => {
                    let mut d = vec![0.0; dim];
                    if dim > 0 {
                        let k = rng.random_range(0..dim);
                        d[k] = if rng.random::<bool>() { eps } else { -eps };
                    }
                    d
                }
                p => random_direction(&mut rng, dim, p)
                    .into_iter()
                    .map(|d| d * eps)
                    .collect(),
            };
            let mut x = add(region.x0(), &delta);
            region.clip(&mut x);
            x
        })
        .collect()
}

/// Unit-norm direction: normalized Gaussian for ℓ2, normalized symmetric
/// exponential for ℓ1.
fn random_direction(rng: &mut ChaCha8Rng, dim: usize, p: NormOrder) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| match p {
                NormOrder::L2 => StandardNormal.sample(rng),
                _ => {
                    let e: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        e
                    } else {
                        -e
                    }
                }
            })
            .collect();
        let norm = vec_qnorm(&v, p);
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
        if dim == 0 {
            return v;
        }
    }
}

/// Gradient of the margin at a point where every ReLU is differentiable.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientOutcome {
    Gradient(Vec<f64>),
    /// Some pre-activation is within [`BOUNDARY_TOL`] of zero.
    Boundary,
}

/// `w̄ Λ_{m−1} W_{m−1} ⋯ Λ_1 W_1` with the activation pattern at `x`.
pub fn analytic_gradient(net: &MarginNetwork, x: &[f64]) -> Result<GradientOutcome> {
    let z = net.pre_activations(x)?;
    let hidden = &z[..z.len() - 1];
    if hidden.iter().flatten().any(|v| v.abs() <= BOUNDARY_TOL) {
        return Ok(GradientOutcome::Boundary);
    }
    let mask: Vec<Vec<bool>> = hidden
        .iter()
        .map(|zk| zk.iter().map(|&v| v > 0.0).collect())
        .collect();
    Ok(GradientOutcome::Gradient(backprop_row(
        net,
        net.margin_weights(),
        &mask,
    )))
}

/// Pulls a row vector at the last hidden layer back to the input through the
/// given activation masks.
fn backprop_row(net: &Network, row: &[f64], mask: &[Vec<bool>]) -> Vec<f64> {
    let mut g = row.to_vec();
    for k in (1..net.depth()).rev() {
        let w = &net.layer(k).weights;
        let mut next = vec![0.0; w.cols()];
        for (i, gi) in g.iter().enumerate() {
            if !mask[k - 1][i] || *gi == 0.0 {
                continue;
            }
            for (n, wij) in next.iter_mut().zip(w.row(i)) {
                *n += gi * wij;
            }
        }
        g = next;
    }
    g
}

/// Margin value and gradient under the pattern at `x`, ties counted inactive.
fn margin_and_gradient(net: &Network, objective: Objective, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let z = net.pre_activations(x)?;
    let logits = &z[z.len() - 1];
    let (c, j) = match objective {
        Objective::Targeted { c, j } => (c, j),
        Objective::Untargeted { c } => {
            let j = (0..logits.len())
                .filter(|&j| j != c)
                .min_by(|&a, &b| (logits[c] - logits[a]).total_cmp(&(logits[c] - logits[b])))
                .expect("≥ 2 classes");
            (c, j)
        }
    };
    let last = &net.layer(net.depth()).weights;
    let row: Vec<f64> = last
        .row(c)
        .iter()
        .zip(last.row(j))
        .map(|(a, b)| a - b)
        .collect();
    let mask: Vec<Vec<bool>> = z[..z.len() - 1]
        .iter()
        .map(|zk| zk.iter().map(|&v| v > 0.0).collect())
        .collect();
    Ok((logits[c] - logits[j], backprop_row(net, &row, &mask)))
}

/// Every gradient `w̄ Λ ⋯ W_1` over all 0/1 assignments of the uncertain
/// neurons (active neurons fixed to 1, inactive to 0).
pub fn pattern_gradients(net: &MarginNetwork, hidden: &[LayerBounds]) -> Result<Vec<Vec<f64>>> {
    if hidden.len() != net.depth() - 1 {
        return Err(Error::InvalidState(format!(
            "need bounds for {} hidden layers, got {}",
            net.depth() - 1,
            hidden.len()
        )));
    }
    let parts = hidden
        .iter()
        .map(classify_neurons)
        .collect::<Result<Vec<_>>>()?;
    let uncertain: Vec<(usize, usize)> = parts
        .iter()
        .enumerate()
        .flat_map(|(k, p)| p.uncertain.iter().map(move |&r| (k, r)))
        .collect();
    if uncertain.len() > MAX_ENUM_UNCERTAIN {
        return Err(Error::Capacity {
            found: uncertain.len(),
            limit: MAX_ENUM_UNCERTAIN,
        });
    }
    let base: Vec<Vec<bool>> = parts
        .iter()
        .map(|p| {
            p.statuses()
                .iter()
                .map(|s| *s == NeuronStatus::Active)
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(1 << uncertain.len());
    for bits in 0u32..(1u32 << uncertain.len()) {
        let mut mask = base.clone();
        for (b, &(k, r)) in uncertain.iter().enumerate() {
            mask[k][r] = bits >> b & 1 == 1;
        }
        out.push(backprop_row(net, net.margin_weights(), &mask));
    }
    Ok(out)
}

/// Largest `‖gradient‖_q` over all activation patterns consistent with the bounds.
pub fn pattern_enum_max_grad(
    net: &MarginNetwork,
    hidden: &[LayerBounds],
    q: NormOrder,
) -> Result<f64> {
    Ok(pattern_gradients(net, hidden)?
        .iter()
        .map(|g| vec_qnorm(g, q))
        .fold(0.0, f64::max))
}

/// Smallest misclassifying distortion on a regular grid, for every norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScan {
    pub half_width: f64,
    pub resolution: usize,
    /// Indexed like [`NormOrder::ALL`]: `(‖δ‖_p, δ)`.
    pub best: [Option<(f64, Vec<f64>)>; 3],
}

impl GridScan {
    pub fn result(&self, p: NormOrder) -> OracleResult {
        let idx = NormOrder::ALL
            .iter()
            .position(|&q| q == p)
            .expect("all orders listed");
        let samples = self.resolution.pow(self.best_dim() as u32);
        match &self.best[idx] {
            Some((v, d)) => OracleResult {
                kind: OracleKind::GridMin,
                outcome: Outcome::Value(*v),
                witness: Some(d.clone()),
                samples,
            },
            None => OracleResult {
                kind: OracleKind::GridMin,
                outcome: Outcome::NotFound {
                    searched: self.half_width,
                },
                witness: None,
                samples,
            },
        }
    }

    fn best_dim(&self) -> usize {
        self.best
            .iter()
            .flatten()
            .map(|(_, d)| d.len())
            .next()
            .unwrap_or(0)
    }
}

/// Scans `x0 + δ` for `δ` on a `resolution^n0` grid over `[−half_width, half_width]^n0`.
pub fn grid_scan(
    net: &Network,
    x0: &[f64],
    objective: Objective,
    resolution: usize,
    half_width: f64,
) -> Result<GridScan> {
    let n0 = net.input_dim();
    if n0 > 3 {
        return Err(Error::Capacity {
            found: n0,
            limit: 3,
        });
    }
    if resolution < 2 || half_width.is_nan() || half_width <= 0.0 {
        return Err(Error::param(
            "grid needs resolution ≥ 2 and a positive half-width",
        ));
    }
    if x0.len() != n0 {
        return Err(Error::shape("grid_scan", n0, x0.len()));
    }
    let step = 2.0 * half_width / (resolution - 1) as f64;
    let mut best: [Option<(f64, Vec<f64>)>; 3] = [None, None, None];
    let mut idx = vec![0usize; n0];
    let total = resolution.pow(n0 as u32);
    let mut delta = vec![0.0; n0];
    let mut x = vec![0.0; n0];
    for _ in 0..total {
        for i in 0..n0 {
            delta[i] = -half_width + idx[i] as f64 * step;
            x[i] = x0[i] + delta[i];
        }
        let norms = NormOrder::ALL.map(|p| vec_qnorm(&delta, p));
        let improves = best
            .iter()
            .zip(&norms)
            .any(|(b, &n)| b.as_ref().is_none_or(|(v, _)| n < *v));
        if improves && objective.flipped(net, &x)? {
            for (b, &n) in best.iter_mut().zip(&norms) {
                if b.as_ref().is_none_or(|(v, _)| n < *v) {
                    *b = Some((n, delta.clone()));
                }
            }
        }
        // odometer increment
        for i in idx.iter_mut() {
            *i += 1;
            if *i < resolution {
                break;
            }
            *i = 0;
        }
    }
    Ok(GridScan {
        half_width,
        resolution,
        best,
    })
}

/// Grid estimate of the targeted minimum distortion; an upper bound on the
/// true value that converges as the resolution grows.
pub fn grid_min_distortion(
    net: &Network,
    x0: &[f64],
    c: usize,
    j: usize,
    p: NormOrder,
    resolution: usize,
    half_width: f64,
) -> Result<OracleResult> {
    Ok(grid_scan(
        net,
        x0,
        Objective::Targeted { c, j },
        resolution,
        half_width,
    )?
    .result(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// Margin/gradient evaluations allowed.
    pub budget: usize,
    pub restarts: usize,
    /// Projected-descent steps per radius attempt.
    pub steps: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            budget: 20_000,
            restarts: 10,
            steps: 50,
            seed: 0,
        }
    }
}

/// Euclidean projection onto `{δ : ‖δ‖_p ≤ r}`.
pub fn project_ball(delta: &mut [f64], r: f64, p: NormOrder) {
    match p {
        NormOrder::Inf => delta.iter_mut().for_each(|d| *d = d.clamp(-r, r)),
        NormOrder::L2 => {
            let n = vec_qnorm(delta, NormOrder::L2);
            if n > r {
                let s = r / n;
                delta.iter_mut().for_each(|d| *d *= s);
            }
        }
        NormOrder::L1 => {
            if vec_qnorm(delta, NormOrder::L1) <= r {
                return;
            }
            // soft-threshold at the level θ where the ℓ1 mass equals r
            let mut mags: Vec<f64> = delta.iter().map(|d| d.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            let mut cum = 0.0;
            let mut theta = 0.0;
            for (i, &m) in mags.iter().enumerate() {
                cum += m;
                let t = (cum - r) / (i + 1) as f64;
                if m > t {
                    theta = t;
                }
            }
            delta
                .iter_mut()
                .for_each(|d| *d = d.signum() * (d.abs() - theta).max(0.0));
        }
    }
}

struct Attack<'a> {
    net: &'a Network,
    x0: &'a [f64],
    objective: Objective,
    p: NormOrder,
    cfg: &'a AttackConfig,
    used: usize,
    rng: ChaCha8Rng,
    best: Option<(f64, Vec<f64>)>,
}

impl Attack<'_> {
    fn exhausted(&self) -> bool {
        self.used >= self.cfg.budget
    }

    fn eval(&mut self, delta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.used += 1;
        margin_and_gradient(self.net, self.objective, &add(self.x0, delta))
    }

    fn flipped(&mut self, delta: &[f64]) -> Result<bool> {
        self.used += 1;
        self.objective.flipped(self.net, &add(self.x0, delta))
    }

    /// Shrinks a successful `δ` along its ray to the boundary of success.
    fn refine(&mut self, delta: Vec<f64>) -> Result<()> {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let scaled: Vec<f64> = delta.iter().map(|d| d * mid).collect();
            // ray refinement is cheap relative to descent; it is not budgeted
            self.used -= 1;
            if self.flipped(&scaled)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let witness: Vec<f64> = delta.iter().map(|d| d * hi).collect();
        let norm = vec_qnorm(&witness, self.p);
        if self.best.as_ref().is_none_or(|(b, _)| norm < *b) {
            self.best = Some((norm, witness));
        }
        Ok(())
    }

    /// Projected steepest descent of the margin within radius `r`.
    fn descend(&mut self, r: f64, mut delta: Vec<f64>) -> Result<Option<Vec<f64>>> {
        let mut step = 0.25 * r;
        for _ in 0..self.cfg.steps {
            if self.exhausted() {
                return Ok(None);
            }
            let (g, grad) = self.eval(&delta)?;
            if g <= 0.0 {
                return Ok(Some(delta));
            }
            match self.p {
                NormOrder::Inf => {
                    for (d, gi) in delta.iter_mut().zip(&grad) {
                        *d -= step * gi.signum();
                    }
                }
                NormOrder::L2 => {
                    let n = vec_qnorm(&grad, NormOrder::L2);
                    if n == 0.0 {
                        return Ok(None);
                    }
                    for (d, gi) in delta.iter_mut().zip(&grad) {
                        *d -= step * gi / n;
                    }
                }
                NormOrder::L1 => {
                    // greedy coordinate step on the steepest coordinate
                    let (k, gk) = grad
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                        .map(|(k, g)| (k, *g))
                        .unwrap_or((0, 0.0));
                    if gk == 0.0 {
                        return Ok(None);
                    }
                    delta[k] -= step * gk.signum();
                }
            }
            project_ball(&mut delta, r, self.p);
            step = (step * 0.9).max(1e-3 * r);
        }
        let success = self.flipped(&delta)?;
        Ok(success.then_some(delta))
    }

    /// Tries to flip the decision within radius `r` from several starts.
    fn try_radius(&mut self, r: f64) -> Result<bool> {
        let n0 = self.x0.len();
        for restart in 0..self.cfg.restarts.max(1) {
            if self.exhausted() {
                break;
            }
            let start = if restart == 0 {
                vec![0.0; n0]
            } else if restart == 1 {
                match &self.best {
                    Some((_, d)) => {
                        let mut d = d.clone();
                        project_ball(&mut d, r, self.p);
                        d
                    }
                    None => continue,
                }
            } else {
                let region = Perturbation::new(vec![0.0; n0], r, self.p)?;
                let seed = self.rng.random();
                sample_in_ball(&region, 1, seed).pop().expect("one sample")
            };
            if let Some(d) = self.descend(r, start)? {
                self.refine(d)?;
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Searches for a small misclassifying perturbation. Any value returned is
/// a valid upper bound on the minimum distortion, with the witness `δ`.
pub fn attack(
    net: &Network,
    x0: &[f64],
    objective: Objective,
    p: NormOrder,
    cfg: &AttackConfig,
) -> Result<OracleResult> {
    if x0.len() != net.input_dim() {
        return Err(Error::shape("attack", net.input_dim(), x0.len()));
    }
    let mut atk = Attack {
        net,
        x0,
        objective,
        p,
        cfg,
        used: 0,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        best: None,
    };
    let (g0, grad0) = atk.eval(&vec![0.0; x0.len()])?;
    if g0 <= 0.0 {
        return Ok(OracleResult {
            kind: OracleKind::AttackUpper,
            outcome: Outcome::Value(0.0),
            witness: Some(vec![0.0; x0.len()]),
            samples: atk.used,
        });
    }
    let slope = vec_qnorm(&grad0, p.dual());
    let mut r = if slope > 0.0 { g0 / slope } else { 0.05 };
    let mut failed = 0.0;
    let mut grow = 0;
    // grow the radius until something flips
    while atk.best.is_none() && !atk.exhausted() && grow < 40 {
        if atk.try_radius(r)? {
            break;
        }
        failed = r;
        r *= 2.0;
        grow += 1;
    }
    // then tighten between the last failure and the best success
    let mut rounds = 0;
    while let Some((best, _)) = atk.best.clone() {
        if atk.exhausted() || rounds >= 30 || best - failed <= 1e-6 * best {
            break;
        }
        rounds += 1;
        let mid = 0.5 * (failed + best);
        if !atk.try_radius(mid)? {
            failed = mid;
        }
    }
    let searched = r;
    Ok(match atk.best {
        Some((v, d)) => OracleResult {
            kind: OracleKind::AttackUpper,
            outcome: Outcome::Value(v),
            witness: Some(d),
            samples: atk.used,
        },
        None => OracleResult {
            kind: OracleKind::AttackUpper,
            outcome: Outcome::NotFound { searched },
            witness: None,
            samples: atk.used,
        },
    })
}

/// Targeted attack `c → j`.
pub fn attack_upper_bound(
    net: &Network,
    x0: &[f64],
    c: usize,
    j: usize,
    p: NormOrder,
    cfg: &AttackConfig,
) -> Result<OracleResult> {
    if c == j || c >= net.output_dim() || j >= net.output_dim() {
        return Err(Error::param(format!("invalid class pair ({c}, {j})")));
    }
    attack(net, x0, Objective::Targeted { c, j }, p, cfg)
}

/// Largest radius checked for certificates reporting an unbounded radius.
const UNBOUNDED_CHECK_RADIUS: f64 = 1e6;

/// Samples the sphere and ball of radius `radius·(1 − 1e−6)` and reports the
/// first point where the certified decision flips.
pub fn soundness_check(
    cert: &Certificate,
    net: &Network,
    x0: &[f64],
    samples: usize,
    seed: u64,
) -> Result<OracleResult> {
    let pass = |n| OracleResult {
        kind: OracleKind::SampleCheck,
        outcome: Outcome::Pass,
        witness: None,
        samples: n,
    };
    if cert.status == CertStatus::Misclassified || cert.radius == 0.0 {
        return Ok(pass(0));
    }
    let objective = match cert.target_class {
        Some(j) => Objective::Targeted {
            c: cert.true_class,
            j,
        },
        None => Objective::Untargeted { c: cert.true_class },
    };
    let r = cert.radius.min(UNBOUNDED_CHECK_RADIUS) * (1.0 - 1e-6);
    let mut region = Perturbation::new(x0.to_vec(), r, cert.p)?;
    if let Some((lo, hi)) = cert.input_domain {
        region = region.with_domain(lo, hi)?;
    }
    let on_sphere = samples / 2;
    let points = sample_on_sphere(&region, on_sphere, seed)
        .into_iter()
        .chain(sample_in_ball(
            &region,
            samples - on_sphere,
            seed ^ 0x9e37_79b9_7f4a_7c15,
        ));
    for (n, x) in points.enumerate() {
        if objective.flipped(net, &x)? {
            return Ok(OracleResult {
                kind: OracleKind::SampleCheck,
                outcome: Outcome::Fail,
                witness: Some(x.iter().zip(x0).map(|(a, b)| a - b).collect()),
                samples: n + 1,
            });
        }
    }
    Ok(pass(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certifier::Bracket;
    use crate::linalg::Matrix;
    use crate::model::Layer;

    fn identity_net() -> Network {
        Network::new(vec![
            Layer::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap()
        ])
        .unwrap()
    }

    fn hat() -> MarginNetwork {
        let net = Network::new(vec![
            Layer::new(Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(), vec![0.0, 0.0]).unwrap(),
            Layer::new(Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), vec![0.0]).unwrap(),
        ])
        .unwrap();
        MarginNetwork::from_network(net, 0, 1).unwrap()
    }

    #[test]
    fn ball_samples_respect_norm() {
        for p in NormOrder::ALL {
            let region = Perturbation::new(vec![0.5, -1.0, 2.0], 0.3, p).unwrap();
            let pts = sample_in_ball(&region, 500, 3);
            for x in &pts {
                assert!(region.contains(x, 1e-12));
            }
            assert_eq!(pts, sample_in_ball(&region, 500, 3));
            for x in sample_on_sphere(&region, 100, 4) {
                let d: Vec<f64> = x.iter().zip(region.x0()).map(|(a, b)| a - b).collect();
                assert!((vec_qnorm(&d, p) - 0.3).abs() < 1e-12);
            }
            let zero = Perturbation::new(vec![0.5, -1.0, 2.0], 0.0, p).unwrap();
            assert!(sample_in_ball(&zero, 10, 1).iter().all(|x| x == zero.x0()));
        }
    }

    #[test]
    fn gradients() {
        let lin = identity_net().merge_last_layer(0, 1).unwrap();
        assert_eq!(
            analytic_gradient(&lin, &[0.3, 9.0]).unwrap(),
            GradientOutcome::Gradient(vec![1.0, -1.0])
        );
        assert_eq!(
            analytic_gradient(&hat(), &[0.5]).unwrap(),
            GradientOutcome::Gradient(vec![1.0])
        );
        assert_eq!(
            analytic_gradient(&hat(), &[-0.5]).unwrap(),
            GradientOutcome::Gradient(vec![-1.0])
        );
        assert_eq!(
            analytic_gradient(&hat(), &[0.0]).unwrap(),
            GradientOutcome::Boundary
        );
    }

    #[test]
    fn pattern_enumeration() {
        let hidden = [LayerBounds::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()];
        let grads = pattern_gradients(&hat(), &hidden).unwrap();
        let mut flat: Vec<f64> = grads.into_iter().flatten().collect();
        flat.sort_by(f64::total_cmp);
        assert_eq!(flat, vec![-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            pattern_enum_max_grad(&hat(), &hidden, NormOrder::L1).unwrap(),
            1.0
        );

        let fixed = [LayerBounds::new(vec![0.5, -2.0], vec![1.0, -1.0]).unwrap()];
        assert_eq!(pattern_gradients(&hat(), &fixed).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn enumeration_capacity() {
        let net = crate::model::random_network(&[1, 17, 2], 1).unwrap();
        let g = net.merge_last_layer(0, 1).unwrap();
        let hidden = [LayerBounds::new(vec![-1.0; 17], vec![1.0; 17]).unwrap()];
        assert!(matches!(
            pattern_enum_max_grad(&g, &hidden, NormOrder::L2),
            Err(Error::Capacity { found: 17, .. })
        ));
    }

    #[test]
    fn grid_on_identity() {
        let res = grid_min_distortion(
            &identity_net(),
            &[1.0, 0.0],
            0,
            1,
            NormOrder::Inf,
            2001,
            1.0,
        )
        .unwrap();
        let v = res.value().unwrap();
        assert!((0.5 - 1e-12..=0.5 + 1e-3).contains(&v), "{v}");
        let d = res.witness.unwrap();
        let g = identity_net().merge_last_layer(0, 1).unwrap();
        assert!(g.margin(&[1.0 + d[0], d[1]]).unwrap() <= 0.0);
    }

    #[test]
    fn grid_not_found_on_constant_margin() {
        let net = Network::new(vec![
            Layer::new(Matrix::zeros(2, 2), vec![1.0, 0.0]).unwrap()
        ])
        .unwrap();
        let res = grid_min_distortion(&net, &[0.0, 0.0], 0, 1, NormOrder::L2, 11, 1.0).unwrap();
        assert_eq!(res.outcome, Outcome::NotFound { searched: 1.0 });
    }

    #[test]
    fn attack_on_identity() {
        for (p, truth) in [
            (NormOrder::Inf, 0.5),
            (NormOrder::L2, std::f64::consts::FRAC_1_SQRT_2),
            (NormOrder::L1, 1.0),
        ] {
            let res = attack_upper_bound(
                &identity_net(),
                &[1.0, 0.0],
                0,
                1,
                p,
                &AttackConfig::default(),
            )
            .unwrap();
            let v = res.value().unwrap();
            assert!(v >= truth - 1e-9 && v <= truth + 1e-3, "{p}: {v}");
            let d = res.witness.unwrap();
            assert!(
                identity_net()
                    .forward(&[1.0 + d[0], d[1]])
                    .map(|f| f[0] - f[1])
                    .unwrap()
                    <= 0.0
            );
        }
    }

    #[test]
    fn attack_not_found_on_constant_margin() {
        let net = Network::new(vec![
            Layer::new(Matrix::zeros(2, 2), vec![1.0, 0.0]).unwrap()
        ])
        .unwrap();
        let res = attack_upper_bound(
            &net,
            &[0.0, 0.0],
            0,
            1,
            NormOrder::L2,
            &AttackConfig::default(),
        )
        .unwrap();
        assert!(matches!(res.outcome, Outcome::NotFound { .. }));
    }

    #[test]
    fn l1_projection() {
        let mut d = vec![3.0, -1.0, 0.5];
        project_ball(&mut d, 2.0, NormOrder::L1);
        assert!((vec_qnorm(&d, NormOrder::L1) - 2.0).abs() < 1e-12);
        assert_eq!(d, vec![2.0, 0.0, 0.0]);
    }

    fn cert(radius: f64) -> Certificate {
        Certificate {
            method: crate::certifier::Method::FastLin,
            p: NormOrder::Inf,
            true_class: 0,
            target_class: Some(1),
            input_domain: None,
            status: CertStatus::Certified,
            radius,
            iterations: 0,
            evaluations: 0,
            bracket: Bracket {
                refuted: None,
                certified: radius,
            },
            wall_time_ms: 0.0,
        }
    }

    #[test]
    fn soundness_check_examples() {
        let net = identity_net();
        assert!(soundness_check(&cert(0.49), &net, &[1.0, 0.0], 500, 1)
            .unwrap()
            .passed());
        assert!(soundness_check(&cert(0.0), &net, &[1.0, 0.0], 500, 1)
            .unwrap()
            .passed());
        let bad = soundness_check(&cert(5.0), &net, &[1.0, 0.0], 500, 1).unwrap();
        assert_eq!(bad.outcome, Outcome::Fail);
        let d = bad.witness.unwrap();
        assert!(1.0 + d[0] - d[1] <= 0.0);
    }
}
