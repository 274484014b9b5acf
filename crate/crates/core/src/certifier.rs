//! Turns per-radius bound computations into maximal certified radii.
//!
//! Each method supplies a predicate `P(ε)` that, when true, proves no
//! perturbation of ℓp norm at most ε flips the decision. The search brackets
//! a flip of `P` by doubling/halving from `eps0` and then bisects, always
//! reporting the end of the bracket where `P` held.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastlin::FastLin;
use crate::fastlip::{appendix_e_lower_bound, lip_lower_bound, opnorm_bound};
use crate::linalg::NormOrder;
use crate::model::{argmax, MarginNetwork, Network};
use crate::region::Perturbation;
use crate::report::float_or_inf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FastLin,
    FastLip,
    OpNorm,
    AppendixE,
}

impl Method {
    /// The methods run by `--method all`.
    pub const ALL: [Method; 3] = [Method::FastLin, Method::FastLip, Method::OpNorm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FastLin => "fast-lin",
            Method::FastLip => "fast-lip",
            Method::OpNorm => "op-norm",
            Method::AppendixE => "appendix-e",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast-lin" => Ok(Method::FastLin),
            "fast-lip" => Ok(Method::FastLip),
            "op-norm" => Ok(Method::OpNorm),
            "appendix-e" => Ok(Method::AppendixE),
            other => Err(Error::param(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Starting radius of the bracket phase.
    pub eps0: f64,
    /// Cap on bisection steps after a bracket is found.
    pub max_iter: usize,
    /// Bracket expansion/contraction factor.
    pub growth: f64,
    /// Radii below this are reported as 0.
    pub floor: f64,
    /// Bisection also stops once `(hi − lo) ≤ rel_tol · hi`.
    pub rel_tol: f64,
    /// Cap on doublings while `P` keeps holding.
    pub max_expansions: usize,
    /// Optional per-coordinate input box (ℓ∞ only).
    pub input_domain: Option<(f64, f64)>,
    /// Worker threads for per-target parallelism; 1 runs sequentially.
    pub threads: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            eps0: 0.05,
            max_iter: 15,
            growth: 2.0,
            floor: 1e-8,
            rel_tol: 1e-5,
            max_expansions: 64,
            input_domain: None,
            threads: 1,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        if !self.eps0.is_finite() || self.eps0 <= 0.0 {
            return Err(Error::param(format!(
                "eps0 must be positive, got {}",
                self.eps0
            )));
        }
        if self.growth.is_nan() || self.growth <= 1.0 {
            return Err(Error::param(format!(
                "growth factor must exceed 1, got {}",
                self.growth
            )));
        }
        if self.rel_tol.is_nan() || self.rel_tol < 0.0 {
            return Err(Error::param(format!(
                "tolerance must be ≥ 0, got {}",
                self.rel_tol
            )));
        }
        if self.threads == 0 {
            return Err(Error::param("thread count must be at least 1"));
        }
        Ok(())
    }

    fn region(&self, x0: &[f64], eps: f64, p: NormOrder) -> Result<Perturbation> {
        let r = Perturbation::new(x0.to_vec(), eps, p)?;
        match self.input_domain {
            Some((lo, hi)) => r.with_domain(lo, hi),
            None => Ok(r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertStatus {
    Certified,
    /// `x0` is not classified as the claimed class; radius 0.
    Misclassified,
    /// The margin cannot decrease anywhere; radius is `+∞`.
    Unbounded,
}

/// Final bracket of the search: `P(certified)` held, `P(refuted)` failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refuted: Option<f64>,
    #[serde(with = "float_or_inf")]
    pub certified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub method: Method,
    pub p: NormOrder,
    pub true_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    pub status: CertStatus,
    #[serde(with = "float_or_inf")]
    pub radius: f64,
    /// Bisection steps taken after bracketing.
    pub iterations: usize,
    /// Total predicate evaluations, bracket phase included.
    pub evaluations: usize,
    pub bracket: Bracket,
    /// Per-coordinate input box the radius was certified under, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_domain: Option<(f64, f64)>,
    pub wall_time_ms: f64,
}

impl Certificate {
    /// `radius ≥ 0` and equal to the certified end of the bracket.
    pub fn is_consistent(&self) -> bool {
        self.radius >= 0.0
            && self.radius == self.bracket.certified
            && self.bracket.refuted.is_none_or(|r| r > self.radius)
    }

    fn misclassified(
        method: Method,
        p: NormOrder,
        c: usize,
        j: Option<usize>,
        input_domain: Option<(f64, f64)>,
    ) -> Self {
        Certificate {
            method,
            p,
            true_class: c,
            target_class: j,
            status: CertStatus::Misclassified,
            radius: 0.0,
            iterations: 0,
            evaluations: 0,
            bracket: Bracket {
                refuted: None,
                certified: 0.0,
            },
            input_domain,
            wall_time_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOutcome {
    pub certified: f64,
    pub refuted: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Largest radius on which `pred` holds, assuming `pred` is monotone
/// (true below some threshold, false above it).
pub fn bisect_radius(
    cfg: &SearchConfig,
    mut pred: impl FnMut(f64) -> Result<bool>,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut evaluations = 0;
    let mut eval = |eps: f64| {
        evaluations += 1;
        pred(eps)
    };
    let mut lo;
    let mut hi = None;
    let mut eps = cfg.eps0;
    if eval(eps)? {
        lo = eps;
        for _ in 0..cfg.max_expansions {
            eps *= cfg.growth;
            if !eps.is_finite() {
                break;
            }
            if eval(eps)? {
                lo = eps;
            } else {
                hi = Some(eps);
                break;
            }
        }
    } else {
        hi = Some(eps);
        lo = 0.0;
        loop {
            eps /= cfg.growth;
            if eps < cfg.floor {
                break;
            }
            if eval(eps)? {
                lo = eps;
                break;
            }
            hi = Some(eps);
        }
    }
    let mut iterations = 0;
    if let Some(mut h) = hi {
        if lo > 0.0 {
            while iterations < cfg.max_iter && h - lo > cfg.rel_tol * h {
                let mid = 0.5 * (lo + h);
                if mid <= lo || mid >= h {
                    break;
                }
                iterations += 1;
                if eval(mid)? {
                    lo = mid;
                } else {
                    h = mid;
                }
            }
        }
        hi = Some(h);
    }
    Ok(SearchOutcome {
        certified: lo,
        refuted: hi,
        iterations,
        evaluations,
    })
}

/// Fast-Lin predicate: the lower bound of the margin is strictly positive.
pub fn fastlin_certifies(net: &MarginNetwork, region: &Perturbation) -> Result<bool> {
    let mut engine = FastLin::new(net, region)?;
    for _ in 0..net.depth() {
        engine.advance()?;
    }
    Ok(engine.bounds()[net.depth() - 1].lower[0] > 0.0)
}

fn method_predicate(method: Method, g: &MarginNetwork, region: &Perturbation) -> Result<bool> {
    match method {
        Method::FastLin => fastlin_certifies(g, region),
        Method::FastLip => Ok(lip_lower_bound(g, region)?.certifies(region.eps())),
        Method::AppendixE => Ok(appendix_e_lower_bound(g, region)?.certifies(region.eps())),
        Method::OpNorm => unreachable!("op-norm has a closed form"),
    }
}

/// Certified radius against the targeted attack `c → j`.
pub fn certify_target(
    net: &Network,
    x0: &[f64],
    c: usize,
    j: usize,
    p: NormOrder,
    method: Method,
    cfg: &SearchConfig,
) -> Result<Certificate> {
    cfg.validate()?;
    let g = net.merge_last_layer(c, j)?;
    if net.predict(x0)? != c {
        return Ok(Certificate::misclassified(
            method,
            p,
            c,
            Some(j),
            cfg.input_domain,
        ));
    }
    if method == Method::AppendixE && net.depth() != 2 {
        return Err(Error::param(format!(
            "appendix-e needs exactly one hidden layer, network has {} layers",
            net.depth()
        )));
    }
    let start = Instant::now();
    let mut cert = if method == Method::OpNorm {
        let radius = opnorm_bound(net, x0, c, j, p)?;
        Certificate {
            method,
            p,
            true_class: c,
            target_class: Some(j),
            status: if radius.is_infinite() {
                CertStatus::Unbounded
            } else {
                CertStatus::Certified
            },
            radius,
            iterations: 0,
            evaluations: 1,
            bracket: Bracket {
                refuted: None,
                certified: radius,
            },
            input_domain: cfg.input_domain,
            wall_time_ms: 0.0,
        }
    } else {
        let out = bisect_radius(cfg, |eps| {
            let region = cfg.region(x0, eps, p)?;
            method_predicate(method, &g, &region)
        })?;
        Certificate {
            method,
            p,
            true_class: c,
            target_class: Some(j),
            status: CertStatus::Certified,
            radius: out.certified,
            iterations: out.iterations,
            evaluations: out.evaluations,
            bracket: Bracket {
                refuted: out.refuted,
                certified: out.certified,
            },
            input_domain: cfg.input_domain,
            wall_time_ms: 0.0,
        }
    };
    cert.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(cert)
}

/// Untargeted certificate with the per-target certificates it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UntargetedCertificate {
    pub certificate: Certificate,
    pub per_target: Vec<Certificate>,
}

/// `min_{j≠c}` of the targeted radii.
pub fn certify_untargeted(
    net: &Network,
    x0: &[f64],
    c: usize,
    p: NormOrder,
    method: Method,
    cfg: &SearchConfig,
) -> Result<UntargetedCertificate> {
    cfg.validate()?;
    let n_out = net.output_dim();
    if n_out < 2 {
        return Err(Error::param(
            "untargeted certification needs at least two classes",
        ));
    }
    if c >= n_out {
        return Err(Error::param(format!(
            "class {c} out of range for {n_out} outputs"
        )));
    }
    let start = Instant::now();
    let targets: Vec<usize> = (0..n_out).filter(|&j| j != c).collect();
    let run = |&j: &usize| certify_target(net, x0, c, j, p, method, cfg);
    let per_target: Vec<Certificate> = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::param(format!("cannot start thread pool: {e}")))?;
        pool.install(|| targets.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        targets.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    let worst = per_target
        .iter()
        .min_by(|a, b| a.radius.total_cmp(&b.radius))
        .expect("at least one target");
    let certificate = Certificate {
        method,
        p,
        true_class: c,
        target_class: None,
        status: worst.status,
        radius: worst.radius,
        iterations: per_target.iter().map(|c| c.iterations).sum(),
        evaluations: per_target.iter().map(|c| c.evaluations).sum(),
        bracket: worst.bracket,
        input_domain: cfg.input_domain,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(UntargetedCertificate {
        certificate,
        per_target,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    RunnerUp,
    Random(u64),
    LeastLikely,
    Index(usize),
}

/// Picks the attack target among the classes other than `c`.
pub fn select_target(logits: &[f64], c: usize, mode: TargetMode) -> Result<usize> {
    if logits.len() < 2 {
        return Err(Error::param("need at least two classes to pick a target"));
    }
    if c >= logits.len() {
        return Err(Error::param(format!("class {c} out of range")));
    }
    let others = || (0..logits.len()).filter(move |&j| j != c);
    Ok(match mode {
        TargetMode::RunnerUp => others()
            .reduce(|best, j| if logits[j] > logits[best] { j } else { best })
            .expect("≥ 2 classes"),
        TargetMode::LeastLikely => others()
            .reduce(|best, j| if logits[j] < logits[best] { j } else { best })
            .expect("≥ 2 classes"),
        TargetMode::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(0..logits.len() - 1);
            others().nth(k).expect("k < number of other classes")
        }
        TargetMode::Index(j) => {
            if j == c || j >= logits.len() {
                return Err(Error::param(format!(
                    "target {j} must differ from class {c} and be < {}",
                    logits.len()
                )));
            }
            j
        }
    })
}

/// Predicted class of `x0` (convenience for drivers).
pub fn predicted_class(net: &Network, x0: &[f64]) -> Result<usize> {
    Ok(argmax(&net.forward(x0)?))
}
