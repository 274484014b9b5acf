//! The perturbation set `B_p(x0, ε)`, optionally intersected with an input
//! box `[lo, hi]^n` (ℓ∞ only, where the intersection is again a box).

use crate::error::{Error, Result};
use crate::linalg::{dot, vec_qnorm, NormOrder};

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    x0: Vec<f64>,
    eps: f64,
    p: NormOrder,
    domain: Option<(f64, f64)>,
}

impl Perturbation {
    pub fn new(x0: Vec<f64>, eps: f64, p: NormOrder) -> Result<Self> {
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::param(format!(
                "radius must be finite and ≥ 0, got {eps}"
            )));
        }
        if x0.iter().any(|x| !x.is_finite()) {
            return Err(Error::param("anchor input has non-finite entries"));
        }
        Ok(Perturbation {
            x0,
            eps,
            p,
            domain: None,
        })
    }

    /// Clips the ball to `[lo, hi]` per coordinate. Only meaningful for ℓ∞.
    pub fn with_domain(mut self, lo: f64, hi: f64) -> Result<Self> {
        if self.p != NormOrder::Inf {
            return Err(Error::param(
                "input-domain clipping is only supported for p = inf",
            ));
        }
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::param(format!("empty input domain [{lo}, {hi}]")));
        }
        if self.x0.iter().any(|&x| x < lo || x > hi) {
            return Err(Error::param("anchor input lies outside the input domain"));
        }
        self.domain = Some((lo, hi));
        Ok(self)
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn p(&self) -> NormOrder {
        self.p
    }

    pub fn q(&self) -> NormOrder {
        self.p.dual()
    }

    pub fn domain(&self) -> Option<(f64, f64)> {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Same anchor, norm and domain with a different radius.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        let mut out = Perturbation::new(self.x0.clone(), eps, self.p)?;
        out.domain = self.domain;
        Ok(out)
    }

    /// Per-coordinate interval of the clipped box.
    fn coord_interval(&self, i: usize, (lo, hi): (f64, f64)) -> (f64, f64) {
        let x = self.x0[i];
        ((x - self.eps).max(lo), (x + self.eps).min(hi))
    }

    /// `(min, max)` of `⟨a, x⟩` over the region.
    pub fn linear_range(&self, a: &[f64]) -> (f64, f64) {
        debug_assert_eq!(a.len(), self.x0.len());
        match self.domain {
            None => {
                let c = dot(a, &self.x0);
                let r = self.eps * vec_qnorm(a, self.q());
                (c - r, c + r)
            }
            Some(dom) => {
                let (mut lo, mut hi) = (0.0, 0.0);
                for (i, &ai) in a.iter().enumerate() {
                    let (l, u) = self.coord_interval(i, dom);
                    if ai >= 0.0 {
                        lo += ai * l;
                        hi += ai * u;
                    } else {
                        lo += ai * u;
                        hi += ai * l;
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Membership test with absolute slack `tol` on the norm constraint.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.x0.len() {
            return false;
        }
        let delta: Vec<f64> = x.iter().zip(&self.x0).map(|(a, b)| a - b).collect();
        if vec_qnorm(&delta, self.p) > self.eps + tol {
            return false;
        }
        match self.domain {
            None => true,
            Some((lo, hi)) => x.iter().all(|&v| v >= lo - tol && v <= hi + tol),
        }
    }

    /// Clamps a point into the input domain (no-op without one).
    pub fn clip(&self, x: &mut [f64]) {
        if let Some((lo, hi)) = self.domain {
            for v in x {
                *v = v.clamp(lo, hi);
            }
        }
    }
}
