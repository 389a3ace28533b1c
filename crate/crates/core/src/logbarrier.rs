//! The smoothed label-probability maps and the log-barrier objective.
//!
//! For a distribution `P` over hypotheses, `w_prob(P, x, y)` is the
//! probability that a hypothesis drawn from `P` labels `x` with `y`, and
//! `w_prob_gamma` mixes it with the uniform label distribution, flooring
//! it at `γ/K`. The per-sample objective is `phi = -ln(w_prob_gamma)`,
//! convex in `P`; its gradient at `(x, y)` is `coeff · 1{h(x) = y}` with
//! `coeff = -(1-γ)/w_prob_gamma(P, x, y)`, which is exactly one ledger
//! term. Only sample-based quantities live here; exact expectations over
//! an instance belong to the `reference` module.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::instance::{HypothesisClass, Label, Sample};
use crate::scalar::Real;

/// A sparsely represented distribution over hypotheses. Entries are
/// strictly positive and iterate in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSimplex<F> {
    weights: BTreeMap<usize, F>,
}

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("weight for hypothesis {index} must be strictly positive, got {weight}")]
    NonPositiveWeight { index: usize, weight: f64 },
    #[error("weights must sum to one, got {sum}")]
    NotNormalized { sum: f64 },
    #[error("a distribution needs at least one entry")]
    Empty,
}

impl<F: Real> SparseSimplex<F> {
    /// The delta distribution on hypothesis `h`.
    pub fn vertex(h: usize) -> Self {
        let mut weights = BTreeMap::new();
        weights.insert(h, F::one());
        Self { weights }
    }

    /// Build from `(hypothesis, weight)` pairs, validating positivity and
    /// normalization.
    pub fn from_weights(pairs: impl IntoIterator<Item = (usize, F)>) -> Result<Self, SimplexError> {
        let mut weights = BTreeMap::new();
        for (index, weight) in pairs {
            if !(weight > F::zero()) || !weight.is_finite() {
                return Err(SimplexError::NonPositiveWeight { index, weight: weight.as_f64() });
            }
            *weights.entry(index).or_insert_with(F::zero) += weight;
        }
        if weights.is_empty() {
            return Err(SimplexError::Empty);
        }
        let sum: F = weights.values().copied().sum();
        if (sum - F::one()).abs() > F::mass_tol() {
            return Err(SimplexError::NotNormalized { sum: sum.as_f64() });
        }
        Ok(Self { weights })
    }

    /// `P(h)`, zero off the support.
    pub fn weight(&self, h: usize) -> F {
        self.weights.get(&h).copied().unwrap_or_else(F::zero)
    }

    pub fn support_len(&self) -> usize {
        self.weights.len()
    }

    /// Entries in increasing hypothesis order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, F)> + '_ {
        self.weights.iter().map(|(&h, &w)| (h, w))
    }

    pub fn total(&self) -> F {
        self.weights.values().copied().sum()
    }

    /// `P ← (1-η)·P + η·δ_v`, pruning weights below `Real::prune_eps` and
    /// rescaling the dropped mass back in.
    pub fn blend_toward_vertex(&mut self, eta: F, vertex: usize) {
        let keep = F::one() - eta;
        for w in self.weights.values_mut() {
            *w *= keep;
        }
        *self.weights.entry(vertex).or_insert_with(F::zero) += eta;
        let tiny: Vec<usize> = self
            .weights
            .iter()
            .filter(|(_, &w)| w < F::prune_eps())
            .map(|(&h, _)| h)
            .collect();
        if !tiny.is_empty() {
            for h in tiny {
                self.weights.remove(&h);
            }
            self.renormalize();
        }
    }

    /// Rescale weights to sum exactly to one.
    pub fn renormalize(&mut self) {
        let total = self.total();
        assert!(total > F::zero(), "cannot renormalize an empty distribution");
        for w in self.weights.values_mut() {
            *w /= total;
        }
    }

    /// Inverse-CDF draw in index order; `u` must lie in `[0, 1)`.
    pub fn sample_by_cdf(&self, u: f64) -> usize {
        let target = F::from_f64(u) * self.total();
        let mut acc = F::zero();
        let mut last = 0;
        for (h, w) in self.iter() {
            acc += w;
            last = h;
            if target < acc {
                return h;
            }
        }
        last
    }

    /// Dense weight vector of length `n`.
    pub fn to_dense(&self, n: usize) -> Vec<F> {
        let mut dense = vec![F::zero(); n];
        for (h, w) in self.iter() {
            dense[h] = w;
        }
        dense
    }
}

/// The label-mixing configuration: exploration weight `γ ∈ (0, 1]` and
/// label count. `γ = 1` is the degenerate all-uniform case used by the
/// baseline; guarantees hold for `γ ≤ 1/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaConfig<F> {
    gamma: F,
    num_labels: u32,
}

#[derive(Debug, Error)]
pub enum GammaError {
    #[error("gamma must lie in (0, 1], got {0}")]
    OutOfRange(f64),
    #[error("label count must be at least 1")]
    NoLabels,
}

impl<F: Real> GammaConfig<F> {
    pub fn new(gamma: F, num_labels: u32) -> Result<Self, GammaError> {
        if !(gamma > F::zero() && gamma <= F::one()) {
            return Err(GammaError::OutOfRange(gamma.as_f64()));
        }
        if num_labels == 0 {
            return Err(GammaError::NoLabels);
        }
        Ok(Self { gamma, num_labels })
    }

    pub fn gamma(&self) -> F {
        self.gamma
    }

    pub fn num_labels(&self) -> u32 {
        self.num_labels
    }

    /// The uniform floor `γ/K`.
    pub fn floor(&self) -> F {
        self.gamma / F::from_f64(f64::from(self.num_labels))
    }

    /// `(1-γ)·w + γ/K`.
    #[inline]
    pub fn mix(&self, w: F) -> F {
        (F::one() - self.gamma) * w + self.floor()
    }
}

/// Probability that a hypothesis drawn from `P` labels `x` with `y`,
/// summed over the sparse support.
pub fn w_prob<F: Real>(p: &SparseSimplex<F>, class: &HypothesisClass, x: usize, y: Label) -> F {
    let mut total = F::zero();
    for (h, w) in p.iter() {
        if class.label(h, x) == y {
            total += w;
        }
    }
    total
}

/// The mixed label probability `(1-γ)·W_P(x,y) + γ/K`; always within
/// `[γ/K, 1-γ+γ/K]`.
pub fn w_prob_gamma<F: Real>(
    p: &SparseSimplex<F>,
    class: &HypothesisClass,
    x: usize,
    y: Label,
    cfg: &GammaConfig<F>,
) -> F {
    cfg.mix(w_prob(p, class, x, y))
}

/// Per-sample objective `-ln(w_prob_gamma)`; finite by the `γ/K` floor.
pub fn phi<F: Real>(
    p: &SparseSimplex<F>,
    class: &HypothesisClass,
    x: usize,
    y: Label,
    cfg: &GammaConfig<F>,
) -> F {
    let w = w_prob_gamma(p, class, x, y, cfg);
    assert!(w > F::zero(), "mixed label probability must be positive");
    -w.ln()
}

/// Gradient coefficient for a mixed probability already at hand.
#[inline]
pub fn grad_coeff_from_w<F: Real>(w_gamma: F, cfg: &GammaConfig<F>) -> F {
    -(F::one() - cfg.gamma()) / w_gamma
}

/// The per-sample gradient coefficient `c = -(1-γ)/w_prob_gamma`; the
/// full gradient at `(x, y)` is the ledger term `(x, y, c)`, that is,
/// `∇phi(P; x, y)(h) = c · 1{h(x) = y}`.
pub fn phi_grad_coeff<F: Real>(
    p: &SparseSimplex<F>,
    class: &HypothesisClass,
    x: usize,
    y: Label,
    cfg: &GammaConfig<F>,
) -> F {
    grad_coeff_from_w(w_prob_gamma(p, class, x, y, cfg), cfg)
}

/// Mean of `phi` over a nonempty dataset.
pub fn phi_empirical<F: Real>(
    p: &SparseSimplex<F>,
    class: &HypothesisClass,
    dataset: &[Sample],
    cfg: &GammaConfig<F>,
) -> F {
    assert!(!dataset.is_empty(), "empirical objective needs a nonempty dataset");
    let mut total = F::zero();
    for &(x, y) in dataset {
        total += phi(p, class, x, y, cfg);
    }
    total / F::from_usize(dataset.len())
}

/// `ω(z) = -ln z + z - 1` for `z > 0`.
pub fn omega<F: Real>(z: F) -> F {
    assert!(z > F::zero(), "omega requires z > 0");
    -z.ln() + z - F::one()
}

/// `min{ (1-z)²/2, (z/2)(1-1/z)² }`, a lower bound on `ω(z)`; the first
/// branch is the relevant one for `z ≤ 1`, the second for `z ≥ 1`.
pub fn omega_lower_bound<F: Real>(z: F) -> F {
    assert!(z > F::zero(), "omega_lower_bound requires z > 0");
    let half = F::from_f64(0.5);
    let a = half * (F::one() - z) * (F::one() - z);
    let r = F::one() - F::one() / z;
    let b = half * z * r * r;
    a.min(b)
}
