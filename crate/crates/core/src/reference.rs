//! Exact, enumeration-based counterparts of everything the fast path
//! estimates from samples: exact objective values and gradients over the
//! finite support, a certified high-accuracy minimizer, and exact
//! estimator moments. Test and verification machinery only — nothing
//! here samples, and guards keep enumeration sizes honest.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instance::{HypothesisClass, Instance, Label, Sample};
use crate::logbarrier::{GammaConfig, SimplexError, SparseSimplex};
use crate::scalar::Real;

/// Enumeration guard for hypothesis and support counts.
pub const MAX_ENUMERATION: usize = 10_000;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("enumeration guard exceeded: {what} = {got} > {max}")]
    GuardExceeded { what: &'static str, got: usize, max: usize },
    #[error("iteration cap {0} exceeded before reaching the gap tolerance")]
    IterationCap(usize),
    #[error("support is not exactly tileable with denominator up to {0}")]
    NotTileable(usize),
}

/// A dense distribution over all `N` hypotheses: nonnegative entries
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSimplex<F>(Vec<F>);

impl<F: Real> DenseSimplex<F> {
    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1);
        Self(vec![F::one() / F::from_usize(n); n])
    }

    pub fn vertex(n: usize, h: usize) -> Self {
        assert!(h < n);
        let mut weights = vec![F::zero(); n];
        weights[h] = F::one();
        Self(weights)
    }

    pub fn from_weights(weights: Vec<F>) -> Result<Self, SimplexError> {
        if weights.is_empty() {
            return Err(SimplexError::Empty);
        }
        for (index, &w) in weights.iter().enumerate() {
            if w < F::zero() || !w.is_finite() {
                return Err(SimplexError::NonPositiveWeight { index, weight: w.as_f64() });
            }
        }
        let sum: F = weights.iter().copied().sum();
        if (sum - F::one()).abs() > F::strict_tol() {
            return Err(SimplexError::NotNormalized { sum: sum.as_f64() });
        }
        Ok(Self(weights))
    }

    pub fn from_sparse(sparse: &SparseSimplex<F>, n: usize) -> Self {
        Self(sparse.to_dense(n))
    }

    pub fn weights(&self) -> &[F] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_sparse(&self) -> SparseSimplex<F> {
        SparseSimplex::from_weights(
            self.0.iter().enumerate().filter(|(_, &w)| w > F::zero()).map(|(h, &w)| (h, w)),
        )
        .expect("dense simplex converts to sparse")
    }
}

fn guard<F: Real>(instance: &Instance<F>) -> Result<(), ReferenceError> {
    let n = instance.class.num_hypotheses();
    if n > MAX_ENUMERATION {
        return Err(ReferenceError::GuardExceeded {
            what: "hypothesis count",
            got: n,
            max: MAX_ENUMERATION,
        });
    }
    let s = instance.support.len();
    if s > MAX_ENUMERATION {
        return Err(ReferenceError::GuardExceeded {
            what: "support size",
            got: s,
            max: MAX_ENUMERATION,
        });
    }
    Ok(())
}

/// Dense dot product `J_{x,y} · P`, the independent cross-check for the
/// sparse `w_prob`.
pub fn dense_w_prob<F: Real>(class: &HypothesisClass, weights: &[F], x: usize, y: Label) -> F {
    let mut total = F::zero();
    for (h, &w) in weights.iter().enumerate() {
        if class.label(h, x) == y {
            total += w;
        }
    }
    total
}

/// Dense per-sample gradient of the log-barrier objective at `weights`.
pub fn dense_sample_grad<F: Real>(
    class: &HypothesisClass,
    weights: &[F],
    x: usize,
    y: Label,
    cfg: &GammaConfig<F>,
) -> Vec<F> {
    let mixed = cfg.mix(dense_w_prob(class, weights, x, y));
    let coeff = -(F::one() - cfg.gamma()) / mixed;
    (0..weights.len())
        .map(|h| if class.label(h, x) == y { coeff } else { F::zero() })
        .collect()
}

/// Exact expectation of the log-barrier objective over the instance
/// support. `weights` need not be exactly normalized: the formula
/// extends smoothly near the simplex, which the finite-difference checks
/// rely on.
pub fn exact_phi<F: Real>(
    instance: &Instance<F>,
    weights: &[F],
    cfg: &GammaConfig<F>,
) -> Result<F, ReferenceError> {
    guard(instance)?;
    assert_eq!(weights.len(), instance.class.num_hypotheses());
    let mut total = F::zero();
    for point in &instance.support {
        let mixed = cfg.mix(dense_w_prob(&instance.class, weights, point.example, point.label));
        total += -point.probability * mixed.ln();
    }
    Ok(total)
}

/// Exact gradient of the expected objective: coordinate `h` accumulates
/// `-(1-γ)·p(x,y)/w_prob_gamma(x,y)` over the support points `h` labels
/// correctly.
pub fn exact_grad<F: Real>(
    instance: &Instance<F>,
    weights: &[F],
    cfg: &GammaConfig<F>,
) -> Result<Vec<F>, ReferenceError> {
    guard(instance)?;
    let n = instance.class.num_hypotheses();
    assert_eq!(weights.len(), n);
    let coeffs: Vec<F> = instance
        .support
        .iter()
        .map(|pt| {
            let mixed = cfg.mix(dense_w_prob(&instance.class, weights, pt.example, pt.label));
            -(F::one() - cfg.gamma()) * pt.probability / mixed
        })
        .collect();
    let mut grad = vec![F::zero(); n];
    for h in 0..n {
        let mut g = F::zero();
        for (j, pt) in instance.support.iter().enumerate() {
            if instance.class.label(h, pt.example) == pt.label {
                g += coeffs[j];
            }
        }
        grad[h] = g;
    }
    Ok(grad)
}

/// Output of the certified minimizer: the iterate, its objective, and
/// the final Frank-Wolfe duality gap, which upper-bounds the iterate's
/// suboptimality by convexity.
#[derive(Debug, Clone)]
pub struct MinimizeOutcome<F> {
    pub distribution: DenseSimplex<F>,
    pub objective: F,
    pub gap: F,
    pub iterations: usize,
}

const MINIMIZE_ITERATION_CAP: usize = 10_000_000;

/// Deterministic Frank-Wolfe with exact gradients, exact line search and
/// pairwise steps (mass moves from the worst active vertex onto the best
/// vertex), run until the duality gap `max_Q (P-Q)·∇Φ(P)` drops to
/// `tol`. Pairwise steps avoid the zig-zag stall of plain conditional
/// gradient near faces; the gap certificate is unchanged.
pub fn exact_minimize_phi<F: Real>(
    instance: &Instance<F>,
    cfg: &GammaConfig<F>,
    tol: F,
) -> Result<MinimizeOutcome<F>, ReferenceError> {
    guard(instance)?;
    assert!(tol > F::zero(), "gap tolerance must be positive");
    let n = instance.class.num_hypotheses();
    let support = &instance.support;
    let class = &instance.class;

    let indicator_column = |h: usize| -> Vec<F> {
        support
            .iter()
            .map(|pt| if class.label(h, pt.example) == pt.label { F::one() } else { F::zero() })
            .collect()
    };

    let mut p = vec![F::one() / F::from_usize(n); n];
    let mut w: Vec<F> = support
        .iter()
        .map(|pt| dense_w_prob(class, &p, pt.example, pt.label))
        .collect();
    let mut renormalized = false;

    for iteration in 0..MINIMIZE_ITERATION_CAP {
        // Refresh the cached label probabilities now and then to cancel
        // incremental-update drift.
        if iteration > 0 && iteration % 1024 == 0 {
            for (j, pt) in support.iter().enumerate() {
                w[j] = dense_w_prob(class, &p, pt.example, pt.label);
            }
        }
        let coeffs: Vec<F> = support
            .iter()
            .zip(&w)
            .map(|(pt, &wj)| -(F::one() - cfg.gamma()) * pt.probability / cfg.mix(wj))
            .collect();
        let mut grad = vec![F::zero(); n];
        for (h, g) in grad.iter_mut().enumerate() {
            for (j, pt) in support.iter().enumerate() {
                if class.label(h, pt.example) == pt.label {
                    *g += coeffs[j];
                }
            }
        }
        let p_dot_grad: F = p.iter().zip(&grad).map(|(&a, &b)| a * b).sum();
        let (mut toward, mut min_grad) = (0, grad[0]);
        let mut away = usize::MAX;
        let mut max_grad = F::neg_infinity();
        for (h, &g) in grad.iter().enumerate() {
            if g < min_grad {
                toward = h;
                min_grad = g;
            }
            if p[h] > F::zero() && g > max_grad {
                away = h;
                max_grad = g;
            }
        }
        let gap = p_dot_grad - min_grad;
        if gap <= tol {
            if !renormalized {
                // Cancel accumulated mass drift, then re-certify.
                renormalized = true;
                let total: F = p.iter().copied().sum();
                for weight in p.iter_mut() {
                    *weight /= total;
                }
                for (j, pt) in support.iter().enumerate() {
                    w[j] = dense_w_prob(class, &p, pt.example, pt.label);
                }
                continue;
            }
            let objective = objective_from_w(support, &w, cfg);
            return Ok(MinimizeOutcome {
                distribution: DenseSimplex(p),
                objective,
                gap,
                iterations: iteration,
            });
        }

        let col_toward = indicator_column(toward);
        let col_away = indicator_column(away);
        let direction: Vec<F> =
            col_toward.iter().zip(&col_away).map(|(&a, &b)| a - b).collect();
        let eta_max = p[away];
        let eta = pairwise_line_search(support, &w, &direction, cfg, eta_max);
        if eta >= eta_max - F::prune_eps() {
            // Drop step: the away vertex leaves the active set.
            p[toward] += eta_max;
            p[away] = F::zero();
            for (wj, &dj) in w.iter_mut().zip(&direction) {
                *wj += eta_max * dj;
            }
        } else {
            p[toward] += eta;
            p[away] -= eta;
            for (wj, &dj) in w.iter_mut().zip(&direction) {
                *wj += eta * dj;
            }
        }
    }
    Err(ReferenceError::IterationCap(MINIMIZE_ITERATION_CAP))
}

fn objective_from_w<F: Real>(
    support: &[crate::instance::SupportPoint<F>],
    w: &[F],
    cfg: &GammaConfig<F>,
) -> F {
    support.iter().zip(w).map(|(pt, &wj)| -pt.probability * cfg.mix(wj).ln()).sum()
}

/// Exact minimizer of `η ↦ Φ(P + η·(e_toward - e_away))` over
/// `[0, eta_max]`, via safeguarded Newton on the monotone derivative.
fn pairwise_line_search<F: Real>(
    support: &[crate::instance::SupportPoint<F>],
    w: &[F],
    direction: &[F],
    cfg: &GammaConfig<F>,
    eta_max: F,
) -> F {
    let scale = F::one() - cfg.gamma();
    let derivative = |eta: F| -> (F, F) {
        let mut d1 = F::zero();
        let mut d2 = F::zero();
        for ((pt, &wj), &dj) in support.iter().zip(w).zip(direction) {
            let mixed = cfg.mix(wj + eta * dj);
            let delta = scale * dj;
            d1 += -pt.probability * delta / mixed;
            d2 += pt.probability * delta * delta / (mixed * mixed);
        }
        (d1, d2)
    };

    if derivative(eta_max).0 <= F::zero() {
        return eta_max;
    }
    let mut lo = F::zero();
    let mut hi = eta_max;
    let mut eta = eta_max * F::from_f64(0.5);
    for _ in 0..80 {
        let (d1, d2) = derivative(eta);
        if d1 > F::zero() {
            hi = eta;
        } else {
            lo = eta;
        }
        if d1.abs() < F::from_f64(1e-18) || hi - lo < F::from_f64(1e-17) {
            break;
        }
        let newton = eta - d1 / d2;
        eta = if newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) * F::from_f64(0.5)
        };
    }
    eta
}

/// Exact mean and second moment of the importance-weighted reward
/// estimate for hypothesis `h` under exploration distribution `p_hat`:
/// enumerate every `(x, y)` support atom against every possible
/// prediction. The mean equals `Pr[h(x) = y]`.
pub fn exact_estimator_moments<F: Real>(
    instance: &Instance<F>,
    p_hat: &SparseSimplex<F>,
    cfg: &GammaConfig<F>,
    h: usize,
) -> Result<(F, F), ReferenceError> {
    guard(instance)?;
    let class = &instance.class;
    let mut mean = F::zero();
    let mut second = F::zero();
    for pt in &instance.support {
        for predicted in 0..instance.num_labels {
            let predicted = Label(predicted);
            let pr_prediction = cfg.mix(crate::logbarrier::w_prob(p_hat, class, pt.example, predicted));
            let weight = if predicted == pt.label {
                F::one() / cfg.mix(crate::logbarrier::w_prob(p_hat, class, pt.example, pt.label))
            } else {
                F::zero()
            };
            let estimate = if class.label(h, pt.example) == predicted { weight } else { F::zero() };
            mean += pt.probability * pr_prediction * estimate;
            second += pt.probability * pr_prediction * estimate * estimate;
        }
    }
    Ok((mean, second))
}

/// `max_h E[J_{x,y}(h) / w_prob_gamma(p_hat, x, y)]` with its argmax:
/// the worst-case estimator second moment over the class.
pub fn exact_max_second_moment<F: Real>(
    instance: &Instance<F>,
    p_hat: &SparseSimplex<F>,
    cfg: &GammaConfig<F>,
) -> Result<(usize, F), ReferenceError> {
    guard(instance)?;
    let class = &instance.class;
    let inv_mixed: Vec<F> = instance
        .support
        .iter()
        .map(|pt| {
            pt.probability / cfg.mix(crate::logbarrier::w_prob(p_hat, class, pt.example, pt.label))
        })
        .collect();
    let mut worst = (0, F::neg_infinity());
    for h in 0..class.num_hypotheses() {
        let mut total = F::zero();
        for (j, pt) in instance.support.iter().enumerate() {
            if class.label(h, pt.example) == pt.label {
                total += inv_mixed[j];
            }
        }
        if total > worst.1 {
            worst = (h, total);
        }
    }
    Ok(worst)
}

/// Exact `E[w_prob_gamma(P, x, y) / w_prob_gamma(Q, x, y)]`.
pub fn exact_ratio_expectation<F: Real>(
    instance: &Instance<F>,
    numerator: &[F],
    denominator: &[F],
    cfg: &GammaConfig<F>,
) -> Result<F, ReferenceError> {
    guard(instance)?;
    let class = &instance.class;
    let mut total = F::zero();
    for pt in &instance.support {
        let top = cfg.mix(dense_w_prob(class, numerator, pt.example, pt.label));
        let bottom = cfg.mix(dense_w_prob(class, denominator, pt.example, pt.label));
        total += pt.probability * top / bottom;
    }
    Ok(total)
}

/// `L(h) - min_h' L(h')`, exact.
pub fn excess_loss<F: Real>(instance: &Instance<F>, h: usize) -> F {
    instance.hypothesis_loss(h) - instance.best_hypothesis().1
}

/// A random interior point of the dense simplex (normalized exponential
/// weights).
pub fn random_dense_simplex<F: Real>(n: usize, rng: &mut ChaCha8Rng) -> DenseSimplex<F> {
    let raw: Vec<f64> = (0..n).map(|_| (-(1.0 - rng.gen::<f64>()).ln()).max(1e-12)).collect();
    let total: f64 = raw.iter().sum();
    DenseSimplex(raw.into_iter().map(|w| F::from_f64(w / total)).collect())
}

/// A dataset whose empirical distribution equals the instance support
/// exactly: find a denominator `q` with every `p_i·q` integral, emit that
/// multiset, and tile it to at least `min_len` entries.
pub fn exact_support_dataset<F: Real>(
    instance: &Instance<F>,
    min_len: usize,
) -> Result<Vec<Sample>, ReferenceError> {
    const MAX_DENOMINATOR: usize = 1_000_000;
    let probs: Vec<f64> = instance.support.iter().map(|pt| pt.probability.as_f64()).collect();
    let mut denominator = None;
    for q in 1..=MAX_DENOMINATOR {
        let fits = probs.iter().all(|&p| {
            let scaled = p * q as f64;
            scaled >= 0.5 && (scaled - scaled.round()).abs() < 1e-6
        });
        if fits {
            denominator = Some(q);
            break;
        }
    }
    let q = denominator.ok_or(ReferenceError::NotTileable(MAX_DENOMINATOR))?;
    let mut multiset = Vec::with_capacity(q);
    for (pt, &p) in instance.support.iter().zip(&probs) {
        let count = (p * q as f64).round() as usize;
        for _ in 0..count {
            multiset.push((pt.example, pt.label));
        }
    }
    assert_eq!(multiset.len(), q, "rounded multiplicities must tile exactly");
    let copies = min_len.div_ceil(q).max(1);
    let mut dataset = Vec::with_capacity(copies * q);
    for _ in 0..copies {
        dataset.extend_from_slice(&multiset);
    }
    Ok(dataset)
}
