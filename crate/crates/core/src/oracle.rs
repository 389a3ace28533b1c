//! Weighted empirical risk minimization over an explicit class, and the
//! linear-optimization reduction used by the Frank-Wolfe loop.
//!
//! Gradient estimates never materialize as N-vectors. They travel as a
//! ledger of weighted `(example, label)` terms representing
//! `g(h) = Σ c_j · 1{h(x_j) = y_j}`, and the minimizer of `g` over the
//! simplex is a vertex recovered with a single weighted-ERM call, using
//! `Σ c·1{h(x)=y} = Σ c − Σ c·1{h(x)≠y}`.

use std::collections::BTreeMap;

use crate::instance::{HypothesisClass, Label};
use crate::scalar::Real;

/// One weighted example handed to the ERM oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedExample<F> {
    pub example: usize,
    pub label: Label,
    pub weight: F,
}

/// A linear function of the hypothesis, stored implicitly as weighted
/// `(example, label)` terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientLedger<F> {
    terms: Vec<LedgerTerm<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerTerm<F> {
    pub example: usize,
    pub label: Label,
    pub coefficient: F,
}

impl<F: Real> GradientLedger<F> {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn push(&mut self, example: usize, label: Label, coefficient: F) {
        self.terms.push(LedgerTerm { example, label, coefficient });
    }

    pub fn clear(&mut self) {
        self.terms.clear();
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[LedgerTerm<F>] {
        &self.terms
    }

    /// Merge terms sharing an `(example, label)` key. The represented
    /// function is unchanged up to floating-point reassociation, and the
    /// merged order is deterministic (sorted by key).
    pub fn compact(&mut self) {
        let mut merged: BTreeMap<(usize, u32), F> = BTreeMap::new();
        for term in &self.terms {
            *merged.entry((term.example, term.label.0)).or_insert_with(F::zero) +=
                term.coefficient;
        }
        self.terms = merged
            .into_iter()
            .map(|((example, label), coefficient)| LedgerTerm {
                example,
                label: Label(label),
                coefficient,
            })
            .collect();
    }

    /// `g(h) = Σ c_j · 1{h(x_j) = y_j}`.
    pub fn evaluate(&self, class: &HypothesisClass, h: usize) -> F {
        let mut total = F::zero();
        for term in &self.terms {
            if class.label(h, term.example) == term.label {
                total += term.coefficient;
            }
        }
        total
    }
}

/// The weighted-ERM oracle interface. Implementations must break ties to
/// the lowest hypothesis index and return 0 on an empty example list.
pub trait ErmOracle {
    /// `argmin_h Σ_s α_s · 1{h(x_s) ≠ y_s}`.
    fn weighted_erm<F: Real>(&mut self, examples: &[WeightedExample<F>]) -> usize;

    /// Number of oracle invocations so far.
    fn calls(&self) -> u64;
}

/// The oracle realized by exhaustive enumeration over an explicit table.
pub struct TableErm<'a> {
    class: &'a HypothesisClass,
    calls: u64,
}

impl<'a> TableErm<'a> {
    pub fn new(class: &'a HypothesisClass) -> Self {
        Self { class, calls: 0 }
    }

    pub fn class(&self) -> &HypothesisClass {
        self.class
    }
}

impl ErmOracle for TableErm<'_> {
    fn weighted_erm<F: Real>(&mut self, examples: &[WeightedExample<F>]) -> usize {
        self.calls += 1;
        scan_weighted_erm(self.class, examples)
    }

    fn calls(&self) -> u64 {
        self.calls
    }
}

/// Exhaustive weighted-ERM scan over all hypotheses. Ties break to the
/// lowest index; the empty list returns 0.
pub fn scan_weighted_erm<F: Real>(
    class: &HypothesisClass,
    examples: &[WeightedExample<F>],
) -> usize {
    for ex in examples {
        assert!(ex.example < class.num_examples(), "example index {} out of range", ex.example);
        assert!(ex.weight.is_finite(), "weights must be finite");
    }
    let mut best_h = 0;
    let mut best_loss = F::infinity();
    for h in 0..class.num_hypotheses() {
        let mut loss = F::zero();
        for ex in examples {
            if class.label(h, ex.example) != ex.label {
                loss += ex.weight;
            }
        }
        if loss < best_loss {
            best_loss = loss;
            best_h = h;
        }
    }
    best_h
}

/// `argmin_h g(h)` for a ledger function, via one weighted-ERM call with
/// negated coefficients.
pub fn loo_from_ledger<F: Real, O: ErmOracle>(oracle: &mut O, ledger: &GradientLedger<F>) -> usize {
    let examples: Vec<WeightedExample<F>> = ledger
        .terms()
        .iter()
        .map(|t| WeightedExample { example: t.example, label: t.label, weight: -t.coefficient })
        .collect();
    oracle.weighted_erm(&examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::make_random_instance;
    use crate::rng::{stream_rng, RngStream};
    use rand::Rng;

    fn three_row_class() -> HypothesisClass {
        HypothesisClass::from_rows(vec![
            vec![Label(1), Label(1)],
            vec![Label(1), Label(2)],
            vec![Label(2), Label(2)],
        ])
        .unwrap()
    }

    #[test]
    fn weighted_erm_picks_the_minimum_loss_row() {
        let class = three_row_class();
        let mut oracle = TableErm::new(&class);
        let examples = [
            WeightedExample { example: 0, label: Label(1), weight: 1.0_f64 },
            WeightedExample { example: 1, label: Label(2), weight: 2.0 },
        ];
        // Losses are (2, 0, 1).
        assert_eq!(oracle.weighted_erm(&examples), 1);
        assert_eq!(oracle.calls(), 1);
    }

    #[test]
    fn single_example_returns_lowest_agreeing_row() {
        let class = three_row_class();
        let mut oracle = TableErm::new(&class);
        let ex = [WeightedExample { example: 1, label: Label(2), weight: 1.0_f64 }];
        assert_eq!(oracle.weighted_erm(&ex), 1);
    }

    #[test]
    fn all_zero_weights_tie_break_to_zero() {
        let class = three_row_class();
        let mut oracle = TableErm::new(&class);
        let ex = [
            WeightedExample { example: 0, label: Label(2), weight: 0.0_f64 },
            WeightedExample { example: 1, label: Label(1), weight: 0.0 },
        ];
        assert_eq!(oracle.weighted_erm(&ex), 0);
        assert_eq!(oracle.weighted_erm::<f64>(&[]), 0);
    }

    #[test]
    fn empty_ledger_returns_zero() {
        let class = three_row_class();
        let mut oracle = TableErm::new(&class);
        assert_eq!(loo_from_ledger(&mut oracle, &GradientLedger::<f64>::new()), 0);
    }

    #[test]
    fn negative_coefficient_prefers_agreement() {
        let class = three_row_class();
        let mut oracle = TableErm::new(&class);
        let mut ledger = GradientLedger::new();
        ledger.push(1, Label(2), -2.0_f64);
        // g(h) = -2 for rows agreeing at (x=1, y=2); lowest such row is 1.
        assert_eq!(loo_from_ledger(&mut oracle, &ledger), 1);
    }

    #[test]
    fn ledger_evaluation_cases() {
        let class = three_row_class();
        let mut ledger = GradientLedger::new();
        assert_eq!(ledger.evaluate(&class, 0), 0.0);
        ledger.push(0, Label(1), 3.5_f64);
        assert_eq!(ledger.evaluate(&class, 0), 3.5);
        assert_eq!(ledger.evaluate(&class, 2), 0.0);
    }

    #[test]
    fn compaction_preserves_the_function() {
        let class = three_row_class();
        let mut ledger = GradientLedger::new();
        let mut rng = stream_rng(3, RngStream::Optimizer);
        for _ in 0..200 {
            ledger.push(rng.gen_range(0..2), Label(rng.gen_range(1..3)), rng.gen::<f64>() - 0.5);
        }
        let before: Vec<f64> = (0..3).map(|h| ledger.evaluate(&class, h)).collect();
        ledger.compact();
        assert!(ledger.len() <= 4);
        for (h, want) in before.iter().enumerate() {
            assert!((ledger.evaluate(&class, h) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn loo_matches_brute_force_on_random_ledgers() {
        let mut rng = stream_rng(17, RngStream::Optimizer);
        let mut mismatches = 0;
        for trial in 0..1000 {
            let n = rng.gen_range(1..=50);
            let m = rng.gen_range(1..=6);
            let k = rng.gen_range(2..=5);
            let inst = make_random_instance::<f64>(m, k, n, 1000 + trial).unwrap();
            let mut ledger = GradientLedger::new();
            for _ in 0..rng.gen_range(0..30) {
                ledger.push(
                    rng.gen_range(0..m),
                    Label(rng.gen_range(0..k)),
                    4.0 * rng.gen::<f64>() - 2.0,
                );
            }
            let mut oracle = TableErm::new(&inst.class);
            let got = loo_from_ledger(&mut oracle, &ledger);
            let mut want = 0;
            let mut best = ledger.evaluate(&inst.class, 0);
            for h in 1..n {
                let v = ledger.evaluate(&inst.class, h);
                if v < best {
                    best = v;
                    want = h;
                }
            }
            if got != want {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0);
    }
}
