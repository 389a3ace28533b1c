//! Stochastic Frank-Wolfe over the simplex with variance-reduced
//! gradient estimates.
//!
//! Rounds `τ_k = 2^k - 1` rebuild the gradient estimate from a fresh
//! batch; every other round applies a correction term evaluated at the
//! current and previous iterate, so the estimate stays accurate with
//! batch sizes that only grow linearly. The estimate itself is a ledger
//! of weighted `(example, label)` terms, and each round's linear
//! subproblem is one weighted-ERM call. Starting from a vertex, the
//! iterate after `t` rounds is supported on at most `t` hypotheses, so
//! nothing here scales with the class size except the oracle.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::instance::{HypothesisClass, Label, Sample};
use crate::logbarrier::{grad_coeff_from_w, w_prob_gamma, GammaConfig, SparseSimplex};
use crate::oracle::{loo_from_ledger, ErmOracle, GradientLedger, WeightedExample};
use crate::scalar::Real;

/// True on the full-rebuild rounds `1, 3, 7, 15, …`.
pub fn is_reset_round(t: usize) -> bool {
    t >= 1 && (t + 1).is_power_of_two()
}

/// Step sizes and batch sizes for the optimizer.
///
/// `lipschitz`, `smoothness` and `diameter` are the geometry constants of
/// the objective (`K/γ`, `K²/γ²` and `2` for the log-barrier objective
/// over the simplex). Reset rounds draw `ceil(scale · (G/(βD))² · t²)`
/// samples and other rounds draw `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwSchedule<F> {
    pub lipschitz: F,
    pub smoothness: F,
    pub diameter: F,
    pub rounds: usize,
    pub reset_batch_scale: F,
}

/// One round's parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwStep<F> {
    pub eta: F,
    pub batch: usize,
    pub reset: bool,
}

impl<F: Real> FwSchedule<F> {
    /// Geometry constants for the log-barrier objective with the given
    /// label count and mixing weight, and an explicit round count.
    pub fn for_gamma(num_labels: u32, gamma: F, rounds: usize) -> Self {
        let k = F::from_f64(f64::from(num_labels));
        Self {
            lipschitz: k / gamma,
            smoothness: (k / gamma) * (k / gamma),
            diameter: F::from_f64(2.0),
            rounds,
            reset_batch_scale: F::one(),
        }
    }

    /// The round count prescribed by the convergence analysis,
    /// `ceil(240 · (K/γ)⁴ · sqrt(ln(16N/δ)))`.
    pub fn theory(num_labels: u32, gamma: F, num_hypotheses: usize, delta: f64) -> Self {
        let ratio = f64::from(num_labels) / gamma.as_f64();
        let log_term = (16.0 * num_hypotheses as f64 / delta).ln();
        let rounds = (240.0 * ratio.powi(4) * log_term.sqrt()).ceil() as usize;
        Self::for_gamma(num_labels, gamma, rounds)
    }

    pub fn with_reset_batch_scale(mut self, scale: F) -> Self {
        self.reset_batch_scale = scale;
        self
    }

    /// Step size, batch size and reset flag for round `t ≥ 1`:
    /// `η_t = 1/t`, batch `ceil(scale·(G/(βD))²·t²)` on reset rounds and
    /// `t` otherwise, with a floor of one sample.
    pub fn step(&self, t: usize) -> FwStep<F> {
        assert!(t >= 1, "rounds are 1-indexed");
        let reset = is_reset_round(t);
        let batch = if reset {
            let ratio = self.lipschitz / (self.smoothness * self.diameter);
            let t_f = F::from_usize(t);
            let raw = self.reset_batch_scale * ratio * ratio * t_f * t_f;
            raw.ceil().as_f64() as usize
        } else {
            t
        };
        FwStep { eta: F::one() / F::from_usize(t), batch: batch.max(1), reset }
    }

    /// Total samples consumed by rounds `1..=rounds`.
    pub fn samples_required(&self) -> u128 {
        (1..=self.rounds).map(|t| self.step(t).batch as u128).sum()
    }

    /// The largest round count whose schedule fits in `available`
    /// samples, capped at `round_cap`.
    pub fn fit_rounds(
        num_labels: u32,
        gamma: F,
        reset_batch_scale: F,
        available: usize,
        round_cap: usize,
    ) -> usize {
        let probe =
            Self::for_gamma(num_labels, gamma, round_cap).with_reset_batch_scale(reset_batch_scale);
        let mut used: u128 = 0;
        let mut t = 0;
        while t < round_cap {
            let next = probe.step(t + 1).batch as u128;
            if used + next > available as u128 {
                break;
            }
            used += next;
            t += 1;
        }
        t
    }
}

#[derive(Debug, Error)]
pub enum FwError {
    #[error("dataset too small for the batch schedule: need {required} samples, have {available}")]
    DatasetTooSmall { required: u128, available: usize },
}

#[derive(Debug, Clone)]
pub struct FwConfig {
    /// Merge ledger terms by `(example, label)` key after each round.
    /// Keeps the oracle cost per round bounded by the number of distinct
    /// pairs instead of the total sample count.
    pub compact_ledger: bool,
    /// Renormalize the iterate every this many rounds to cancel drift.
    pub renorm_every: usize,
    /// Collect per-round logs in the diagnostics.
    pub log_rounds: bool,
}

impl Default for FwConfig {
    fn default() -> Self {
        Self { compact_ledger: true, renorm_every: 100, log_rounds: false }
    }
}

/// Per-round diagnostics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwRoundLog {
    pub round: usize,
    pub eta: f64,
    pub batch: usize,
    pub reset: bool,
    pub vertex: usize,
    pub phi_batch_mean: f64,
    pub support_len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FwDiagnostics {
    pub loo_calls: u64,
    pub samples_consumed: usize,
    pub rounds: Vec<FwRoundLog>,
}

#[derive(Debug, Clone)]
pub struct FwOutcome<F> {
    pub distribution: SparseSimplex<F>,
    pub diagnostics: FwDiagnostics,
}

/// The optimizer state between rounds.
#[derive(Debug, Clone)]
pub struct FwState<F: Real> {
    /// Next round to execute, starting at 1.
    pub round: usize,
    pub current: SparseSimplex<F>,
    pub previous: SparseSimplex<F>,
    pub ledger: GradientLedger<F>,
}

impl<F: Real> FwState<F> {
    pub fn from_vertex(h: usize) -> Self {
        Self {
            round: 1,
            current: SparseSimplex::vertex(h),
            previous: SparseSimplex::vertex(h),
            ledger: GradientLedger::new(),
        }
    }

    /// Construct at an arbitrary iterate (used by tests and diagnostics).
    pub fn at(round: usize, current: SparseSimplex<F>) -> Self {
        Self { round, previous: current.clone(), current, ledger: GradientLedger::new() }
    }

    /// Execute one round on `batch`, which must have exactly the
    /// scheduled size for the current round.
    pub fn step<O: ErmOracle>(
        &mut self,
        batch: &[Sample],
        class: &HypothesisClass,
        cfg: &GammaConfig<F>,
        schedule: &FwSchedule<F>,
        fw_cfg: &FwConfig,
        oracle: &mut O,
    ) -> FwRoundLog {
        let spec = schedule.step(self.round);
        assert_eq!(
            batch.len(),
            spec.batch,
            "round {}: batch size mismatch (expected {})",
            self.round,
            spec.batch
        );

        // Mixed probabilities per distinct pair; a batch usually repeats
        // few pairs, so this is the hot-path saving.
        let mut mixed: BTreeMap<(usize, u32), (F, F)> = BTreeMap::new();
        for &(x, y) in batch {
            mixed.entry((x, y.0)).or_insert_with(|| {
                let cur = w_prob_gamma(&self.current, class, x, y, cfg);
                let prev = if spec.reset {
                    F::one()
                } else {
                    w_prob_gamma(&self.previous, class, x, y, cfg)
                };
                (cur, prev)
            });
        }

        let inv_b = F::one() / F::from_usize(spec.batch);
        if spec.reset {
            self.ledger.clear();
        }
        let mut phi_sum = F::zero();
        for &(x, y) in batch {
            let &(w_cur, w_prev) = mixed.get(&(x, y.0)).expect("key cached above");
            phi_sum += -w_cur.ln();
            self.ledger.push(x, y, grad_coeff_from_w(w_cur, cfg) * inv_b);
            if !spec.reset {
                self.ledger.push(x, y, -grad_coeff_from_w(w_prev, cfg) * inv_b);
            }
        }
        if fw_cfg.compact_ledger {
            self.ledger.compact();
        }

        let vertex = loo_from_ledger(oracle, &self.ledger);
        self.previous = self.current.clone();
        self.current.blend_toward_vertex(spec.eta, vertex);
        if fw_cfg.renorm_every > 0 && self.round % fw_cfg.renorm_every == 0 {
            self.current.renormalize();
        }
        debug_assert!(
            (self.current.total() - F::one()).abs() <= F::mass_tol(),
            "simplex mass drifted at round {}",
            self.round
        );

        let log = FwRoundLog {
            round: self.round,
            eta: spec.eta.as_f64(),
            batch: spec.batch,
            reset: spec.reset,
            vertex,
            phi_batch_mean: (phi_sum * inv_b).as_f64(),
            support_len: self.current.support_len(),
        };
        self.round += 1;
        log
    }
}

/// Run the full optimizer on a dataset: shuffle once, consume batches
/// without replacement, return the final iterate. The initial iterate is
/// the vertex of the unit-weight ERM on the whole dataset.
pub fn run_fw<F: Real, O: ErmOracle>(
    class: &HypothesisClass,
    dataset: &[Sample],
    cfg: &GammaConfig<F>,
    schedule: &FwSchedule<F>,
    fw_cfg: &FwConfig,
    oracle: &mut O,
    rng: &mut ChaCha8Rng,
) -> Result<FwOutcome<F>, FwError> {
    run_fw_observed(class, dataset, cfg, schedule, fw_cfg, oracle, rng, |_, _| {})
}

/// [`run_fw`] with a per-round observer. The observer sees `(t, P_t)` at
/// the start of every round and once more with the final iterate
/// `(rounds + 1, P_{rounds+1})`.
#[allow(clippy::too_many_arguments)]
pub fn run_fw_observed<F: Real, O: ErmOracle>(
    class: &HypothesisClass,
    dataset: &[Sample],
    cfg: &GammaConfig<F>,
    schedule: &FwSchedule<F>,
    fw_cfg: &FwConfig,
    oracle: &mut O,
    rng: &mut ChaCha8Rng,
    mut observer: impl FnMut(usize, &SparseSimplex<F>),
) -> Result<FwOutcome<F>, FwError> {
    let required = schedule.samples_required();
    if required > dataset.len() as u128 {
        return Err(FwError::DatasetTooSmall { required, available: dataset.len() });
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);

    // Warm start at the ERM vertex of the dataset; the scan is fed the
    // compacted multiplicity counts, which has the same argmin as the
    // raw list.
    let mut counts: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for &(x, y) in dataset {
        *counts.entry((x, y.0)).or_insert(0) += 1;
    }
    let unit_examples: Vec<WeightedExample<F>> = counts
        .into_iter()
        .map(|((x, y), c)| WeightedExample {
            example: x,
            label: Label(y),
            weight: F::from_usize(c),
        })
        .collect();
    let start = oracle.weighted_erm(&unit_examples);

    let mut state = FwState::from_vertex(start);
    let mut diagnostics = FwDiagnostics::default();
    let mut batch = Vec::new();
    let mut cursor = 0;
    for t in 1..=schedule.rounds {
        observer(t, &state.current);
        let size = schedule.step(t).batch;
        batch.clear();
        batch.extend(order[cursor..cursor + size].iter().map(|&i| dataset[i]));
        cursor += size;
        let log = state.step(&batch, class, cfg, schedule, fw_cfg, oracle);
        diagnostics.loo_calls += 1;
        if fw_cfg.log_rounds {
            diagnostics.rounds.push(log);
        }
    }
    observer(schedule.rounds + 1, &state.current);
    diagnostics.samples_consumed = cursor;
    Ok(FwOutcome { distribution: state.current, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{make_planted_instance, make_random_instance, HypothesisClass, Instance};
    use crate::oracle::TableErm;
    use crate::rng::{stream_rng, RngStream};

    #[test]
    fn reset_rounds_are_powers_of_two_minus_one() {
        let resets: Vec<usize> = (1..=40).filter(|&t| is_reset_round(t)).collect();
        assert_eq!(resets, vec![1, 3, 7, 15, 31]);
    }

    #[test]
    fn schedule_matches_hand_computed_values() {
        // K=2, γ=0.5: (G/(βD))² = (γ/2K)² = 1/64.
        let schedule = FwSchedule::for_gamma(2, 0.5_f64, 100);
        assert_eq!(schedule.step(1).batch, 1);
        assert_eq!(schedule.step(3).batch, 1);
        assert_eq!(schedule.step(7).batch, 1);
        assert_eq!(schedule.step(15).batch, 4);
        assert_eq!(schedule.step(4).batch, 4);
        assert!((schedule.step(10).eta - 0.1).abs() < 1e-15);
        assert!(schedule.step(15).reset);
        assert!(!schedule.step(4).reset);
    }

    #[test]
    fn samples_required_sums_the_schedule() {
        let schedule = FwSchedule::for_gamma(2, 0.5_f64, 7);
        // b = 1, 2, 1, 4, 5, 6, 1.
        assert_eq!(schedule.samples_required(), 20);
        assert_eq!(FwSchedule::fit_rounds(2, 0.5_f64, 1.0, 20, 100), 7);
        assert_eq!(FwSchedule::fit_rounds(2, 0.5_f64, 1.0, 19, 100), 6);
        assert_eq!(FwSchedule::fit_rounds(2, 0.5_f64, 1.0, 1_000, 5), 5);
    }

    fn symmetric_instance() -> Instance<f64> {
        use crate::instance::SupportPoint;
        let class = HypothesisClass::from_rows(vec![vec![Label(0)], vec![Label(1)]]).unwrap();
        Instance {
            num_labels: 2,
            class,
            support: vec![
                SupportPoint { example: 0, label: Label(0), probability: 0.5 },
                SupportPoint { example: 0, label: Label(1), probability: 0.5 },
            ],
        }
    }

    #[test]
    fn reset_step_from_uniform_builds_the_expected_ledger() {
        let inst = symmetric_instance();
        let cfg = GammaConfig::new(0.5_f64, 2).unwrap();
        let schedule = FwSchedule::for_gamma(2, 0.5, 10);
        let uniform = SparseSimplex::from_weights([(0, 0.5), (1, 0.5)]).unwrap();
        let mut state = FwState::at(1, uniform);
        let mut oracle = TableErm::new(&inst.class);
        state.step(&[(0, Label(1))], &inst.class, &cfg, &schedule, &FwConfig::default(), &mut oracle);
        // Single term (x=0, y=1, c=-1): Wγ = 0.5, c = -(1-γ)/Wγ = -1.
        assert_eq!(state.ledger.len(), 1);
        let term = state.ledger.terms()[0];
        assert_eq!((term.example, term.label), (0, Label(1)));
        assert!((term.coefficient - (-1.0)).abs() < 1e-15);
        // The chosen vertex is the lowest-index hypothesis with h(x)=1.
        assert!((state.current.weight(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn full_first_step_lands_on_the_loo_vertex() {
        let inst = symmetric_instance();
        let cfg = GammaConfig::new(0.5, 2).unwrap();
        let schedule = FwSchedule::for_gamma(2, 0.5, 1);
        let mut oracle = TableErm::new(&inst.class);
        let mut rng = stream_rng(0, RngStream::Optimizer);
        let dataset = vec![(0, Label(1)); 4];
        let out = run_fw(&inst.class, &dataset, &cfg, &schedule, &FwConfig::default(), &mut oracle, &mut rng)
            .unwrap();
        // η₁ = 1, so P₂ is exactly the round-1 vertex.
        assert_eq!(out.distribution.support_len(), 1);
        assert_eq!(out.diagnostics.loo_calls, 1);
    }

    #[test]
    fn single_hypothesis_class_stays_on_the_point() {
        let inst = make_planted_instance::<f64>(3, 2, 1, 0.0, 4).unwrap();
        let cfg = GammaConfig::new(0.5, 2).unwrap();
        let schedule = FwSchedule::for_gamma(2, 0.5, 20);
        let dataset: Vec<Sample> = (0..400).map(|i| inst.support[i % 3].clone()).map(|p| (p.example, p.label)).collect();
        let mut oracle = TableErm::new(&inst.class);
        let mut rng = stream_rng(1, RngStream::Optimizer);
        let out = run_fw(&inst.class, &dataset, &cfg, &schedule, &FwConfig::default(), &mut oracle, &mut rng)
            .unwrap();
        assert_eq!(out.distribution, SparseSimplex::vertex(0));
    }

    #[test]
    fn dataset_exhaustion_is_an_error() {
        let inst = symmetric_instance();
        let cfg = GammaConfig::new(0.5, 2).unwrap();
        let schedule = FwSchedule::for_gamma(2, 0.5, 50);
        let dataset = vec![(0, Label(1)); 10];
        let mut oracle = TableErm::new(&inst.class);
        let mut rng = stream_rng(0, RngStream::Optimizer);
        let err = run_fw(&inst.class, &dataset, &cfg, &schedule, &FwConfig::default(), &mut oracle, &mut rng)
            .unwrap_err();
        assert!(matches!(err, FwError::DatasetTooSmall { .. }));
    }

    #[test]
    fn support_stays_below_round_count_and_calls_match() {
        let inst = make_random_instance::<f64>(5, 3, 40, 21).unwrap();
        let cfg = GammaConfig::new(0.5, 3).unwrap();
        let rounds = 64;
        let schedule = FwSchedule::for_gamma(3, 0.5, rounds);
        let need = schedule.samples_required() as usize;
        let dataset: Vec<Sample> =
            (0..need).map(|i| &inst.support[i % inst.support.len()]).map(|p| (p.example, p.label)).collect();
        let mut oracle = TableErm::new(&inst.class);
        let mut rng = stream_rng(2, RngStream::Optimizer);
        let out = run_fw_observed(
            &inst.class,
            &dataset,
            &cfg,
            &schedule,
            &FwConfig::default(),
            &mut oracle,
            &mut rng,
            |t, p| {
                assert!(p.support_len() <= t, "support {} at round {t}", p.support_len());
                let mass: f64 = p.iter().map(|(_, w)| w).sum();
                assert!((mass - 1.0).abs() < 1e-9);
                assert!(p.iter().all(|(_, w)| w > 0.0));
            },
        )
        .unwrap();
        assert_eq!(out.diagnostics.loo_calls, rounds as u64);
        // One extra call for the warm-start ERM.
        assert_eq!(oracle.calls(), rounds as u64 + 1);
    }

    #[test]
    fn replay_is_bit_identical() {
        let inst = make_random_instance::<f64>(4, 3, 25, 33).unwrap();
        let cfg = GammaConfig::new(0.5, 3).unwrap();
        let schedule = FwSchedule::for_gamma(3, 0.5, 40);
        let need = schedule.samples_required() as usize;
        let dataset: Vec<Sample> =
            (0..need).map(|i| &inst.support[i % inst.support.len()]).map(|p| (p.example, p.label)).collect();
        let run = || {
            let mut oracle = TableErm::new(&inst.class);
            let mut rng = stream_rng(9, RngStream::Optimizer);
            run_fw(&inst.class, &dataset, &cfg, &schedule, &FwConfig::default(), &mut oracle, &mut rng)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.distribution, b.distribution);
    }

    /// Dense reimplementation of the variance-reduced recursion, kept
    /// independent of the ledger path.
    struct DenseSpider {
        grad_estimate: Vec<f64>,
        current: Vec<f64>,
        previous: Vec<f64>,
    }

    impl DenseSpider {
        fn sample_grad(p: &[f64], class: &HypothesisClass, x: usize, y: Label, gamma: f64, k: u32) -> Vec<f64> {
            let w: f64 = (0..p.len()).map(|h| if class.label(h, x) == y { p[h] } else { 0.0 }).sum();
            let mixed = (1.0 - gamma) * w + gamma / f64::from(k);
            (0..p.len())
                .map(|h| if class.label(h, x) == y { -(1.0 - gamma) / mixed } else { 0.0 })
                .collect()
        }

        fn step(&mut self, batch: &[Sample], class: &HypothesisClass, gamma: f64, k: u32, t: usize, vertex: usize) {
            let n = self.current.len();
            let inv_b = 1.0 / batch.len() as f64;
            if is_reset_round(t) {
                self.grad_estimate = vec![0.0; n];
                for &(x, y) in batch {
                    let g = Self::sample_grad(&self.current, class, x, y, gamma, k);
                    for h in 0..n {
                        self.grad_estimate[h] += g[h] * inv_b;
                    }
                }
            } else {
                for &(x, y) in batch {
                    let g_cur = Self::sample_grad(&self.current, class, x, y, gamma, k);
                    let g_prev = Self::sample_grad(&self.previous, class, x, y, gamma, k);
                    for h in 0..n {
                        self.grad_estimate[h] += (g_cur[h] - g_prev[h]) * inv_b;
                    }
                }
            }
            let eta = 1.0 / t as f64;
            self.previous = self.current.clone();
            for w in &mut self.current {
                *w *= 1.0 - eta;
            }
            self.current[vertex] += eta;
        }
    }

    #[test]
    fn ledger_matches_dense_recursion() {
        let n = 30;
        let inst = make_random_instance::<f64>(5, 3, n, 55).unwrap();
        let cfg = GammaConfig::new(0.5, 3).unwrap();
        let schedule = FwSchedule::for_gamma(3, 0.5, 100);
        let mut rng = stream_rng(12, RngStream::Optimizer);
        let mut draw = || {
            let u: f64 = rand::Rng::gen(&mut rng);
            let mut acc = 0.0;
            for p in &inst.support {
                acc += p.probability;
                if u < acc {
                    return (p.example, p.label);
                }
            }
            let last = inst.support.last().unwrap();
            (last.example, last.label)
        };

        let start = 2;
        let mut sparse = FwState::from_vertex(start);
        let mut dense = DenseSpider {
            grad_estimate: vec![0.0; n],
            current: {
                let mut v = vec![0.0; n];
                v[start] = 1.0;
                v
            },
            previous: vec![0.0; n],
        };
        let mut oracle = TableErm::new(&inst.class);
        for t in 1..=100 {
            let size = schedule.step(t).batch;
            let batch: Vec<Sample> = (0..size).map(|_| draw()).collect();
            let log =
                sparse.step(&batch, &inst.class, &cfg, &schedule, &FwConfig::default(), &mut oracle);
            // Mirror the sparse path's vertex choice so both recursions
            // follow the same trajectory.
            dense.step(&batch, &inst.class, 0.5, 3, t, log.vertex);
            for h in 0..n {
                let lhs = sparse.ledger.evaluate(&inst.class, h);
                let rhs = dense.grad_estimate[h];
                assert!((lhs - rhs).abs() < 1e-10, "round {t}, h {h}: {lhs} vs {rhs}");
            }
            let p_dense = sparse.current.to_dense(n);
            for h in 0..n {
                assert!((p_dense[h] - dense.current[h]).abs() < 1e-10, "iterate mismatch at {h}");
            }
        }
    }
}
