//! The two-phase learner.
//!
//! Phase 1 guesses labels uniformly and keeps the examples it got right,
//! which yields correctly-labeled draws from the underlying distribution
//! at an acceptance rate of `1/K`. The kept dataset feeds the stochastic
//! Frank-Wolfe solver, producing an exploration distribution whose
//! induced label probabilities are never small where the data has mass.
//! Phase 2 predicts from a `γ`-uniform mixture of that distribution and
//! records importance weights `1{correct}/w_prob_gamma`, so every
//! hypothesis's reward is estimated uniformly well; the final answer is
//! one weighted-ERM call. The uniform-exploration baseline and the
//! closed-form constants calculator live here as well.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cover::CoverSummary;
use crate::env::{BanditEnv, EnvError};
use crate::frank_wolfe::{run_fw, FwConfig, FwError, FwOutcome, FwSchedule};
use crate::instance::{HypothesisClass, Label, Sample};
use crate::logbarrier::{w_prob_gamma, GammaConfig, SparseSimplex};
use crate::oracle::{loo_from_ledger, ErmOracle, GradientLedger, TableErm, WeightedExample};
use crate::rng::{stream_rng, RngStream};
use crate::scalar::Real;

/// Default ceiling on environment samples per run; runs whose constants
/// require more are refused up front.
pub const DEFAULT_SAMPLE_CAP: u64 = 100_000_000;

/// Practical-mode optimizer rounds top out around here (scaled by
/// `t_mult`); the dataset size is usually the binding constraint.
const PRACTICAL_ROUND_TARGET: usize = 2000;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },
    #[error("phase 1 budget exhausted: {trials} trials yielded {kept} of {needed} samples")]
    BudgetExhausted { trials: u64, kept: u64, needed: u64 },
    #[error("run requires about {required} environment samples, above the cap {cap}")]
    SampleScaleExceeded { required: u128, cap: u64 },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Fw(#[from] FwError),
}

/// The closed-form constants for guarantee-mode runs. These certify the
/// worst case and are astronomically large; they are reported and
/// regression-tested, not executed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Phase-1 dataset size `ceil(58000·(K/γ)⁸·ln(16N/δ))`.
    pub m1: u128,
    /// Phase-1 trial cap `4·K·M₁`.
    pub budget: u128,
    /// Optimizer rounds `ceil(240·(K/γ)⁴·sqrt(ln(16N/δ)))`.
    pub fw_rounds: u64,
    /// Optimization tolerance `γ²/2K²`.
    pub mu: f64,
    /// Phase-2 rounds: the larger branch below, rounded up.
    pub m2: u64,
    /// Bernstein branch `144·ln(2N/δ)/ε²`.
    pub m2_bernstein: f64,
    /// Range branch `8K·ln(2N/δ)/(γε)`.
    pub m2_range: f64,
}

pub fn theory_constants(
    k: u32,
    gamma: f64,
    n: usize,
    delta: f64,
    eps: f64,
) -> Result<TheoryConstants, LearnError> {
    if k < 2 {
        return Err(LearnError::InvalidParameter {
            name: "k",
            message: "label count must be at least 2".into(),
        });
    }
    if n == 0 {
        return Err(LearnError::InvalidParameter {
            name: "n",
            message: "hypothesis count must be at least 1".into(),
        });
    }
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(LearnError::InvalidParameter {
            name: "gamma",
            message: format!("guarantee mode needs gamma in (0, 1/2], got {gamma}"),
        });
    }
    for (name, value) in [("eps", eps), ("delta", delta)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(LearnError::InvalidParameter {
                name,
                message: format!("must lie in (0, 1), got {value}"),
            });
        }
    }
    let ratio = f64::from(k) / gamma;
    let log1 = (16.0 * n as f64 / delta).ln();
    let m1 = (58000.0 * ratio.powi(8) * log1).ceil();
    let fw_rounds = (240.0 * ratio.powi(4) * log1.sqrt()).ceil() as u64;
    let log2 = (2.0 * n as f64 / delta).ln();
    let m2_bernstein = 144.0 * log2 / (eps * eps);
    let m2_range = 8.0 * f64::from(k) * log2 / (gamma * eps);
    Ok(TheoryConstants {
        m1: m1 as u128,
        budget: 4 * u128::from(k) * m1 as u128,
        fw_rounds,
        mu: gamma * gamma / (2.0 * f64::from(k) * f64::from(k)),
        m2: m2_bernstein.max(m2_range).ceil() as u64,
        m2_bernstein,
        m2_range,
    })
}

/// Desk-scale constants. The worst-case `(K/γ)⁸` factor in the dataset
/// size is dropped and the Bernstein constant is configurable; the
/// verification suite checks the properties those factors exist to
/// guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PracticalConstants {
    /// Phase-1 dataset size multiplier: `M₁ = ceil(c1·ln(16N/δ))`.
    pub c1: f64,
    /// Bernstein-branch constant in `M₂` (the analysis uses 144).
    pub c2: f64,
    /// Scales the optimizer round cap (rounds top out near
    /// `2000·t_mult`; the dataset size binds first on typical runs).
    pub t_mult: f64,
    /// Scales the reset-round batch coefficient.
    pub reset_batch_scale: f64,
}

impl Default for PracticalConstants {
    fn default() -> Self {
        Self { c1: 500.0, c2: 8.0, t_mult: 1.0, reset_batch_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Theory,
    Practical(PracticalConstants),
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Theory => "theory",
            Mode::Practical(_) => "practical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnParams {
    pub eps: f64,
    pub delta: f64,
    pub gamma: f64,
    pub mode: Mode,
    pub seed: u64,
    pub sample_cap: u64,
}

impl LearnParams {
    /// Practical defaults with `γ = 1/2`.
    pub fn practical(eps: f64, delta: f64, seed: u64) -> Self {
        Self {
            eps,
            delta,
            gamma: 0.5,
            mode: Mode::Practical(PracticalConstants::default()),
            seed,
            sample_cap: DEFAULT_SAMPLE_CAP,
        }
    }
}

/// Configuration echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub k: u32,
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub delta: f64,
    pub gamma: f64,
    pub mode: String,
    pub seed: u64,
    pub m1: u64,
    pub budget: u64,
    pub m2: u64,
    pub mu: f64,
    pub m2_bernstein: f64,
    pub m2_range: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub build: Option<String>,
}

/// Per-run accounting. `total_env_samples` always equals the
/// environment's meter: phase-1 trials plus phase-2 rounds (plus the
/// discretization draws when a cover is involved).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ReportConfig,
    pub phase1_trials: u64,
    pub phase1_kept: u64,
    pub fw_rounds: u64,
    pub fw_oracle_calls: u64,
    pub oracle_calls: u64,
    pub phase2_rounds: u64,
    pub total_env_samples: u64,
    pub chosen: usize,
    /// Empirical estimate of the worst-case estimator second moment at
    /// the phase-1 output, from the phase-1 dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1_variance_estimate: Option<f64>,
    /// Set when the estimate exceeds the analysis bound of 3. The run
    /// proceeds: the bound only holds with high probability.
    pub variance_warning: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cover: Option<CoverSummary>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy)]
struct Resolved {
    m1: u64,
    budget: u64,
    m2: u64,
    mu: f64,
    m2_bernstein: f64,
    m2_range: f64,
    fixed_rounds: Option<u64>,
    reset_batch_scale: f64,
    round_cap: usize,
}

fn resolve(params: &LearnParams, k: u32, n: usize) -> Result<Resolved, LearnError> {
    for (name, value) in [("eps", params.eps), ("delta", params.delta)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(LearnError::InvalidParameter {
                name,
                message: format!("must lie in (0, 1), got {value}"),
            });
        }
    }
    match params.mode {
        Mode::Theory => {
            let tc = theory_constants(k, params.gamma, n, params.delta, params.eps)?;
            let required = tc.budget + u128::from(tc.m2);
            if required > u128::from(params.sample_cap) {
                return Err(LearnError::SampleScaleExceeded {
                    required,
                    cap: params.sample_cap,
                });
            }
            Ok(Resolved {
                m1: tc.m1 as u64,
                budget: tc.budget as u64,
                m2: tc.m2,
                mu: tc.mu,
                m2_bernstein: tc.m2_bernstein,
                m2_range: tc.m2_range,
                fixed_rounds: Some(tc.fw_rounds),
                reset_batch_scale: 1.0,
                round_cap: usize::MAX,
            })
        }
        Mode::Practical(pc) => {
            if !(params.gamma > 0.0 && params.gamma <= 1.0) {
                return Err(LearnError::InvalidParameter {
                    name: "gamma",
                    message: format!("must lie in (0, 1], got {}", params.gamma),
                });
            }
            for (name, value) in [
                ("c1", pc.c1),
                ("c2", pc.c2),
                ("t_mult", pc.t_mult),
                ("reset_batch_scale", pc.reset_batch_scale),
            ] {
                if !(value > 0.0) {
                    return Err(LearnError::InvalidParameter {
                        name,
                        message: format!("must be positive, got {value}"),
                    });
                }
            }
            let k_f = f64::from(k);
            let m1 = (pc.c1 * (16.0 * n as f64 / params.delta).ln()).ceil() as u64;
            let budget = 4 * u64::from(k) * m1;
            let log2 = (2.0 * n as f64 / params.delta).ln();
            let m2_bernstein = pc.c2 * log2 / (params.eps * params.eps);
            let m2_range = 8.0 * k_f * log2 / (params.gamma * params.eps);
            let m2 = m2_bernstein.max(m2_range).ceil() as u64;
            let required = u128::from(budget) + u128::from(m2);
            if required > u128::from(params.sample_cap) {
                return Err(LearnError::SampleScaleExceeded {
                    required,
                    cap: params.sample_cap,
                });
            }
            Ok(Resolved {
                m1,
                budget,
                m2,
                mu: params.gamma * params.gamma / (2.0 * k_f * k_f),
                m2_bernstein,
                m2_range,
                fixed_rounds: None,
                reset_batch_scale: pc.reset_batch_scale,
                round_cap: ((PRACTICAL_ROUND_TARGET as f64 * pc.t_mult).ceil() as usize).max(1),
            })
        }
    }
}

/// Guess uniformly until `target` correct predictions are collected,
/// keeping the `(example, guessed-label)` pairs; a kept guess equals the
/// true label. Fails once `budget` trials pass without reaching the
/// target.
pub fn phase1_collect<F: Real>(
    env: &mut BanditEnv<F>,
    target: u64,
    budget: u64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Sample>, u64), LearnError> {
    let k = env.num_labels();
    let mut dataset = Vec::with_capacity(target as usize);
    let mut trials = 0u64;
    while (dataset.len() as u64) < target {
        if trials >= budget {
            return Err(LearnError::BudgetExhausted {
                trials,
                kept: dataset.len() as u64,
                needed: target,
            });
        }
        let x = env.open_round()?;
        let guess = Label(rng.gen_range(0..k));
        trials += 1;
        if env.predict(guess)?.correct {
            dataset.push((x, guess));
        }
    }
    Ok((dataset, trials))
}

/// Solve the exploration objective on the collected dataset.
pub fn phase1_solve<F: Real, O: ErmOracle>(
    class: &HypothesisClass,
    dataset: &[Sample],
    cfg: &GammaConfig<F>,
    schedule: &FwSchedule<F>,
    fw_cfg: &FwConfig,
    oracle: &mut O,
    rng: &mut ChaCha8Rng,
) -> Result<FwOutcome<F>, LearnError> {
    Ok(run_fw(class, dataset, cfg, schedule, fw_cfg, oracle, rng)?)
}

/// Predict from the `γ`-uniform mixture of `p_hat` for `rounds` rounds,
/// recording importance weights `1{correct}/w_prob_gamma`. Incorrect
/// rounds are kept with weight zero so the final oracle call sees
/// exactly `rounds` examples.
pub fn phase2_explore<F: Real>(
    env: &mut BanditEnv<F>,
    class: &HypothesisClass,
    p_hat: &SparseSimplex<F>,
    cfg: &GammaConfig<F>,
    rounds: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<WeightedExample<F>>, LearnError> {
    let k = env.num_labels();
    let gamma = cfg.gamma().as_f64();
    let mut examples = Vec::with_capacity(rounds as usize);
    for _ in 0..rounds {
        let x = env.open_round()?;
        let predicted = if rng.gen::<f64>() < gamma {
            Label(rng.gen_range(0..k))
        } else {
            let h = p_hat.sample_by_cdf(rng.gen::<f64>());
            class.label(h, x)
        };
        let feedback = env.predict(predicted)?;
        let weight = if feedback.correct {
            F::one() / w_prob_gamma(p_hat, class, x, predicted, cfg)
        } else {
            F::zero()
        };
        examples.push(WeightedExample { example: x, label: predicted, weight });
    }
    Ok(examples)
}

/// One weighted-ERM call over the phase-2 examples. Minimizing the
/// weighted mismatch count is the same as maximizing the mean
/// importance-weighted reward.
pub fn finalize<F: Real, O: ErmOracle>(oracle: &mut O, examples: &[WeightedExample<F>]) -> usize {
    oracle.weighted_erm(examples)
}

/// Empirical `max_h (1/|S|) Σ 1{h(x)=y}/w_prob_gamma(p_hat, x, y)` over
/// the phase-1 dataset: one ledger and one oracle call.
fn empirical_second_moment<F: Real, O: ErmOracle>(
    class: &HypothesisClass,
    dataset: &[Sample],
    p_hat: &SparseSimplex<F>,
    cfg: &GammaConfig<F>,
    oracle: &mut O,
) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for &(x, y) in dataset {
        *counts.entry((x, y.0)).or_insert(0) += 1;
    }
    let len = F::from_usize(dataset.len());
    let mut ledger = GradientLedger::new();
    for ((x, y), count) in counts {
        let label = Label(y);
        let mixed = w_prob_gamma(p_hat, class, x, label, cfg);
        // Negated, so the ledger argmin is the estimate's argmax.
        ledger.push(x, label, -F::from_usize(count) / (len * mixed));
    }
    let worst = loo_from_ledger(oracle, &ledger);
    (-ledger.evaluate(class, worst)).as_f64()
}

/// Run the full two-phase learner against the environment, using the
/// environment's own class as the hypothesis space.
pub fn learn<F: Real>(
    env: &mut BanditEnv<F>,
    params: &LearnParams,
) -> Result<(usize, RunReport), LearnError> {
    let class = env.class().clone();
    learn_with_class(env, &class, params)
}

/// Run the learner over an explicit hypothesis class, which may differ
/// from the environment's own (the cover reduction passes a restricted
/// class). Labels produced by `class` must be valid for the environment.
pub fn learn_with_class<F: Real>(
    env: &mut BanditEnv<F>,
    class: &HypothesisClass,
    params: &LearnParams,
) -> Result<(usize, RunReport), LearnError> {
    let start = Instant::now();
    let k = env.num_labels();
    let n = class.num_hypotheses();
    let resolved = resolve(params, k, n)?;
    let cfg = GammaConfig::new(F::from_f64(params.gamma), k).map_err(|e| {
        LearnError::InvalidParameter { name: "gamma", message: e.to_string() }
    })?;

    let meter_start = env.samples_drawn();
    let mut phase1_rng = stream_rng(params.seed, RngStream::LearnerPhase1);
    let (dataset, phase1_trials) = phase1_collect(env, resolved.m1, resolved.budget, &mut phase1_rng)?;

    let schedule = match resolved.fixed_rounds {
        Some(rounds) => FwSchedule::for_gamma(k, cfg.gamma(), rounds as usize),
        None => {
            let rounds = FwSchedule::fit_rounds(
                k,
                cfg.gamma(),
                F::from_f64(resolved.reset_batch_scale),
                dataset.len(),
                resolved.round_cap,
            );
            FwSchedule::for_gamma(k, cfg.gamma(), rounds)
        }
    }
    .with_reset_batch_scale(F::from_f64(resolved.reset_batch_scale));

    let mut oracle = TableErm::new(class);
    let mut fw_rng = stream_rng(params.seed, RngStream::Optimizer);
    let fw_out = phase1_solve(
        class,
        &dataset,
        &cfg,
        &schedule,
        &FwConfig::default(),
        &mut oracle,
        &mut fw_rng,
    )?;

    let variance_estimate =
        empirical_second_moment(class, &dataset, &fw_out.distribution, &cfg, &mut oracle);

    let mut phase2_rng = stream_rng(params.seed, RngStream::LearnerPhase2);
    let weighted =
        phase2_explore(env, class, &fw_out.distribution, &cfg, resolved.m2, &mut phase2_rng)?;
    let chosen = finalize(&mut oracle, &weighted);

    let report = RunReport {
        config: ReportConfig {
            k,
            n,
            m: class.num_examples(),
            eps: params.eps,
            delta: params.delta,
            gamma: params.gamma,
            mode: params.mode.name().to_string(),
            seed: params.seed,
            m1: resolved.m1,
            budget: resolved.budget,
            m2: resolved.m2,
            mu: resolved.mu,
            m2_bernstein: resolved.m2_bernstein,
            m2_range: resolved.m2_range,
            build: None,
        },
        phase1_trials,
        phase1_kept: dataset.len() as u64,
        fw_rounds: schedule.rounds as u64,
        fw_oracle_calls: fw_out.diagnostics.loo_calls,
        oracle_calls: oracle.calls(),
        phase2_rounds: resolved.m2,
        total_env_samples: env.samples_drawn() - meter_start,
        chosen,
        phase1_variance_estimate: Some(variance_estimate),
        variance_warning: variance_estimate > 3.0,
        excess_loss: None,
        cover: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((chosen, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub eps: f64,
    pub delta: f64,
    /// Round-count multiplier: `rounds = ceil(c_b·K·ln(2N/δ)/ε²)`.
    pub c_b: f64,
    pub seed: u64,
    pub sample_cap: u64,
}

impl BaselineParams {
    pub fn new(eps: f64, delta: f64, seed: u64) -> Self {
        Self { eps, delta, c_b: 3.0, seed, sample_cap: DEFAULT_SAMPLE_CAP }
    }
}

/// Uniform exploration end to end: predict uniformly for every round
/// (the `γ = 1` mixture), weight correct rounds by `K`, and finish with
/// one weighted-ERM call. Sample count scales with `K`, which is the
/// point of comparison.
pub fn uniform_baseline<F: Real>(
    env: &mut BanditEnv<F>,
    params: &BaselineParams,
) -> Result<(usize, RunReport), LearnError> {
    let start = Instant::now();
    for (name, value) in [("eps", params.eps), ("delta", params.delta)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(LearnError::InvalidParameter {
                name,
                message: format!("must lie in (0, 1), got {value}"),
            });
        }
    }
    if !(params.c_b > 0.0) {
        return Err(LearnError::InvalidParameter {
            name: "c_b",
            message: format!("must be positive, got {}", params.c_b),
        });
    }
    let class = env.class().clone();
    let k = env.num_labels();
    let n = class.num_hypotheses();
    let rounds = (params.c_b * f64::from(k) * (2.0 * n as f64 / params.delta).ln()
        / (params.eps * params.eps))
        .ceil() as u64;
    if u128::from(rounds) > u128::from(params.sample_cap) {
        return Err(LearnError::SampleScaleExceeded {
            required: u128::from(rounds),
            cap: params.sample_cap,
        });
    }

    let cfg = GammaConfig::new(F::one(), k).expect("gamma = 1 is valid");
    let p_hat = SparseSimplex::vertex(0); // never sampled at gamma = 1
    let meter_start = env.samples_drawn();
    let mut rng = stream_rng(params.seed, RngStream::LearnerPhase2);
    let weighted = phase2_explore(env, &class, &p_hat, &cfg, rounds, &mut rng)?;
    let mut oracle = TableErm::new(&class);
    let chosen = finalize(&mut oracle, &weighted);

    let report = RunReport {
        config: ReportConfig {
            k,
            n,
            m: class.num_examples(),
            eps: params.eps,
            delta: params.delta,
            gamma: 1.0,
            mode: "baseline".to_string(),
            seed: params.seed,
            m1: 0,
            budget: 0,
            m2: rounds,
            mu: 0.0,
            m2_bernstein: 0.0,
            m2_range: 0.0,
            build: None,
        },
        phase1_trials: 0,
        phase1_kept: 0,
        fw_rounds: 0,
        fw_oracle_calls: 0,
        oracle_calls: oracle.calls(),
        phase2_rounds: rounds,
        total_env_samples: env.samples_drawn() - meter_start,
        chosen,
        phase1_variance_estimate: None,
        variance_warning: false,
        excess_loss: None,
        cover: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((chosen, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{make_planted_instance, HypothesisClass, Instance, SupportPoint};
    use crate::reference;

    #[test]
    fn theory_constants_regression_pins() {
        let tc = theory_constants(2, 0.5, 16, 0.1, 0.1).unwrap();
        assert_eq!(tc.mu, 0.03125);
        // Independent recomputation of the closed forms.
        let log2n = (2.0 * 16.0 / 0.1_f64).ln();
        assert_eq!(tc.m2, (144.0 * log2n / 0.01).ceil() as u64);
        assert_eq!(tc.m2, 83064);
        let log16n = (16.0 * 16.0 / 0.1_f64).ln();
        assert_eq!(tc.fw_rounds, (240.0 * 256.0 * log16n.sqrt()).ceil() as u64);
        assert_eq!(tc.fw_rounds, 172118);
        assert_eq!(tc.budget, 8 * tc.m1);
        assert_eq!(tc.m1, (58000.0 * 65536.0 * log16n).ceil() as u128);
    }

    #[test]
    fn mu_scales_with_the_gamma_over_k_ratio() {
        let base = theory_constants(2, 0.5, 16, 0.1, 0.1).unwrap();
        let shrunk = theory_constants(2, 0.5 / 2.0_f64.sqrt(), 16, 0.1, 0.1).unwrap();
        assert!((base.mu / shrunk.mu - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bernstein_branch_dominates_iff_eps_below_threshold() {
        for &(k, gamma) in &[(2u32, 0.5), (4, 0.5), (8, 0.25)] {
            let threshold = 18.0 * gamma / f64::from(k);
            for &eps in &[0.05, 0.1, 0.3, 0.9] {
                if eps >= 1.0 {
                    continue;
                }
                let tc = theory_constants(k, gamma, 64, 0.1, eps).unwrap();
                if eps < threshold {
                    assert!(tc.m2_bernstein >= tc.m2_range, "eps {eps} below {threshold}");
                } else {
                    assert!(tc.m2_range >= tc.m2_bernstein, "eps {eps} above {threshold}");
                }
            }
        }
    }

    #[test]
    fn theory_constants_validate_ranges() {
        assert!(theory_constants(1, 0.5, 16, 0.1, 0.1).is_err());
        assert!(theory_constants(2, 0.6, 16, 0.1, 0.1).is_err());
        assert!(theory_constants(2, 0.5, 16, 1.5, 0.1).is_err());
        assert!(theory_constants(2, 0.5, 0, 0.1, 0.1).is_err());
    }

    fn constant_label_instance() -> Instance<f64> {
        // K=2, the true label is always 0 regardless of the example.
        let class = HypothesisClass::from_rows(vec![vec![Label(0), Label(0)]]).unwrap();
        Instance {
            num_labels: 2,
            class,
            support: vec![
                SupportPoint { example: 0, label: Label(0), probability: 0.3 },
                SupportPoint { example: 1, label: Label(0), probability: 0.7 },
            ],
        }
    }

    #[test]
    fn phase1_keep_rate_is_one_over_k() {
        let mut env = BanditEnv::new(constant_label_instance(), 3);
        let mut rng = stream_rng(3, RngStream::LearnerPhase1);
        let (dataset, trials) = phase1_collect(&mut env, 5_000, 200_000, &mut rng).unwrap();
        assert_eq!(dataset.len(), 5_000);
        let rate = dataset.len() as f64 / trials as f64;
        assert!((rate - 0.5).abs() < 0.02, "keep rate {rate}");
        assert_eq!(env.samples_drawn(), trials);
    }

    #[test]
    fn phase1_kept_examples_follow_the_distribution() {
        let mut env = BanditEnv::new(constant_label_instance(), 8);
        let mut rng = stream_rng(8, RngStream::LearnerPhase1);
        let (dataset, _) = phase1_collect(&mut env, 10_000, 500_000, &mut rng).unwrap();
        let ones = dataset.iter().filter(|&&(x, _)| x == 1).count() as f64;
        assert!((ones / dataset.len() as f64 - 0.7).abs() < 0.02);
        // Kept guesses are the true labels.
        assert!(dataset.iter().all(|&(_, y)| y == Label(0)));
    }

    #[test]
    fn phase1_budget_exhaustion_reports_trials() {
        let mut env = BanditEnv::new(constant_label_instance(), 1);
        let mut rng = stream_rng(1, RngStream::LearnerPhase1);
        let err = phase1_collect(&mut env, 1_000, 50, &mut rng).unwrap_err();
        match err {
            LearnError::BudgetExhausted { trials, kept, needed } => {
                assert_eq!(trials, 50);
                assert!(kept < 1_000);
                assert_eq!(needed, 1_000);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn phase2_weights_are_bounded_and_unbiased_at_the_planted_optimum() {
        let inst = make_planted_instance::<f64>(4, 3, 6, 0.0, 12).unwrap();
        let class = inst.class.clone();
        let mut env = BanditEnv::new(inst, 5);
        let cfg = GammaConfig::new(0.5, 3).unwrap();
        let p_hat = SparseSimplex::vertex(0);
        let mut rng = stream_rng(5, RngStream::LearnerPhase2);
        let rounds = 20_000;
        let examples = phase2_explore(&mut env, &class, &p_hat, &cfg, rounds, &mut rng).unwrap();
        assert_eq!(examples.len(), rounds as usize);
        let cap = 3.0 / 0.5;
        let mut estimate_sum = 0.0;
        for ex in &examples {
            assert!(ex.weight >= 0.0 && ex.weight <= cap + 1e-12);
            if class.label(0, ex.example) == ex.label {
                estimate_sum += ex.weight;
            }
        }
        // E[X(h*)] = Pr[h*(x) = y] = 1 on the realizable instance.
        let mean = estimate_sum / rounds as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn gamma_one_weights_are_k_on_correct_rounds() {
        let inst = make_planted_instance::<f64>(3, 4, 5, 0.2, 9).unwrap();
        let class = inst.class.clone();
        let mut env = BanditEnv::new(inst, 7);
        let cfg = GammaConfig::new(1.0, 4).unwrap();
        let p_hat = SparseSimplex::vertex(0);
        let mut rng = stream_rng(7, RngStream::LearnerPhase2);
        let examples = phase2_explore(&mut env, &class, &p_hat, &cfg, 2_000, &mut rng).unwrap();
        assert!(examples.iter().all(|ex| ex.weight == 0.0 || (ex.weight - 4.0).abs() < 1e-12));
        assert!(examples.iter().any(|ex| ex.weight > 0.0));
    }

    #[test]
    fn finalize_matches_brute_force_reward_argmax() {
        let inst = make_planted_instance::<f64>(4, 3, 30, 0.1, 21).unwrap();
        let class = inst.class.clone();
        let mut env = BanditEnv::new(inst, 2);
        let cfg = GammaConfig::new(0.5, 3).unwrap();
        let p_hat = SparseSimplex::vertex(0);
        let mut rng = stream_rng(2, RngStream::LearnerPhase2);
        let examples = phase2_explore(&mut env, &class, &p_hat, &cfg, 3_000, &mut rng).unwrap();
        let mut oracle = TableErm::new(&class);
        let chosen = finalize(&mut oracle, &examples);
        let reward = |h: usize| -> f64 {
            examples
                .iter()
                .filter(|ex| class.label(h, ex.example) == ex.label)
                .map(|ex| ex.weight)
                .sum()
        };
        let mut best = (0, reward(0));
        for h in 1..30 {
            let r = reward(h);
            if r > best.1 {
                best = (h, r);
            }
        }
        assert_eq!(chosen, best.0);
    }

    #[test]
    fn finalize_tie_breaks_and_degenerate_inputs() {
        let class = HypothesisClass::from_rows(vec![
            vec![Label(0), Label(1)],
            vec![Label(1), Label(1)],
        ])
        .unwrap();
        let mut oracle = TableErm::new(&class);
        assert_eq!(finalize::<f64, _>(&mut oracle, &[]), 0);
        let zeros = [
            WeightedExample { example: 0, label: Label(1), weight: 0.0_f64 },
        ];
        assert_eq!(finalize(&mut oracle, &zeros), 0);
        let single = [WeightedExample { example: 1, label: Label(1), weight: 2.0_f64 }];
        assert_eq!(finalize(&mut oracle, &single), 0);
        let pick_second = [WeightedExample { example: 0, label: Label(1), weight: 2.0_f64 }];
        assert_eq!(finalize(&mut oracle, &pick_second), 1);
    }

    #[test]
    fn learn_on_a_singleton_class_returns_it() {
        let inst = make_planted_instance::<f64>(3, 2, 1, 0.0, 4).unwrap();
        let mut env = BanditEnv::new(inst.clone(), 4);
        let params = LearnParams::practical(0.2, 0.2, 4);
        let (chosen, report) = learn(&mut env, &params).unwrap();
        assert_eq!(chosen, 0);
        assert_eq!(reference::excess_loss(&inst, chosen), 0.0);
        assert_eq!(report.total_env_samples, report.phase1_trials + report.phase2_rounds);
        assert_eq!(report.phase1_kept, report.config.m1);
        assert_eq!(report.phase2_rounds, report.config.m2);
        assert_eq!(report.fw_oracle_calls, report.fw_rounds);
    }

    #[test]
    fn learn_recovers_the_planted_hypothesis() {
        let inst = make_planted_instance::<f64>(6, 3, 40, 0.1, 33).unwrap();
        let mut env = BanditEnv::new(inst.clone(), 33);
        let params = LearnParams::practical(0.1, 0.1, 33);
        let (chosen, report) = learn(&mut env, &params).unwrap();
        let excess = reference::excess_loss(&inst, chosen);
        assert!(excess <= 0.1, "excess {excess}");
        assert_eq!(report.total_env_samples, env.samples_drawn());
        assert_eq!(report.oracle_calls, report.fw_oracle_calls + 3);
    }

    #[test]
    fn learn_is_deterministic_given_the_seed() {
        let inst = make_planted_instance::<f64>(4, 3, 20, 0.1, 15).unwrap();
        let run = || {
            let mut env = BanditEnv::new(inst.clone(), 15);
            let params = LearnParams::practical(0.15, 0.1, 15);
            let (chosen, mut report) = learn(&mut env, &params).unwrap();
            report.wall_time_secs = 0.0;
            (chosen, report)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn theory_mode_is_refused_at_desk_scale() {
        let inst = make_planted_instance::<f64>(3, 2, 8, 0.0, 2).unwrap();
        let mut env = BanditEnv::new(inst, 2);
        let params = LearnParams {
            eps: 0.1,
            delta: 0.1,
            gamma: 0.5,
            mode: Mode::Theory,
            seed: 2,
            sample_cap: DEFAULT_SAMPLE_CAP,
        };
        let err = learn(&mut env, &params).unwrap_err();
        assert!(matches!(err, LearnError::SampleScaleExceeded { .. }));
    }

    #[test]
    fn baseline_accounting_and_scaling() {
        let inst = make_planted_instance::<f64>(4, 3, 16, 0.0, 6).unwrap();
        let mut env = BanditEnv::new(inst.clone(), 6);
        let params = BaselineParams::new(0.2, 0.1, 6);
        let (chosen, report) = uniform_baseline(&mut env, &params).unwrap();
        let expected_rounds =
            (3.0 * 3.0 * (2.0 * 16.0 / 0.1_f64).ln() / (0.2 * 0.2)).ceil() as u64;
        assert_eq!(report.phase2_rounds, expected_rounds);
        assert_eq!(report.total_env_samples, expected_rounds);
        assert_eq!(report.phase1_trials, 0);
        assert!(chosen < 16);
        assert!(reference::excess_loss(&inst, chosen) <= 0.2);
    }
}
