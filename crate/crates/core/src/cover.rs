//! Discretizing a large explicit class through unlabeled samples.
//!
//! Hypotheses that realize the same label pattern on a sample of
//! examples are interchangeable up to the mass the sample missed, so
//! grouping by pattern and keeping one representative per group yields a
//! small subclass that covers the original. Learning then runs over the
//! representatives and the winner maps back to its base index.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::BanditEnv;
use crate::instance::{HypothesisClass, Instance, Label};
use crate::learner::{learn_with_class, LearnError, LearnParams, RunReport};
use crate::scalar::Real;

/// A pattern-grouped discretization of a base class.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverResult {
    /// Base-class index of each group's representative (its lowest
    /// member), in first-seen order.
    pub representatives: Vec<usize>,
    /// Realized label pattern on the sample → slot in `representatives`.
    pub pattern_map: BTreeMap<Vec<Label>, usize>,
    /// The example sample the patterns were taken on.
    pub sample: Vec<usize>,
}

impl CoverResult {
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Slot of the representative covering hypothesis `h`.
    pub fn representative_slot(&self, class: &HypothesisClass, h: usize) -> usize {
        let pattern: Vec<Label> = self.sample.iter().map(|&x| class.label(h, x)).collect();
        *self
            .pattern_map
            .get(&pattern)
            .expect("every base hypothesis realizes one of the stored patterns")
    }
}

/// Cover summary carried in run reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverSummary {
    pub sample_rounds: u64,
    pub cover_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

/// Unlabeled sample size `ceil(c_s·(d_N·ln(K)·ln(1/ε) + ln(1/δ))/ε)`;
/// `c_s` calibrates the analysis's unspecified constant.
pub fn cover_sample_size(
    d_n: u32,
    k: u32,
    eps: f64,
    delta: f64,
    c_s: f64,
) -> Result<u64, LearnError> {
    if d_n == 0 {
        return Err(LearnError::InvalidParameter {
            name: "d_n",
            message: "dimension must be at least 1".into(),
        });
    }
    if k < 2 {
        return Err(LearnError::InvalidParameter {
            name: "k",
            message: "label count must be at least 2".into(),
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
    if !(c_s > 0.0) {
        return Err(LearnError::InvalidParameter {
            name: "c_s",
            message: format!("must be positive, got {c_s}"),
        });
    }
    let inner = f64::from(d_n) * f64::from(k).ln() * (1.0 / eps).ln() + (1.0 / delta).ln();
    Ok((c_s * inner / eps).ceil() as u64)
}

/// Group the class by label pattern on `sample`; the lowest index in a
/// group is its representative.
pub fn build_cover(
    class: &HypothesisClass,
    sample: &[usize],
) -> Result<CoverResult, LearnError> {
    if sample.is_empty() {
        return Err(LearnError::InvalidParameter {
            name: "sample",
            message: "pattern sample must be nonempty".into(),
        });
    }
    for &x in sample {
        assert!(x < class.num_examples(), "sample example {x} out of range");
    }
    let mut pattern_map: BTreeMap<Vec<Label>, usize> = BTreeMap::new();
    let mut representatives = Vec::new();
    for h in 0..class.num_hypotheses() {
        let pattern: Vec<Label> = sample.iter().map(|&x| class.label(h, x)).collect();
        pattern_map.entry(pattern).or_insert_with(|| {
            representatives.push(h);
            representatives.len() - 1
        });
    }
    Ok(CoverResult { representatives, pattern_map, sample: sample.to_vec() })
}

/// Exact cover radius: the largest disagreement mass, under the
/// instance's example marginal, between a base hypothesis and its
/// representative.
pub fn cover_radius<F: Real>(
    instance: &Instance<F>,
    class: &HypothesisClass,
    cover: &CoverResult,
) -> F {
    let mut marginal = vec![F::zero(); class.num_examples()];
    for point in &instance.support {
        marginal[point.example] += point.probability;
    }
    let mut worst = F::zero();
    for h in 0..class.num_hypotheses() {
        let rep = cover.representatives[cover.representative_slot(class, h)];
        let mut disagreement = F::zero();
        for (x, &mass) in marginal.iter().enumerate() {
            if class.label(h, x) != class.label(rep, x) {
                disagreement += mass;
            }
        }
        if disagreement > worst {
            worst = disagreement;
        }
    }
    worst
}

/// `Σ_{i=0}^{d_N} C(s, i)·C(K, 2)^i`: the pattern-count bound.
pub fn pattern_count_bound(d_n: u32, s: u64, k: u32) -> f64 {
    let pairs = f64::from(k) * f64::from(k - 1) / 2.0;
    let mut total = 0.0;
    let mut binom = 1.0;
    let mut pair_power = 1.0;
    for i in 0..=u64::from(d_n) {
        if i > 0 {
            if i > s {
                break;
            }
            binom *= (s - i + 1) as f64 / i as f64;
            pair_power *= pairs;
        }
        total += binom * pair_power;
    }
    total
}

/// `(e·s/d_N)^{d_N} · K^{2·d_N}`: the closed-form relaxation of the
/// pattern-count bound.
pub fn natarajan_size_bound(d_n: u32, s: u64, k: u32) -> f64 {
    (std::f64::consts::E * s as f64 / f64::from(d_n)).powi(d_n as i32)
        * f64::from(k).powi(2 * d_n as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverParams {
    /// Calibration constant in the sample-size formula.
    pub c_s: f64,
    /// Dimension used for sizing; defaults to `ceil(log2 N)`, which
    /// bounds the dimension of any finite class.
    pub d_n: Option<u32>,
}

impl Default for CoverParams {
    fn default() -> Self {
        Self { c_s: 8.0, d_n: None }
    }
}

/// Draw an unlabeled sample (closing each round with an arbitrary
/// prediction), build the cover, learn over the representatives at
/// `(ε/2, δ/2)`, and return the winner's base index.
pub fn learn_via_cover<F: Real>(
    env: &mut BanditEnv<F>,
    params: &LearnParams,
    cover_params: &CoverParams,
) -> Result<(usize, RunReport), LearnError> {
    learn_via_cover_detailed(env, params, cover_params)
        .map(|(chosen, report, _)| (chosen, report))
}

/// [`learn_via_cover`], additionally returning the cover itself so a
/// harness holding the instance can compute diagnostics such as the
/// exact cover radius.
pub fn learn_via_cover_detailed<F: Real>(
    env: &mut BanditEnv<F>,
    params: &LearnParams,
    cover_params: &CoverParams,
) -> Result<(usize, RunReport, CoverResult), LearnError> {
    let start = Instant::now();
    let class = env.class().clone();
    let n = class.num_hypotheses();
    let k = env.num_labels();
    let d_n = cover_params
        .d_n
        .unwrap_or_else(|| ((n as f64).log2().ceil() as u32).max(1));
    let s = cover_sample_size(d_n, k, params.eps, params.delta, cover_params.c_s)?;
    if u128::from(s) > u128::from(params.sample_cap) {
        return Err(LearnError::SampleScaleExceeded {
            required: u128::from(s),
            cap: params.sample_cap,
        });
    }

    let meter_start = env.samples_drawn();
    let mut sample = Vec::with_capacity(s as usize);
    for _ in 0..s {
        let x = env.open_round()?;
        env.predict(Label(0))?;
        sample.push(x);
    }
    let cover = build_cover(&class, &sample)?;
    let restricted = class.restrict(&cover.representatives);

    let inner_params = LearnParams {
        eps: params.eps / 2.0,
        delta: params.delta / 2.0,
        ..*params
    };
    let (inner_choice, mut report) = learn_with_class(env, &restricted, &inner_params)?;
    let chosen = cover.representatives[inner_choice];

    report.chosen = chosen;
    report.config.eps = params.eps;
    report.config.delta = params.delta;
    report.config.n = n;
    report.total_env_samples = env.samples_drawn() - meter_start;
    report.cover = Some(CoverSummary {
        sample_rounds: s,
        cover_size: cover.representatives.len(),
        radius: None,
    });
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((chosen, report, cover))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{make_planted_instance, SupportPoint};
    use crate::reference::excess_loss;

    #[test]
    fn sample_size_pin_and_scaling() {
        let s = cover_sample_size(1, 2, 0.25, 0.1, 8.0).unwrap();
        assert_eq!(s, 105);
        // Halving eps more than doubles the sample (extra ln(1/eps)).
        let tighter = cover_sample_size(1, 2, 0.125, 0.1, 8.0).unwrap();
        assert!(tighter > 2 * s);
    }

    #[test]
    fn pattern_count_bound_small_case() {
        // d_N=1, s=3, K=2: 1 + C(3,1)·C(2,2 choose) = 1 + 3·1 = 4.
        assert_eq!(pattern_count_bound(1, 3, 2), 4.0);
    }

    fn constant_function_class(k: u32, m: usize) -> HypothesisClass {
        HypothesisClass::from_rows(
            (0..k).map(|c| vec![Label(c); m]).collect(),
        )
        .unwrap()
    }

    fn uniform_instance(class: HypothesisClass, k: u32) -> Instance<f64> {
        let m = class.num_examples();
        let p = 1.0 / m as f64;
        let support = (0..m)
            .map(|x| SupportPoint { example: x, label: Label(0), probability: p })
            .collect();
        Instance { num_labels: k, class, support }
    }

    #[test]
    fn constant_functions_are_their_own_representatives() {
        let k = 4;
        let class = constant_function_class(k, 5);
        let cover = build_cover(&class, &[2]).unwrap();
        assert_eq!(cover.len(), k as usize);
        let inst = uniform_instance(class.clone(), k);
        assert_eq!(cover_radius(&inst, &class, &cover), 0.0);
    }

    #[test]
    fn merged_duplicates_pay_the_off_sample_mass() {
        // Two hypotheses agreeing on example 0 (mass 0.9) and differing
        // on example 1 (mass 0.1); sampling only example 0 merges them.
        let class = HypothesisClass::from_rows(vec![
            vec![Label(0), Label(0)],
            vec![Label(0), Label(1)],
        ])
        .unwrap();
        let inst = Instance {
            num_labels: 2,
            class: class.clone(),
            support: vec![
                SupportPoint { example: 0, label: Label(0), probability: 0.9_f64 },
                SupportPoint { example: 1, label: Label(0), probability: 0.1 },
            ],
        };
        let cover = build_cover(&class, &[0]).unwrap();
        assert_eq!(cover.representatives, vec![0]);
        assert!((cover_radius(&inst, &class, &cover) - 0.1).abs() < 1e-15);
        // Sampling the full support separates them again.
        let full = build_cover(&class, &[0, 1]).unwrap();
        assert_eq!(full.len(), 2);
        assert_eq!(cover_radius(&inst, &class, &full), 0.0);
    }

    #[test]
    fn group_sizes_partition_the_class() {
        let inst = make_planted_instance::<f64>(6, 3, 50, 0.2, 40).unwrap();
        let cover = build_cover(&inst.class, &[0, 2, 4]).unwrap();
        assert!(cover.len() <= 50);
        let mut counts = vec![0usize; cover.len()];
        for h in 0..50 {
            counts[cover.representative_slot(&inst.class, h)] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 50);
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn radius_never_grows_with_more_sample_points() {
        let inst = make_planted_instance::<f64>(8, 3, 60, 0.3, 13).unwrap();
        let points: Vec<usize> = vec![3, 0, 5, 1, 7, 2, 4, 6];
        let mut previous = f64::INFINITY;
        for take in 1..=points.len() {
            let cover = build_cover(&inst.class, &points[..take]).unwrap();
            let radius = cover_radius(&inst, &inst.class, &cover);
            assert!(radius <= previous + 1e-15);
            previous = radius;
        }
        assert_eq!(previous, 0.0, "full-support sample must have radius zero");
    }

    #[test]
    fn size_bound_holds_for_a_constructed_low_dimension_family() {
        // Constant functions have dimension 1: the bound must dominate
        // the realized pattern count for any sample size.
        let k = 3;
        let class = constant_function_class(k, 6);
        for s in 1..=6u64 {
            let sample: Vec<usize> = (0..s as usize).collect();
            let cover = build_cover(&class, &sample).unwrap();
            assert!((cover.len() as f64) <= pattern_count_bound(1, s, k));
            assert!((cover.len() as f64) <= natarajan_size_bound(1, s, k));
        }
    }

    #[test]
    fn cover_of_duplicated_class_is_the_dedup() {
        let base = make_planted_instance::<f64>(4, 3, 10, 0.1, 77).unwrap();
        // Duplicate every row three times.
        let rows: Vec<Vec<Label>> = (0..30).map(|i| base.class.row(i / 3).to_vec()).collect();
        let class = HypothesisClass::from_rows(rows).unwrap();
        let cover = build_cover(&class, &[0, 1, 2, 3]).unwrap();
        // Representatives are the first occurrence of each distinct row.
        for (slot, &rep) in cover.representatives.iter().enumerate() {
            assert_eq!(rep % 3, 0, "slot {slot} picked a duplicate, not the first copy");
        }
        let restricted = class.restrict(&cover.representatives);
        for h in 0..restricted.num_hypotheses() {
            assert_eq!(restricted.row(h), class.row(cover.representatives[h]));
        }
    }

    #[test]
    fn learn_via_cover_recovers_a_good_hypothesis_and_accounts_samples() {
        let base = make_planted_instance::<f64>(5, 3, 12, 0.0, 50).unwrap();
        // Blow the class up with copies so the cover has work to do.
        let rows: Vec<Vec<Label>> = (0..120).map(|i| base.class.row(i / 10).to_vec()).collect();
        let class = HypothesisClass::from_rows(rows).unwrap();
        let inst = Instance { num_labels: 3, class, support: base.support.clone() };
        let mut env = BanditEnv::new(inst.clone(), 50);
        let params = LearnParams::practical(0.2, 0.2, 50);
        let (chosen, report) = learn_via_cover(&mut env, &params, &CoverParams::default()).unwrap();
        let summary = report.cover.unwrap();
        assert!(summary.cover_size <= 12, "cover size {}", summary.cover_size);
        assert_eq!(
            report.total_env_samples,
            summary.sample_rounds + report.phase1_trials + report.phase2_rounds
        );
        assert_eq!(report.total_env_samples, env.samples_drawn());
        assert!(excess_loss(&inst, chosen) <= 0.2);
    }
}
