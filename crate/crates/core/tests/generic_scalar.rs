//! The numeric core is generic over the scalar: the full pipeline must
//! run in `f32` and agree with `f64` wherever single precision can.

use banditpac::env::BanditEnv;
use banditpac::instance::make_planted_instance;
use banditpac::learner::{learn, LearnParams};
use banditpac::logbarrier::{phi, w_prob_gamma, GammaConfig, SparseSimplex};
use banditpac::reference::{exact_minimize_phi, exact_phi, excess_loss};
use banditpac::scalar::Real;

fn run_learner<F: Real>(seed: u64) -> (usize, f64) {
    let instance = make_planted_instance::<F>(4, 3, 20, 0.1, 77).unwrap();
    let mut env = BanditEnv::new(instance.clone(), seed);
    let params = LearnParams::practical(0.2, 0.2, seed);
    let (chosen, _) = learn(&mut env, &params).unwrap();
    (chosen, excess_loss(&instance, chosen).as_f64())
}

#[test]
fn learner_runs_in_both_precisions_with_identical_draws() {
    let (chosen32, excess32) = run_learner::<f32>(5);
    let (chosen64, excess64) = run_learner::<f64>(5);
    // All randomness is drawn as f64 and converted, so the trajectories
    // coincide on an instance this easy.
    assert_eq!(chosen32, chosen64);
    assert!(excess32 <= 0.2 && excess64 <= 0.2);
}

#[test]
fn objective_kernels_agree_across_precisions() {
    let inst64 = make_planted_instance::<f64>(3, 4, 10, 0.25, 11).unwrap();
    let inst32 = make_planted_instance::<f32>(3, 4, 10, 0.25, 11).unwrap();
    let cfg64 = GammaConfig::new(0.5_f64, 4).unwrap();
    let cfg32 = GammaConfig::new(0.5_f32, 4).unwrap();
    let p64 = SparseSimplex::from_weights([(0, 0.25_f64), (3, 0.75)]).unwrap();
    let p32 = SparseSimplex::from_weights([(0, 0.25_f32), (3, 0.75)]).unwrap();
    for point in &inst64.support {
        let w64 = w_prob_gamma(&p64, &inst64.class, point.example, point.label, &cfg64);
        let w32 = w_prob_gamma(&p32, &inst32.class, point.example, point.label, &cfg32);
        assert!((w64 - f64::from(w32)).abs() < 1e-6);
        let phi64 = phi(&p64, &inst64.class, point.example, point.label, &cfg64);
        let phi32 = phi(&p32, &inst32.class, point.example, point.label, &cfg32);
        assert!((phi64 - f64::from(phi32)).abs() < 1e-5);
    }
}

#[test]
fn reference_minimizer_works_in_f32() {
    let instance = make_planted_instance::<f32>(3, 3, 8, 0.2, 4).unwrap();
    let cfg = GammaConfig::new(0.5_f32, 3).unwrap();
    let out = exact_minimize_phi(&instance, &cfg, 1e-4_f32).unwrap();
    assert!(out.gap <= 1e-4);
    let value = exact_phi(&instance, out.distribution.weights(), &cfg).unwrap();
    assert!((value - out.objective).abs() < 1e-5);
}
