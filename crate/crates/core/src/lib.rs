//! Agnostic PAC learning of multiclass classifiers from bandit feedback.
//!
//! A simulated environment draws labeled examples from an explicit
//! finite-support distribution, reveals the example, and answers each
//! predicted label with a correctness bit only. The learner collects
//! correctly-guessed examples, fits a low-variance exploration
//! distribution over the hypothesis class by minimizing a log-barrier
//! objective with a variance-reduced stochastic Frank-Wolfe method
//! driven through a weighted-ERM oracle, then estimates every
//! hypothesis's reward with importance weights and returns the
//! weighted-ERM winner.
//!
//! The crate splits into:
//!
//! - [`instance`], [`env`]: problem instances and the interaction
//!   protocol (the environment is the sample meter);
//! - [`oracle`], [`logbarrier`], [`frank_wolfe`]: the weighted-ERM
//!   oracle, the objective, and the optimizer;
//! - [`learner`], [`cover`]: the two-phase learner, the uniform
//!   baseline, the constants calculator, and the pattern-cover
//!   reduction for large classes;
//! - [`reference`], [`verify`]: exact enumeration oracles and the
//!   executable invariant suite, used by tests and the CLI.
//!
//! Core numeric types are generic over the [`Real`] scalar; the `*64`
//! aliases below fix `f64`.

pub mod cover;
pub mod env;
pub mod frank_wolfe;
pub mod instance;
pub mod learner;
pub mod logbarrier;
pub mod oracle;
pub mod reference;
pub mod rng;
pub mod scalar;
pub mod verify;

pub use scalar::Real;

pub type Instance64 = instance::Instance<f64>;
pub type SupportPoint64 = instance::SupportPoint<f64>;
pub type BanditEnv64 = env::BanditEnv<f64>;
pub type SparseSimplex64 = logbarrier::SparseSimplex<f64>;
pub type GammaConfig64 = logbarrier::GammaConfig<f64>;
pub type WeightedExample64 = oracle::WeightedExample<f64>;
pub type GradientLedger64 = oracle::GradientLedger<f64>;
pub type FwSchedule64 = frank_wolfe::FwSchedule<f64>;
pub type DenseSimplex64 = reference::DenseSimplex<f64>;
