//! Deterministic, stream-split randomness.
//!
//! Every component draws from its own counter-based stream of a seeded
//! ChaCha generator. Reordering work inside one component can never
//! perturb the draws of another, and a `(seed, stream)` pair fully
//! determines a draw sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The logical components that consume randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    /// Synthetic instance generation.
    Generator,
    /// The environment's hidden example-label draws.
    Env,
    /// Uniform label guessing in the collection phase.
    LearnerPhase1,
    /// Mixture sampling in the estimation phase.
    LearnerPhase2,
    /// Dataset shuffling inside the stochastic optimizer.
    Optimizer,
}

impl RngStream {
    fn id(self) -> u64 {
        match self {
            RngStream::Generator => 0,
            RngStream::Env => 1,
            RngStream::LearnerPhase1 => 2,
            RngStream::LearnerPhase2 => 3,
            RngStream::Optimizer => 4,
        }
    }
}

/// A generator for the given seed, positioned on the component's stream.
pub fn stream_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
