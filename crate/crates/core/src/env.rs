//! The bandit interaction protocol.
//!
//! The environment draws a labeled example, reveals the example, accepts
//! one predicted label and answers with the correctness bit only. The
//! hidden label never crosses the interface: the `Debug` output is
//! redacted and the optional transcript records `(x, prediction,
//! correct)` rows. The environment is also the sole sample meter, so
//! reported sample complexity is exactly its round count.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instance::{HypothesisClass, Instance, Label};
use crate::rng::{stream_rng, RngStream};
use crate::scalar::Real;

/// The correctness bit returned after each prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feedback {
    pub correct: bool,
}

/// One closed round as seen from the learner's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranscriptRow {
    pub example: usize,
    pub predicted: Label,
    pub correct: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("protocol violation: a round is already open")]
    RoundAlreadyOpen,
    #[error("protocol violation: no round is open")]
    NoOpenRound,
    #[error("predicted label {0} out of range for K={1}")]
    InvalidLabel(u32, u32),
}

pub struct BanditEnv<F: Real> {
    instance: Instance<F>,
    rng: ChaCha8Rng,
    samples_drawn: u64,
    pending: Option<Sample>,
    transcript: Option<Vec<TranscriptRow>>,
}

type Sample = (usize, Label);

impl<F: Real> BanditEnv<F> {
    /// Build an environment over a validated instance. Draws come from
    /// the environment's own rng stream for `seed`.
    pub fn new(instance: Instance<F>, seed: u64) -> Self {
        Self {
            instance,
            rng: stream_rng(seed, RngStream::Env),
            samples_drawn: 0,
            pending: None,
            transcript: None,
        }
    }

    /// The hypothesis class is public knowledge.
    pub fn class(&self) -> &HypothesisClass {
        &self.instance.class
    }

    pub fn num_labels(&self) -> u32 {
        self.instance.num_labels
    }

    /// Draw a fresh labeled example, hide it, and reveal the example.
    /// Counts one sample.
    pub fn open_round(&mut self) -> Result<usize, EnvError> {
        if self.pending.is_some() {
            return Err(EnvError::RoundAlreadyOpen);
        }
        let u = F::from_f64(self.rng.gen::<f64>());
        let mut acc = F::zero();
        let mut drawn = *self.instance.support.last().expect("validated support is nonempty");
        for point in &self.instance.support {
            acc += point.probability;
            if u < acc {
                drawn = *point;
                break;
            }
        }
        self.samples_drawn += 1;
        self.pending = Some((drawn.example, drawn.label));
        Ok(drawn.example)
    }

    /// Close the open round with a prediction; only the correctness bit
    /// comes back.
    pub fn predict(&mut self, predicted: Label) -> Result<Feedback, EnvError> {
        if predicted.0 >= self.instance.num_labels {
            return Err(EnvError::InvalidLabel(predicted.0, self.instance.num_labels));
        }
        let (example, hidden) = self.pending.take().ok_or(EnvError::NoOpenRound)?;
        let correct = predicted == hidden;
        if let Some(rows) = self.transcript.as_mut() {
            rows.push(TranscriptRow { example, predicted, correct });
        }
        Ok(Feedback { correct })
    }

    /// Total rounds opened so far: the sample meter.
    pub fn samples_drawn(&self) -> u64 {
        self.samples_drawn
    }

    pub fn round_open(&self) -> bool {
        self.pending.is_some()
    }

    /// Start or stop recording `(x, prediction, correct)` rows.
    pub fn record_transcript(&mut self, on: bool) {
        self.transcript = if on { Some(Vec::new()) } else { None };
    }

    pub fn transcript(&self) -> &[TranscriptRow] {
        self.transcript.as_deref().unwrap_or(&[])
    }
}

impl<F: Real> fmt::Debug for BanditEnv<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // The hidden pair must not leak through debug output.
        f.debug_struct("BanditEnv")
            .field("samples_drawn", &self.samples_drawn)
            .field("round_open", &self.pending.is_some())
            .finish()
    }
}
