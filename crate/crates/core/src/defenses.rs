//! Mitigations: padding fast (all-hit) queries by a constant delay,
//! freezing the vocabulary, and replacing sensitive training values with
//! generated dummies.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{timing_attack, Truth};
use crate::corpus::{replace_with_dummy, AnnotatedDocument};
use crate::error::{Error, Result};
use crate::metrics::trimmed_mean;
use crate::nermodel::{Pipeline, QueryResult};
use crate::secrets::SecretKind;
use crate::vocab::{CostMode, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayPolicy {
    /// Cost units in simulated mode, nanoseconds on the wall clock.
    pub delta: f64,
    pub trim_fraction: f64,
}

impl Default for DelayPolicy {
    fn default() -> Self {
        DelayPolicy {
            delta: 0.0,
            trim_fraction: 0.10,
        }
    }
}

impl DelayPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("delay {} must be finite and >= 0", self.delta)));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(Error::InvalidConfig(format!(
                "trim fraction {} outside [0, 0.5)",
                self.trim_fraction
            )));
        }
        Ok(())
    }
}

/// Adds `delta` to every query whose vocabulary lookups all hit.
#[derive(Clone, Debug)]
pub struct ConstantDelay<P> {
    inner: P,
    policy: DelayPolicy,
}

impl<P: Pipeline> ConstantDelay<P> {
    pub fn new(inner: P, policy: DelayPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(ConstantDelay { inner, policy })
    }

    pub fn policy(&self) -> &DelayPolicy {
        &self.policy
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

fn spin_for(nanos: f64) {
    let deadline = Instant::now() + Duration::from_nanos(nanos as u64);
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}

impl<P: Pipeline> Pipeline for ConstantDelay<P> {
    fn predict(&mut self, text: &str) -> QueryResult {
        let mut r = self.inner.predict(text);
        if r.misses == 0 {
            match self.inner.vocabulary().cost_model().mode {
                CostMode::Simulated => r.cost += self.policy.delta,
                CostMode::WallClock => spin_for(self.policy.delta),
            }
        }
        r
    }

    fn log_score_span(&mut self, text: &str, start: usize, end: usize, label: &str) -> Result<f64> {
        self.inner.log_score_span(text, start, end, label)
    }

    fn freeze_vocabulary(&mut self) {
        self.inner.freeze_vocabulary();
    }

    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }
}

/// A pipeline whose vocabulary never grows.
#[derive(Clone, Debug)]
pub struct Frozen<P> {
    inner: P,
}

impl<P: Pipeline> Frozen<P> {
    pub fn new(mut inner: P) -> Self {
        inner.freeze_vocabulary();
        Frozen { inner }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: Pipeline> Pipeline for Frozen<P> {
    fn predict(&mut self, text: &str) -> QueryResult {
        self.inner.predict(text)
    }

    fn log_score_span(&mut self, text: &str, start: usize, end: usize, label: &str) -> Result<f64> {
        self.inner.log_score_span(text, start, end, label)
    }

    fn freeze_vocabulary(&mut self) {}

    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }
}

/// `trimmed_mean(nonmember) - trimmed_mean(member)`, floored at zero.
pub fn delta_from_durations(members: &[f64], nonmembers: &[f64], trim_fraction: f64) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::EmptyInput("calibration durations"));
    }
    let d = trimmed_mean(nonmembers, trim_fraction)? - trimmed_mean(members, trim_fraction)?;
    Ok(d.max(0.0))
}

/// Times one pass over the word lists and derives the padding delay.
/// The non-member words are inserted into the vocabulary as a side effect,
/// so they should not be reused for evaluation.
pub fn calibrate_delta<P: Pipeline + ?Sized>(
    model: &mut P,
    members: &[String],
    nonmembers: &[String],
    trim_fraction: f64,
    mode: CostMode,
) -> Result<f64> {
    let run = timing_attack(model, members, nonmembers, 1, mode)?;
    delta_from_durations(
        &run.durations(Truth::Member, 1),
        &run.durations(Truth::NonMember, 1),
        trim_fraction,
    )
}

/// Replaces every span of each label with generated values of the
/// matching kind.
pub fn defend_with_dummy<R: Rng>(
    corpus: &[AnnotatedDocument],
    labels: &[String],
    rng: &mut R,
) -> Result<Vec<AnnotatedDocument>> {
    let mut out = corpus.to_vec();
    for label in labels {
        let kind = SecretKind::for_label(label).ok_or_else(|| Error::UnknownLabel(label.clone()))?;
        out = replace_with_dummy(&out, label, |r: &mut R| kind.generate(r), rng)?;
    }
    Ok(out)
}
