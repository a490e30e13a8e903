//! Membership-inference attacks on a sub-word NER pipeline: the tagger, its
//! interning vocabulary, secret generators, attacks, and defenses.

pub mod attacks;
pub mod corpus;
pub mod defenses;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nermodel;
pub mod secrets;
pub mod subword;
pub mod vocab;

pub use error::{Error, Result};
