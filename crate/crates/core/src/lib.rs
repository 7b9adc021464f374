//! Simulated-client assessment of counseling sessions.
//!
//! A client is simulated from a psychological profile extracted from a real
//! session, talks to a therapist (an LLM, a mirror of the original human
//! therapist, or a live human), then fills in five clinical questionnaires
//! from which session outcome, therapeutic alliance and four feeling
//! dimensions are scored.

pub mod files;
pub mod gateway;
pub mod instruments;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod profiles;
pub mod reporting;
pub mod scoring;
pub mod simulation;

pub use instruments::{registry, InstrumentId, ItemRef, Registry, Trait};
pub use model::{Origin, Quality, SessionStore, SessionTranscript, Speaker, Turn};
