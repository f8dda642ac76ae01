//! Temporally smoothed word embeddings over time-sliced corpora, and the
//! geometric measures computed in those spaces: team background and
//! perspective diversity, knowledge integration and speculation, concept
//! in-flow around focal points, and innovator adoption features.

pub mod adoption;
pub mod cooccurrence;
pub mod corpus;
pub mod dynembed;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod par;
pub mod pipeline;
pub mod sparse;
pub mod stats;
pub mod taxonomy;

pub use error::{Error, Result};
