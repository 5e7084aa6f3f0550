//! Minimal counter assignment for flow-table traffic measurement.
//!
//! Flows and their matchfield values form a formal context; its concept
//! lattice locates, for a set of queries, the coarsest partition of flows such
//! that every query's answer is a union of parts. One counter per part is
//! enough to answer every query exactly.

pub mod benchgen;
pub mod bitset;
pub mod context;
pub mod engine;
pub mod error;
pub mod lattice;
pub mod measurement;
pub mod oracle;

#[cfg(test)]
mod testdata;

pub use bitset::BitSet;
pub use context::{FlowEntry, FormalContext, MatchfieldValue};
pub use engine::{CounterMode, CounterStore, CounterValue, PacketEvent};
pub use error::{Error, Result};
pub use lattice::{Concept, ConceptId, ConceptLattice, FlowAddReport};
pub use measurement::{MeasurementSupport, Query, QueryVector};
