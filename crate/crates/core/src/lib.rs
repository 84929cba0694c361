//! Desk-scale laboratory for leakage-abuse attacks against dynamic
//! searchable symmetric encryption (DSSE) under intermittent observation.
//!
//! The crate simulates a client operating a dynamic encrypted database
//! (daily additions, deletions, trend-driven keyword queries) and an
//! attacker that observes the query leakage only during a limited set of
//! online rounds. On top of the simulated leakage it implements:
//!
//! * search-pattern inference — grouping queries within a round and
//!   matching the groups across rounds via co-occurrence matrices
//!   ([`search_pattern`]),
//! * query recovery — frequency/volume/co-occurrence attacks that map
//!   inferred groups back to keywords ([`recovery`]),
//! * countermeasures (size padding, index obfuscation) and their
//!   attacker-side adaptations ([`sim`]),
//! * evaluation metrics (adjusted rand index, recovery accuracy)
//!   ([`metrics`]).
//!
//! Everything is deterministic under an explicit seed; no real
//! cryptography is involved, only the leakage a DSSE deployment would
//! expose.

pub mod assignment;
pub mod corpus;
pub mod linalg;
pub mod metrics;
pub mod recovery;
pub mod search_pattern;
pub mod sim;

mod error;

pub use error::{Error, Result};
