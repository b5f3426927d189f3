//! Translation-memory edit engine.
//!
//! The pipeline: fuzzy-match retrieval over a translation memory
//! ([`retrieval`]), coverage-maximizing N-way alignment of the retrieved
//! targets against a reference ([`alignment`]), derivation and replay of the
//! four-stage edit script ([`edits`]), imitation-learning state generation
//! ([`rollin`]), placeholder realignment by continuous optimization
//! ([`realign`]), decoding against a pluggable policy ([`decode`]) and
//! provenance-aware evaluation ([`metrics`]).

pub mod alignment;
pub mod corpus;
pub mod decode;
pub mod edits;
pub mod metrics;
pub mod realign;
pub mod retrieval;
pub mod rng;
pub mod rollin;
pub mod seq;
pub mod vocab;

pub use rng::Rng;
pub use seq::{SeqBuilder, TokenId, TokenSeq, BOS, EOS, PAD, PLH, UNK};
pub use vocab::Vocab;

/// Default maximum number of placeholders inserted in one gap.
pub const K_MAX: usize = 64;
