//! Bounded-memory similarity search over endless data streams.
//!
//! The index hashes sparse non-negative vectors into `L` tables of `k`-bit
//! sketches (random hyperplanes, so sketch-bit collisions track angular
//! similarity). Arriving items are inserted into each table with probability
//! equal to their quality, and every tick a retention policy decides which
//! entries survive:
//!
//! * `Threshold` — cap each table, drop the oldest entries,
//! * `Bucket` — cap each bucket, drop the oldest entries per bucket,
//! * `Smooth` — remove a uniform `1-p` fraction of each table per tick, so an
//!   entry survives to age `a` with probability `p^a`.
//!
//! An optional interest stream re-indexes items on demand (`dynapop`), making
//! redundancy track popularity. The [`analysis`] module evaluates the closed
//! forms for retrieval success probability, expected index size, and retained
//! copies; [`eval`] measures recall at a radius against a brute-force oracle.

pub mod analysis;
pub mod corpus;
pub mod dynapop;
pub mod eval;
pub mod lsh;
pub mod seeds;
pub mod snapshot;
pub mod stream;
pub mod synth;
pub mod vector;

mod error;

pub use error::{Error, Result};
