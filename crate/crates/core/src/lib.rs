//! Discover, classify and score categories of in-session user behavior.
//!
//! The crate is organized as a pipeline:
//!
//! - [`ingest`] parses raw event records and splits each user's stream into
//!   sessions using an inter-event time gap.
//! - [`vectorize`] treats a session as a document and each event as a word,
//!   producing L2-normalized TF-IDF vectors over a filtered vocabulary.
//! - [`discover`] reduces vectors with PCA, clusters them with PAM K-Medoids
//!   and measures cluster quality (silhouette, subsample Jaccard stability).
//! - [`classify`] splits events into stable scoring features and long-tail
//!   features, derives the noise feature and trains a bagged CART forest.
//! - [`modelstore`] and [`score`] freeze every corpus statistic into a
//!   canonical model file and score session batches against it.
//! - [`analytics`] summarizes scored sessions (shares, lengths, transitions,
//!   windowed indices, top-weighted events).
//! - [`synthgen`] generates seeded synthetic logs with planted archetypes.
//! - [`pipeline`] chains every stage for one-shot reproduction.

pub mod analytics;
pub mod classify;
pub mod discover;
pub mod error;
pub mod ingest;
pub mod io;
pub mod linalg;
pub mod modelstore;
pub mod pipeline;
pub mod rng;
pub mod score;
pub mod synthgen;
pub mod vectorize;

pub use error::{Error, Result};
pub use rayon::ThreadPool;

/// A worker pool with `threads` threads (0 = one per core).
pub fn thread_pool(threads: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
