//! Training-free compositional caching for open-vocabulary attribute detection.
//!
//! Given precomputed, unit-norm embeddings for test regions, attribute prompts
//! and a retrieval pool, this crate
//!
//! 1. estimates how plausible each attribute–object pairing is ([`compat`]),
//! 2. fills a cache with `K` retrieved exemplars per attribute, binding each
//!    shot to an object drawn from that estimate ([`cache`]),
//! 3. relabels every exemplar with a soft distribution over all attributes
//!    ([`labels`]),
//! 4. refines zero-shot scores with the cache ([`scoring`]), and
//! 5. measures the result with masked mean average precision ([`eval`]).
//!
//! The `book/` directory at the repository root walks through each step.

pub mod cache;
pub mod compat;
pub mod config;
pub mod container;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod labels;
pub mod matrix;
pub mod pipeline;
pub mod prompts;
pub mod rng;
pub mod scoring;
pub mod vocab;

pub use error::{Error, ErrorClass, Result};
pub use matrix::Matrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/compatibility.md")]
    mod compatibility {}
    #[doc = include_str!("../../../book/src/cache.md")]
    mod cache {}
    #[doc = include_str!("../../../book/src/soft-labels.md")]
    mod soft_labels {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
