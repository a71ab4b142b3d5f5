//! Adaptive anti-cloaking crawl orchestration.
//!
//! A URL is first fetched with a plain crawler profile. The evidence from that
//! fetch is matched against a store of labelled past crawls, the closest
//! successes and failures are handed to a language model, and its recommended
//! victim profile is mapped onto a concrete catalog entry and egress before the
//! URL is fetched again.

pub mod embedding;
pub mod jsonl;
pub mod records;
pub mod retrieval;
pub mod advisor;
pub mod catalog;
pub mod crawler;
pub mod cloaksim;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/records.md")]
    mod records {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/advice.md")]
    mod advice {}
    #[doc = include_str!("../../../book/src/catalog.md")]
    mod catalog {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
