//! Search for faster variants of dataflow programs.
//!
//! A program is a list of statements over named entities ([`ir`]). Three
//! kinds of alteration ([`actions`]) rewrite it: persisting an entity,
//! hash-partitioning it, and turning a join with a small side into a
//! broadcast join. Monte Carlo tree search ([`search`]) explores sequences
//! of alterations, scoring each variant with an evaluator ([`cost`]). A small
//! convolutional classifier ([`model`]) over pairwise entity relations
//! ([`features`]) learns which variants tend to be fast, and can steer later
//! searches on other programs.

pub mod actions;
pub mod bench;
pub mod cost;
pub mod features;
pub mod ir;
pub mod model;
pub mod pipeline;
pub mod search;

pub use actions::{apply, legal_actions, satisfies, Action, TargetSpec};
pub use bench::{make_benchmark, BenchmarkId};
pub use cost::{evaluate, CostParams, Evaluator, SimEvaluator};
pub use ir::{parse_program, serialize_program, EntityId, Program, Statement};
pub use search::{run_search, Prior, SearchConfig, SearchMode, SearchReport};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/programs.md")]
    mod programs {}
    #[doc = include_str!("../../../book/src/cost-model.md")]
    mod cost_model {}
    #[doc = include_str!("../../../book/src/search.md")]
    mod search {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/prior-model.md")]
    mod prior_model {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
