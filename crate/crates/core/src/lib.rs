//! Deterministic simulator of a cloud-edge-client AI system: request
//! planning through a pluggable advisor, partition-point offloading,
//! task-oriented feature coding, and advisor-tuned federated averaging.

pub mod advisor;
pub mod cli;
pub mod codec;
pub mod fedsim;
pub mod offload;
pub mod planner;
pub mod registry;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/offloading.md")]
    mod offloading {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/federated.md")]
    mod federated {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
