//! Simulation core for a 1-of-n optimistic bridge between a proof-of-work
//! source chain and a secondary chain.

pub mod chain;
pub mod digest;
pub mod dispute;
pub mod econ;
pub mod harness;
pub mod ids;
pub mod lightclient;
pub mod protocol;
pub mod stopwatch;
pub mod txgraph;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    struct Overview;
    #[doc = include_str!("../../../book/src/chains.md")]
    struct Chains;
    #[doc = include_str!("../../../book/src/lightclient.md")]
    struct LightClient;
    #[doc = include_str!("../../../book/src/txgraph.md")]
    struct TxGraph;
    #[doc = include_str!("../../../book/src/dispute.md")]
    struct Dispute;
    #[doc = include_str!("../../../book/src/stopwatch.md")]
    struct StopWatch;
    #[doc = include_str!("../../../book/src/protocol.md")]
    struct Protocol;
    #[doc = include_str!("../../../book/src/economics.md")]
    struct Economics;
    #[doc = include_str!("../../../book/src/harness.md")]
    struct Harness;
}
