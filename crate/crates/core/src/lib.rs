//! Exponential ergodicity analysis for stochastic reaction networks.
//!
//! The crate covers the full pipeline: parsing networks, building truncated
//! Markov chains, solving for stationary laws, estimating spectral gaps,
//! certifying gap lower bounds through path families, and comparing bounds
//! against transient and simulated behaviour.

pub mod ctmc;
pub mod mixing;
pub mod network;
pub mod path;
pub mod samples;
pub mod spectral;

pub use ctmc::{State, StateBox, StateSpace, TruncatedChain};
pub use network::{ReactionNetwork, Theta};
