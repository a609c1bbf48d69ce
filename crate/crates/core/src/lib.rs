//! Zero-delay quantization laboratory for partially observed Markov
//! sources.
//!
//! The crate has two branches. The finite branch carries exact nonlinear
//! filtering ([`filter`]), extensional policy classes with exact evaluation
//! ([`policy`]), exhaustive class oracles ([`oracle`]), backward dynamic
//! programming over meta-beliefs ([`beliefdp`]), and two-encoder team
//! experiments including the signaling counterexample ([`multiterminal`]).
//! The linear-Gaussian branch ([`lqg`]) runs the Kalman-filter-then-quantize
//! pipeline and checks the distortion decomposition it relies on.
//!
//! Models are immutable after load and every operation is a pure function
//! of its inputs, so callers may fan work out across threads; all searches
//! and simulations reduce in a fixed order and stay deterministic.

pub mod beliefdp;
pub mod error;
pub mod filter;
pub mod instances;
pub mod lqg;
pub mod model;
pub mod multiterminal;
pub mod oracle;
pub mod policy;

pub use error::{Error, Result, Violation};
pub use filter::{Belief, BeliefTable, BeliefTree, MetaBelief};
pub use model::{CostSpec, FiniteModel, LinearGaussModel, Model};
pub use oracle::{SearchOptions, SearchReport};
pub use policy::{Decoder, DecoderPolicy, EncoderPolicy, FullHistoryPolicy, Quantizer};
