//! A laboratory for compositional question answering over text circuits.
//!
//! Stories in a restricted English fragment are parsed into typed circuit
//! diagrams ([`ir`], [`grammar`]), interpreted either as parametrized
//! quantum circuits ([`quantum`]) or direct-sum neural networks
//! ([`neural`]), and trained to answer `Is X in the Y?` questions by
//! assertion overlap ([`train`]). Seeded generators build the four
//! compositional-generalisation datasets ([`dataset`]); [`metrics`]
//! measures accuracies, compositionality factors/scores and
//! per-stratum curves; [`fragments`] compares learnt components and
//! diagram fragments for interpretability.

pub mod backend;
pub mod dataset;
pub mod fragments;
pub mod grammar;
pub mod ir;
pub mod metrics;
pub mod neural;
pub mod params;
pub mod quantum;
pub mod train;

pub use backend::{decide, Answer, BackendConfig, CompiledExample, SemanticBackend};
pub use grammar::{Question, SentenceAst, Story, Vocabulary};
pub use ir::{BoxNode, Diagram, FrameNode, IrError, Node, WireType};
pub use params::{ParamKey, ParameterStore};
