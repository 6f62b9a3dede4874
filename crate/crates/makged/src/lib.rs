//! Multi-agent knowledge-graph error detection.
//!
//! The pipeline classifies candidate triples of a knowledge graph as correct
//! or incorrect:
//!
//! 1. [`kg`] loads and indexes the graph from tab-separated triple files.
//! 2. [`subgraph`] extracts the four directional one-hop subgraphs around a
//!    candidate triple (head/tail x forward/backward).
//! 3. [`dataset`] injects similarity-guided corruptions into a clean graph to
//!    build labeled train/valid/test splits.
//! 4. [`encoder`] embeds subgraphs with a three-layer graph convolutional
//!    network, fuses them with text embeddings, and scores candidates.
//! 5. [`agents`] and [`protocol`] run the four-agent debate: independent
//!    analysis, up to three discussion rounds, majority vote, and a
//!    summarizer tie-break.
//! 6. [`eval`] scores decisions with macro-averaged metrics.
//!
//! All randomized steps are seeded and reproducible; agent backends are
//! pluggable (scripted, replay fixtures, or a remote chat endpoint).

pub mod agents;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod eval;
pub mod kg;
pub mod protocol;
mod seeding;
pub mod subgraph;
pub mod synthetic;

pub use dataset::Label;
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triple};
pub use subgraph::{DirectionalSubgraph, SubgraphKind};
