//! Directional one-hop subgraphs around a candidate triple.
//!
//! For a target (h, r, t) there are four views:
//!
//! - head forward: triples with h as head, the target itself excluded
//! - head backward: triples with h as tail
//! - tail forward: triples with t as head
//! - tail backward: triples with t as tail, the target itself excluded
//!
//! The target does not have to be a member of the graph; corrupted
//! candidates usually are not, and then the exclusion clauses exclude
//! nothing. Oversized subgraphs are truncated to a cap by a seeded uniform
//! sample so that prompt sizes stay bounded and runs stay reproducible.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeGraph, Triple};
use crate::seeding;

/// The four directional views, one per agent role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgraphKind {
    HeadForward,
    HeadBackward,
    TailForward,
    TailBackward,
}

impl SubgraphKind {
    pub const ALL: [SubgraphKind; 4] = [
        SubgraphKind::HeadForward,
        SubgraphKind::HeadBackward,
        SubgraphKind::TailForward,
        SubgraphKind::TailBackward,
    ];

    /// Does the center entity appear as head of every member triple?
    pub fn is_forward(&self) -> bool {
        matches!(self, SubgraphKind::HeadForward | SubgraphKind::TailForward)
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("target references an unknown {0} id")]
    InvalidId(&'static str),
}

/// One directional neighborhood of a target triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionalSubgraph {
    pub kind: SubgraphKind,
    /// The entity the view is anchored on: head for the Head* kinds, tail
    /// for the Tail* kinds.
    pub center: crate::kg::EntityId,
    pub target: Triple,
    pub triples: Vec<Triple>,
    pub truncated: bool,
}

impl DirectionalSubgraph {
    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// One line per member triple in list order: `(head, relation, tail)`.
    /// The same format feeds agent prompts, so it must stay stable.
    pub fn render(&self, g: &KnowledgeGraph) -> String {
        self.triples.iter().map(|t| g.render_triple(t)).collect::<Vec<_>>().join("\n")
    }
}

/// Extract one directional subgraph with deterministic truncation.
pub fn extract(
    g: &KnowledgeGraph,
    target: &Triple,
    kind: SubgraphKind,
    cap: usize,
    seed: u64,
) -> Result<DirectionalSubgraph, ExtractError> {
    if !g.has_entity(target.head) || !g.has_entity(target.tail) {
        return Err(ExtractError::InvalidId("entity"));
    }
    if !g.has_relation(target.relation) {
        return Err(ExtractError::InvalidId("relation"));
    }

    let (center, mut triples): (_, Vec<Triple>) = match kind {
        SubgraphKind::HeadForward => (
            target.head,
            g.out_neighbors(target.head)
                .iter()
                .filter(|(r, t)| (*r, *t) != (target.relation, target.tail))
                .map(|&(r, t)| Triple::new(target.head, r, t))
                .collect(),
        ),
        SubgraphKind::HeadBackward => (
            target.head,
            g.in_neighbors(target.head)
                .iter()
                .map(|&(h, r)| Triple::new(h, r, target.head))
                .collect(),
        ),
        SubgraphKind::TailForward => (
            target.tail,
            g.out_neighbors(target.tail)
                .iter()
                .map(|&(r, t)| Triple::new(target.tail, r, t))
                .collect(),
        ),
        SubgraphKind::TailBackward => (
            target.tail,
            g.in_neighbors(target.tail)
                .iter()
                .filter(|(h, r)| (*h, *r) != (target.head, target.relation))
                .map(|&(h, r)| Triple::new(h, r, target.tail))
                .collect(),
        ),
    };

    let mut truncated = false;
    if triples.len() > cap {
        let stream = seeding::derive(
            seed,
            &[
                kind as u64,
                target.head.0 as u64,
                target.relation.0 as u64,
                target.tail.0 as u64,
            ],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let mut picked = rand::seq::index::sample(&mut rng, triples.len(), cap).into_vec();
        picked.sort_unstable();
        triples = picked.into_iter().map(|i| triples[i]).collect();
        truncated = true;
    }

    Ok(DirectionalSubgraph { kind, center, target: *target, triples, truncated })
}

/// All four views of one target, keyed by kind.
pub fn extract_all_four(
    g: &KnowledgeGraph,
    target: &Triple,
    cap: usize,
    seed: u64,
) -> Result<BTreeMap<SubgraphKind, DirectionalSubgraph>, ExtractError> {
    let mut out = BTreeMap::new();
    for kind in SubgraphKind::ALL {
        out.insert(kind, extract(g, target, kind, cap, seed)?);
    }
    Ok(out)
}
