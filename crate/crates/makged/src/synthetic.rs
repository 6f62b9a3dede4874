//! Synthetic graphs with a planted, structurally separable error pattern.
//!
//! The generator builds two entity communities whose genuine edges stay
//! inside their own community. Corrupted triples always point from the
//! first community to the second, so a classifier that reads the
//! neighborhoods of both endpoints has a clean decision boundary.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CorruptionKind, Label, LabeledExample};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::seeding;

pub struct PlantedDataset {
    pub graph: KnowledgeGraph,
    pub examples: Vec<LabeledExample>,
}

/// Generate a two-community graph of `triples` intra-community edges and
/// replace `round(corruption_rate * triples)` of them with cross-community
/// corruptions, in place.
///
/// Entities are named `u*` in the first community and `v*` in the second.
/// A corrupted example swaps the tail of a `u`-side triple (or the head
/// of a `v`-side triple) across the boundary, so every incorrect triple
/// runs `u -> v` while every correct triple stays inside one community.
pub fn planted_cluster_dataset(
    entities_per_cluster: usize,
    triples: usize,
    corruption_rate: f64,
    seed: u64,
) -> PlantedDataset {
    assert!(entities_per_cluster >= 2, "each community needs at least two entities");
    assert!((0.0..1.0).contains(&corruption_rate));

    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x70]));
    let mut seen = HashSet::new();
    let mut lines = String::new();
    let mut count = 0usize;
    while count < triples {
        let cluster = count % 2;
        let h = rng.gen_range(0..entities_per_cluster);
        let mut t = rng.gen_range(0..entities_per_cluster);
        while t == h {
            t = rng.gen_range(0..entities_per_cluster);
        }
        let r = rng.gen_range(0..2);
        if seen.insert((cluster, h, r, t)) {
            let prefix = if cluster == 0 { 'u' } else { 'v' };
            lines.push_str(&format!("{prefix}{h}\tr{r}\t{prefix}{t}\n"));
            count += 1;
        }
    }
    let graph = KnowledgeGraph::ingest(lines.as_bytes()).expect("generated graph is well-formed");

    let first_cluster: Vec<EntityId> = (0..graph.num_entities() as u32)
        .map(EntityId)
        .filter(|&e| graph.entity_name(e).starts_with('u'))
        .collect();
    let second_cluster: Vec<EntityId> = (0..graph.num_entities() as u32)
        .map(EntityId)
        .filter(|&e| graph.entity_name(e).starts_with('v'))
        .collect();

    let n = graph.triples().len();
    let n_corrupt = (corruption_rate * n as f64).round() as usize;
    let mut pick_rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x71]));
    let chosen: HashSet<usize> =
        rand::seq::index::sample(&mut pick_rng, n, n_corrupt).into_iter().collect();

    let mut examples = Vec::with_capacity(n);
    for (idx, &triple) in graph.triples().iter().enumerate() {
        if !chosen.contains(&idx) {
            examples.push(LabeledExample {
                triple,
                label: Label::Correct,
                corruption: CorruptionKind::None,
                original: None,
            });
            continue;
        }
        let mut corrupt_rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x72, idx as u64]));
        let mut corrupted = triple;
        let kind;
        if graph.entity_name(triple.head).starts_with('u') {
            corrupted.tail = second_cluster[corrupt_rng.gen_range(0..second_cluster.len())];
            kind = CorruptionKind::Tail;
        } else {
            corrupted.head = first_cluster[corrupt_rng.gen_range(0..first_cluster.len())];
            kind = CorruptionKind::Head;
        }
        debug_assert!(!graph.contains(&corrupted));
        examples.push(LabeledExample {
            triple: corrupted,
            label: Label::Incorrect,
            corruption: kind,
            original: Some(triple),
        });
    }
    PlantedDataset { graph, examples }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupted_triples_cross_communities_and_correct_ones_do_not() {
        let planted = planted_cluster_dataset(20, 120, 0.3, 5);
        assert_eq!(planted.examples.len(), 120);
        let incorrect =
            planted.examples.iter().filter(|e| e.label == Label::Incorrect).count();
        assert_eq!(incorrect, 36);
        for ex in &planted.examples {
            let g = &planted.graph;
            let head_first = g.entity_name(ex.triple.head).starts_with('u');
            let tail_first = g.entity_name(ex.triple.tail).starts_with('u');
            match ex.label {
                Label::Correct => {
                    assert_eq!(head_first, tail_first);
                    assert!(g.contains(&ex.triple));
                }
                Label::Incorrect => {
                    assert!(head_first && !tail_first);
                    assert!(!g.contains(&ex.triple));
                    assert!(g.contains(&ex.original.unwrap()));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = planted_cluster_dataset(15, 80, 0.25, 9);
        let b = planted_cluster_dataset(15, 80, 0.25, 9);
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.graph.triples(), b.graph.triples());
    }
}
