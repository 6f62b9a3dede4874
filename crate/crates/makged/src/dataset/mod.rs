//! Labeled error-detection datasets built from a clean graph.
//!
//! A configurable fraction of triples (default 30%) is replaced by
//! corruptions: head, tail, or relation swapped for a cosine-similar
//! alternative from the learned embedding table, never colliding with a
//! real triple. Examples then split 8:1:1 into train/valid/test.

mod transe;

pub use transe::{
    nearest_neighbors, train_similarity_embeddings, EmbeddingSpace, EmbeddingTable,
    SimilarityConfig,
};

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::seeding;

/// Gold label of an example (and final label of a decision).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
}

/// Which element of the original triple was replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    None,
    Head,
    Tail,
    Relation,
}

/// A possibly-corrupted triple with its gold label and provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub triple: Triple,
    pub label: Label,
    pub corruption: CorruptionKind,
    pub original: Option<Triple>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("graph too small to embed (need at least 2 entities and 1 relation)")]
    DegenerateGraph,
    #[error("embedding dim must be at least 2, got {0}")]
    InvalidDim(usize),
    #[error("corruption rate must be strictly between 0 and 1, got {0}")]
    InvalidRate(f64),
    #[error("no valid replacement for triple {0} after widening to the full vocabulary")]
    ExhaustedCandidates(String),
    #[error("need at least 10 examples to split 8:1:1, got {0}")]
    TooFewExamples(usize),
    #[error("unknown {kind} surface {surface:?} in example file")]
    UnknownSymbol { kind: &'static str, surface: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// 8:1:1 partition of examples.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Corrupt `round(rate * |triples|)` triples of the graph, one example per
/// graph triple, graph order preserved.
///
/// The corruption kind is uniform over head/tail/relation; the replacement
/// is drawn uniformly from the `top_k` cosine neighbors of the replaced
/// element, widening the window whenever every candidate in it collides
/// with a real triple.
pub fn corrupt_dataset(
    g: &KnowledgeGraph,
    table: &EmbeddingTable,
    rate: f64,
    top_k: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, DatasetError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(DatasetError::InvalidRate(rate));
    }
    let triples = g.triples();
    let n_corrupt = (rate * triples.len() as f64).round() as usize;

    let mut subset_rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x10]));
    let corrupted: HashSet<usize> =
        rand::seq::index::sample(&mut subset_rng, triples.len(), n_corrupt).into_iter().collect();

    let mut out = Vec::with_capacity(triples.len());
    for (idx, &triple) in triples.iter().enumerate() {
        if !corrupted.contains(&idx) {
            out.push(LabeledExample {
                triple,
                label: Label::Correct,
                corruption: CorruptionKind::None,
                original: None,
            });
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x11, idx as u64]));
        let kind = match rng.gen_range(0..3) {
            0 => CorruptionKind::Head,
            1 => CorruptionKind::Tail,
            _ => CorruptionKind::Relation,
        };
        let corrupted_triple = corrupt_one(g, table, &triple, kind, top_k, &mut rng)
            .ok_or_else(|| DatasetError::ExhaustedCandidates(g.render_triple(&triple)))?;
        debug_assert!(!g.contains(&corrupted_triple));
        out.push(LabeledExample {
            triple: corrupted_triple,
            label: Label::Incorrect,
            corruption: kind,
            original: Some(triple),
        });
    }
    Ok(out)
}

fn corrupt_one(
    g: &KnowledgeGraph,
    table: &EmbeddingTable,
    original: &Triple,
    kind: CorruptionKind,
    top_k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Triple> {
    let (space, element) = match kind {
        CorruptionKind::Head => (EmbeddingSpace::Entity, original.head.0),
        CorruptionKind::Tail => (EmbeddingSpace::Entity, original.tail.0),
        CorruptionKind::Relation => (EmbeddingSpace::Relation, original.relation.0),
        CorruptionKind::None => unreachable!("corrupt_one called with kind None"),
    };
    let vocab_len = match space {
        EmbeddingSpace::Entity => g.num_entities(),
        EmbeddingSpace::Relation => g.num_relations(),
    };
    // Full similarity ranking once; the draw works on a growing prefix.
    let ranked = nearest_neighbors(table, element, vocab_len.saturating_sub(1), space);

    let build = |replacement: u32| -> Triple {
        let mut t = *original;
        match kind {
            CorruptionKind::Head => t.head = EntityId(replacement),
            CorruptionKind::Tail => t.tail = EntityId(replacement),
            CorruptionKind::Relation => t.relation = RelationId(replacement),
            CorruptionKind::None => unreachable!(),
        }
        t
    };

    let mut window = top_k.min(ranked.len());
    let mut rejected: HashSet<u32> = HashSet::new();
    loop {
        let available: Vec<u32> =
            ranked[..window].iter().copied().filter(|c| !rejected.contains(c)).collect();
        if available.is_empty() {
            if window >= ranked.len() {
                return None;
            }
            window = (window * 2).max(window + 1).min(ranked.len());
            continue;
        }
        let candidate = available[rng.gen_range(0..available.len())];
        let t = build(candidate);
        if t != *original && !g.contains(&t) {
            return Some(t);
        }
        rejected.insert(candidate);
    }
}

/// Seeded shuffle, then floor(0.8 N) / floor(0.1 N) / remainder.
pub fn split(examples: &[LabeledExample], seed: u64) -> Result<DatasetSplit, DatasetError> {
    let n = examples.len();
    if n < 10 {
        return Err(DatasetError::TooFewExamples(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x12]));
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (0.8 * n as f64).floor() as usize;
    let n_valid = (0.1 * n as f64).floor() as usize;
    let pick = |range: std::ops::Range<usize>| -> Vec<LabeledExample> {
        order[range].iter().map(|&i| examples[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
    })
}

/// Surface form of a triple as stored in JSONL files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl TripleRecord {
    pub fn from_triple(g: &KnowledgeGraph, t: &Triple) -> Self {
        Self {
            head: g.entity_name(t.head).to_owned(),
            relation: g.relation_name(t.relation).to_owned(),
            tail: g.entity_name(t.tail).to_owned(),
        }
    }

    pub fn resolve(&self, g: &KnowledgeGraph) -> Result<Triple, DatasetError> {
        let head = g.entity_id(&self.head).ok_or_else(|| DatasetError::UnknownSymbol {
            kind: "entity",
            surface: self.head.clone(),
        })?;
        let relation =
            g.relation_id(&self.relation).ok_or_else(|| DatasetError::UnknownSymbol {
                kind: "relation",
                surface: self.relation.clone(),
            })?;
        let tail = g.entity_id(&self.tail).ok_or_else(|| DatasetError::UnknownSymbol {
            kind: "entity",
            surface: self.tail.clone(),
        })?;
        Ok(Triple::new(head, relation, tail))
    }
}

/// One JSONL row of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub label: Label,
    pub corruption: CorruptionKind,
    pub original: Option<TripleRecord>,
}

impl ExampleRecord {
    pub fn from_example(g: &KnowledgeGraph, ex: &LabeledExample) -> Self {
        let t = TripleRecord::from_triple(g, &ex.triple);
        Self {
            head: t.head,
            relation: t.relation,
            tail: t.tail,
            label: ex.label,
            corruption: ex.corruption,
            original: ex.original.map(|o| TripleRecord::from_triple(g, &o)),
        }
    }

    pub fn triple_record(&self) -> TripleRecord {
        TripleRecord {
            head: self.head.clone(),
            relation: self.relation.clone(),
            tail: self.tail.clone(),
        }
    }

    pub fn resolve(&self, g: &KnowledgeGraph) -> Result<LabeledExample, DatasetError> {
        Ok(LabeledExample {
            triple: self.triple_record().resolve(g)?,
            label: self.label,
            corruption: self.corruption,
            original: self.original.as_ref().map(|o| o.resolve(g)).transpose()?,
        })
    }
}

pub fn write_examples<W: Write>(
    mut writer: W,
    g: &KnowledgeGraph,
    examples: &[LabeledExample],
) -> Result<(), DatasetError> {
    for ex in examples {
        let record = ExampleRecord::from_example(g, ex);
        serde_json::to_writer(&mut writer, &record)
            .map_err(|source| DatasetError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(reader: R) -> Result<Vec<ExampleRecord>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|source| DatasetError::Json { line: idx + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_graph(n_ent: usize, n_rel: usize, n_tri: usize, seed: u64) -> KnowledgeGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lines = String::new();
        let mut seen = HashSet::new();
        while seen.len() < n_tri {
            let h = rng.gen_range(0..n_ent);
            let r = rng.gen_range(0..n_rel);
            let t = rng.gen_range(0..n_ent);
            if seen.insert((h, r, t)) {
                lines.push_str(&format!("e{h}\tr{r}\te{t}\n"));
            }
        }
        KnowledgeGraph::ingest(lines.as_bytes()).unwrap()
    }

    fn quick_table(g: &KnowledgeGraph) -> EmbeddingTable {
        let cfg = SimilarityConfig { dim: 8, epochs: 5, ..Default::default() };
        train_similarity_embeddings(g, &cfg).unwrap()
    }

    #[test]
    fn corruption_count_is_exact() {
        let g = random_graph(30, 4, 200, 3);
        let table = quick_table(&g);
        let examples = corrupt_dataset(&g, &table, 0.3, 10, 1).unwrap();
        assert_eq!(examples.len(), 200);
        let bad = examples.iter().filter(|e| e.label == Label::Incorrect).count();
        assert_eq!(bad, 60);
    }

    #[test]
    fn incorrect_examples_never_collide_with_the_graph() {
        let g = random_graph(25, 3, 150, 5);
        let table = quick_table(&g);
        let examples = corrupt_dataset(&g, &table, 0.3, 10, 2).unwrap();
        for ex in &examples {
            match ex.label {
                Label::Incorrect => {
                    assert!(!g.contains(&ex.triple));
                    let original = ex.original.expect("corrupted examples carry provenance");
                    assert_ne!(ex.triple, original);
                    assert!(g.contains(&original));
                    assert_ne!(ex.corruption, CorruptionKind::None);
                }
                Label::Correct => {
                    assert!(g.contains(&ex.triple));
                    assert!(ex.original.is_none());
                    assert_eq!(ex.corruption, CorruptionKind::None);
                }
            }
        }
    }

    #[test]
    fn corruption_is_reproducible_under_seed() {
        let g = random_graph(10, 2, 10, 8);
        let table = quick_table(&g);
        let a = corrupt_dataset(&g, &table, 0.3, 10, 77).unwrap();
        let b = corrupt_dataset(&g, &table, 0.3, 10, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|e| e.label == Label::Incorrect).count(), 3);
        let c = corrupt_dataset(&g, &table, 0.3, 10, 78).unwrap();
        assert_ne!(a, c, "different seed should pick different corruptions");
    }

    #[test]
    fn corruption_preserves_vocabulary() {
        let g = random_graph(20, 3, 100, 9);
        let table = quick_table(&g);
        for ex in corrupt_dataset(&g, &table, 0.4, 5, 4).unwrap() {
            assert!(g.has_entity(ex.triple.head));
            assert!(g.has_entity(ex.triple.tail));
            assert!(g.has_relation(ex.triple.relation));
        }
    }

    #[test]
    fn invalid_rate_is_rejected() {
        let g = random_graph(10, 2, 20, 1);
        let table = quick_table(&g);
        for rate in [0.0, 1.0, 1.5, -0.1] {
            assert!(matches!(
                corrupt_dataset(&g, &table, rate, 10, 0),
                Err(DatasetError::InvalidRate(_))
            ));
        }
    }

    #[test]
    fn exhausted_candidates_when_nothing_fits() {
        // Complete bipartite-ish: every head/tail/relation swap collides.
        // 2 entities, 1 relation, both directed edges present, plus loops.
        let g = KnowledgeGraph::ingest("a\tr\tb\nb\tr\ta\na\tr\ta\nb\tr\tb\n".as_bytes()).unwrap();
        let table = quick_table(&g);
        let err = corrupt_dataset(&g, &table, 0.9, 10, 0).unwrap_err();
        assert!(matches!(err, DatasetError::ExhaustedCandidates(_)));
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let g = random_graph(40, 4, 105, 2);
        let table = quick_table(&g);
        let examples = corrupt_dataset(&g, &table, 0.3, 10, 1).unwrap();
        let s = split(&examples, 5).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (84, 10, 11));
    }

    #[test]
    fn split_smallest_legal_case() {
        let g = random_graph(10, 2, 10, 6);
        let table = quick_table(&g);
        let examples = corrupt_dataset(&g, &table, 0.3, 10, 1).unwrap();
        let s = split(&examples, 0).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));

        assert!(matches!(split(&examples[..9], 0), Err(DatasetError::TooFewExamples(9))));
    }

    #[test]
    fn split_is_a_partition_and_reproducible() {
        let g = random_graph(30, 3, 120, 4);
        let table = quick_table(&g);
        let examples = corrupt_dataset(&g, &table, 0.25, 10, 3).unwrap();
        let a = split(&examples, 21).unwrap();
        let b = split(&examples, 21).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.test, b.test);

        let mut all: Vec<_> = a.train.iter().chain(&a.valid).chain(&a.test).cloned().collect();
        assert_eq!(all.len(), examples.len());
        all.sort_by_key(|e| e.triple);
        let mut want = examples.clone();
        want.sort_by_key(|e| e.triple);
        assert_eq!(all, want);
    }

    #[test]
    fn jsonl_roundtrip_preserves_examples() {
        let g = random_graph(15, 2, 40, 12);
        let table = quick_table(&g);
        let examples = corrupt_dataset(&g, &table, 0.3, 10, 6).unwrap();
        let mut buf = Vec::new();
        write_examples(&mut buf, &g, &examples).unwrap();
        let records = read_examples(buf.as_slice()).unwrap();
        assert_eq!(records.len(), examples.len());
        let resolved: Vec<_> = records.iter().map(|r| r.resolve(&g).unwrap()).collect();
        assert_eq!(resolved, examples);
    }

    #[test]
    fn record_fields_use_the_wire_spelling() {
        let g = KnowledgeGraph::ingest("a\tr\tb\nb\tr\tc\n".as_bytes()).unwrap();
        let ex = LabeledExample {
            triple: g.resolve("a", "r", "b").unwrap(),
            label: Label::Incorrect,
            corruption: CorruptionKind::Tail,
            original: Some(g.resolve("b", "r", "c").unwrap()),
        };
        let json = serde_json::to_value(ExampleRecord::from_example(&g, &ex)).unwrap();
        assert_eq!(json["label"], "incorrect");
        assert_eq!(json["corruption"], "tail");
        assert_eq!(json["original"]["head"], "b");

        let ok = LabeledExample {
            triple: g.resolve("a", "r", "b").unwrap(),
            label: Label::Correct,
            corruption: CorruptionKind::None,
            original: None,
        };
        let json = serde_json::to_value(ExampleRecord::from_example(&g, &ok)).unwrap();
        assert_eq!(json["corruption"], "none");
        assert!(json["original"].is_null());
    }
}
