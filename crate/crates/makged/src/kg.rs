//! In-memory knowledge graph: interned triples with adjacency indices.
//!
//! Triple files follow the common benchmark convention: UTF-8 text, one
//! triple per line, head / relation / tail separated by a single TAB, no
//! header. Entities and relations are interned to dense ids in first
//! appearance order, which keeps every downstream seeded computation
//! reproducible across runs.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense entity index. The surface string lives in the graph's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

/// Dense relation index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

/// A (head, relation, tail) fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

#[derive(Debug, Error)]
pub enum KgError {
    /// Line did not have exactly 3 tab-separated fields. 1-based line number.
    #[error("line {0}: expected 3 tab-separated fields")]
    MalformedLine(usize),
    #[error("input contains no triples")]
    EmptyInput,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// String interner with dense ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }
}

/// Immutable triple store with out- and in-adjacency per entity.
///
/// Duplicate input lines collapse to a single triple; adjacency lists keep
/// first-appearance order so truncation downstream is deterministic.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    out_index: Vec<Vec<(RelationId, EntityId)>>,
    in_index: Vec<Vec<(EntityId, RelationId)>>,
    entities: Vocab,
    relations: Vocab,
}

impl KnowledgeGraph {
    /// Read tab-separated triples from a line stream.
    pub fn ingest<R: BufRead>(reader: R) -> Result<Self, KgError> {
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut triples = Vec::new();
        let mut triple_set = HashSet::new();

        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (h, r, t) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(h), Some(r), Some(t), None) => (h, r, t),
                _ => return Err(KgError::MalformedLine(idx + 1)),
            };
            let triple = Triple::new(
                EntityId(entities.intern(h)),
                RelationId(relations.intern(r)),
                EntityId(entities.intern(t)),
            );
            if triple_set.insert(triple) {
                triples.push(triple);
            }
        }
        if triples.is_empty() {
            return Err(KgError::EmptyInput);
        }

        let mut out_index = vec![Vec::new(); entities.len()];
        let mut in_index = vec![Vec::new(); entities.len()];
        for t in &triples {
            out_index[t.head.0 as usize].push((t.relation, t.tail));
            in_index[t.tail.0 as usize].push((t.head, t.relation));
        }

        Ok(Self { triples, triple_set, out_index, in_index, entities, relations })
    }

    pub fn ingest_path<P: AsRef<Path>>(path: P) -> Result<Self, KgError> {
        let file = std::fs::File::open(path)?;
        Self::ingest(io::BufReader::new(file))
    }

    /// Write the graph back out in the ingest format, insertion order.
    pub fn write_tsv<W: Write>(&self, mut writer: W) -> io::Result<()> {
        for t in &self.triples {
            writeln!(
                writer,
                "{}\t{}\t{}",
                self.entity_name(t.head),
                self.relation_name(t.relation),
                self.entity_name(t.tail)
            )?;
        }
        Ok(())
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    /// All (r', t') with (e, r', t') in the graph, first-appearance order.
    /// Unknown entities have no edges.
    pub fn out_neighbors(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        self.out_index.get(e.0 as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All (h', r') with (h', r', e) in the graph, first-appearance order.
    pub fn in_neighbors(&self, e: EntityId) -> &[(EntityId, RelationId)] {
        self.in_index.get(e.0 as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn has_entity(&self, e: EntityId) -> bool {
        (e.0 as usize) < self.entities.len()
    }

    pub fn has_relation(&self, r: RelationId) -> bool {
        (r.0 as usize) < self.relations.len()
    }

    pub fn entity_id(&self, surface: &str) -> Option<EntityId> {
        self.entities.id(surface).map(EntityId)
    }

    pub fn relation_id(&self, surface: &str) -> Option<RelationId> {
        self.relations.id(surface).map(RelationId)
    }

    /// Surface label of an entity; panics on an id outside the vocabulary.
    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0).expect("entity id out of range")
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        self.relations.name(r.0).expect("relation id out of range")
    }

    /// Render a triple with surface labels: `(head, relation, tail)`.
    ///
    /// This exact form is used in prompts, replay fixture keys, and the
    /// transcript viewer.
    pub fn render_triple(&self, t: &Triple) -> String {
        format!(
            "({}, {}, {})",
            self.entity_name(t.head),
            self.relation_name(t.relation),
            self.entity_name(t.tail)
        )
    }

    /// Intern a surface triple against the existing vocabularies.
    pub fn resolve(&self, head: &str, relation: &str, tail: &str) -> Option<Triple> {
        Some(Triple::new(self.entity_id(head)?, self.relation_id(relation)?, self.entity_id(tail)?))
    }
}

impl fmt::Display for KnowledgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} triples, {} entities, {} relations",
            self.triples.len(),
            self.entities.len(),
            self.relations.len()
        )
    }
}
