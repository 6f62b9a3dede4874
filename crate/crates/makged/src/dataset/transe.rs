//! Translational embeddings backing the corruption similarity search.
//!
//! A small margin-ranking trainer over `||h + r - t||`: enough signal for
//! "replace an element with a cosine-similar one", deliberately not a
//! benchmark-grade embedding model. Training is single-threaded and fully
//! determined by the seed.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kg::KnowledgeGraph;
use crate::seeding;

use super::DatasetError;

/// Which vocabulary a nearest-neighbor query runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSpace {
    Entity,
    Relation,
}

/// Learned entity and relation vectors, row per id.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub entity_vectors: Array2<f64>,
    pub relation_vectors: Array2<f64>,
    pub dim: usize,
}

impl EmbeddingTable {
    fn rows(&self, space: EmbeddingSpace) -> &Array2<f64> {
        match space {
            EmbeddingSpace::Entity => &self.entity_vectors,
            EmbeddingSpace::Relation => &self.relation_vectors,
        }
    }

    /// Translational distance `||h + r - t||` (lower is more plausible).
    pub fn score(&self, h: u32, r: u32, t: u32) -> f64 {
        let h = self.entity_vectors.row(h as usize);
        let r = self.relation_vectors.row(r as usize);
        let t = self.entity_vectors.row(t as usize);
        (&h + &r - &t).mapv(|x| x * x).sum().sqrt()
    }
}

/// Hyperparameters for [`train_similarity_embeddings`].
#[derive(Debug, Clone)]
pub struct SimilarityConfig {
    pub dim: usize,
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { dim: 64, epochs: 100, margin: 1.0, lr: 0.01, seed: 0 }
    }
}

fn l2(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Train margin-ranking embeddings over the graph's triples.
///
/// Positive triples are ranked against uniformly corrupted negatives with
/// loss `max(0, margin + ||h + r - t|| - ||h' + r - t'||)`. Entity rows are
/// renormalized to unit length at the start of every epoch.
pub fn train_similarity_embeddings(
    g: &KnowledgeGraph,
    config: &SimilarityConfig,
) -> Result<EmbeddingTable, DatasetError> {
    if config.dim < 2 {
        return Err(DatasetError::InvalidDim(config.dim));
    }
    if g.num_entities() < 2 || g.num_relations() < 1 {
        return Err(DatasetError::DegenerateGraph);
    }

    let n_ent = g.num_entities();
    let n_rel = g.num_relations();
    let dim = config.dim;
    let bound = 6.0 / (dim as f64).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(config.seed, &[0x51]));
    let mut entities = Array2::from_shape_fn((n_ent, dim), |_| rng.gen_range(-bound..bound));
    let mut relations = Array2::from_shape_fn((n_rel, dim), |_| rng.gen_range(-bound..bound));
    for mut row in relations.rows_mut() {
        let norm = l2(row.view()).max(1e-12);
        row.mapv_inplace(|x| x / norm);
    }

    let triples: Vec<_> = g.triples().to_vec();
    let mut order: Vec<usize> = (0..triples.len()).collect();

    for epoch in 0..config.epochs {
        for mut row in entities.rows_mut() {
            let norm = l2(row.view()).max(1e-12);
            row.mapv_inplace(|x| x / norm);
        }

        let mut epoch_rng =
            ChaCha8Rng::seed_from_u64(seeding::derive(config.seed, &[0x52, epoch as u64]));
        shuffle(&mut order, &mut epoch_rng);

        for &idx in &order {
            let pos = triples[idx];
            // Corrupt head or tail uniformly; a handful of redraws avoids
            // negatives that are actual graph members.
            let corrupt_head = epoch_rng.gen_bool(0.5);
            let mut neg = pos;
            for _ in 0..10 {
                let candidate = rng_entity(&mut epoch_rng, n_ent);
                if corrupt_head {
                    neg.head = candidate;
                } else {
                    neg.tail = candidate;
                }
                if neg != pos && !g.contains(&neg) {
                    break;
                }
            }
            if neg == pos {
                continue;
            }

            let diff_pos = &entities.row(pos.head.0 as usize)
                + &relations.row(pos.relation.0 as usize)
                - &entities.row(pos.tail.0 as usize);
            let diff_neg = &entities.row(neg.head.0 as usize)
                + &relations.row(neg.relation.0 as usize)
                - &entities.row(neg.tail.0 as usize);
            let d_pos = l2(diff_pos.view());
            let d_neg = l2(diff_neg.view());
            if config.margin + d_pos - d_neg <= 0.0 {
                continue;
            }

            let g_pos: Array1<f64> = &diff_pos * (config.lr / d_pos.max(1e-12));
            let g_neg: Array1<f64> = &diff_neg * (config.lr / d_neg.max(1e-12));

            sub_row(&mut entities, pos.head.0, &g_pos);
            sub_row(&mut relations, pos.relation.0, &g_pos);
            add_row(&mut entities, pos.tail.0, &g_pos);

            add_row(&mut entities, neg.head.0, &g_neg);
            add_row(&mut relations, neg.relation.0, &g_neg);
            sub_row(&mut entities, neg.tail.0, &g_neg);
        }
    }

    Ok(EmbeddingTable { entity_vectors: entities, relation_vectors: relations, dim })
}

fn rng_entity(rng: &mut ChaCha8Rng, n_ent: usize) -> crate::kg::EntityId {
    crate::kg::EntityId(rng.gen_range(0..n_ent) as u32)
}

fn add_row(m: &mut Array2<f64>, row: u32, delta: &Array1<f64>) {
    let mut r = m.row_mut(row as usize);
    r += delta;
}

fn sub_row(m: &mut Array2<f64>, row: u32, delta: &Array1<f64>) {
    let mut r = m.row_mut(row as usize);
    r -= delta;
}

/// Fisher-Yates with an explicit RNG so the permutation is seeded.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = l2(a);
    let nb = l2(b);
    if na <= 0.0 || nb <= 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

/// Top-k ids ranked by cosine similarity to `id`, self excluded, ties broken
/// by ascending id.
pub fn nearest_neighbors(
    table: &EmbeddingTable,
    id: u32,
    k: usize,
    space: EmbeddingSpace,
) -> Vec<u32> {
    let rows = table.rows(space);
    let query = rows.row(id as usize);
    let mut scored: Vec<(f64, u32)> = (0..rows.nrows() as u32)
        .filter(|&other| other != id)
        .map(|other| (cosine(query, rows.row(other as usize)), other))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table(entities: Array2<f64>) -> EmbeddingTable {
        EmbeddingTable {
            dim: entities.ncols(),
            entity_vectors: entities,
            relation_vectors: Array2::zeros((1, 2)),
        }
    }

    #[test]
    fn nearest_neighbor_by_cosine() {
        let t = table(array![[1.0, 0.0], [1.0, 0.01], [-1.0, 0.0]]);
        assert_eq!(nearest_neighbors(&t, 0, 1, EmbeddingSpace::Entity), vec![1]);
    }

    #[test]
    fn k_larger_than_vocab_returns_everyone_ranked() {
        let t = table(array![[1.0, 0.0], [1.0, 0.01], [-1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(nearest_neighbors(&t, 0, 10, EmbeddingSpace::Entity), vec![1, 3, 2]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // ids 3 and 7 hold identical vectors, equidistant from the query.
        let mut rows = Array2::zeros((8, 2));
        rows.row_mut(1).assign(&array![1.0, 0.0]);
        for id in [0, 2, 4, 5, 6] {
            rows.row_mut(id).assign(&array![-1.0, 0.0]);
        }
        rows.row_mut(3).assign(&array![0.6, 0.8]);
        rows.row_mut(7).assign(&array![0.6, 0.8]);
        let t = table(rows);
        let got = nearest_neighbors(&t, 1, 2, EmbeddingSpace::Entity);
        assert_eq!(got, vec![3, 7]);
    }

    #[test]
    fn training_ranks_the_observed_direction_first() {
        let g = KnowledgeGraph::ingest("a\tr\tb\n".as_bytes()).unwrap();
        let cfg = SimilarityConfig { dim: 8, epochs: 200, ..Default::default() };
        let t = train_similarity_embeddings(&g, &cfg).unwrap();
        assert!(t.score(0, 0, 1) < t.score(1, 0, 0), "(a,r,b) must outrank (b,r,a)");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let g = KnowledgeGraph::ingest("a\tr\tb\nb\tr\tc\nc\ts\ta\n".as_bytes()).unwrap();
        let cfg = SimilarityConfig { dim: 6, epochs: 20, seed: 9, ..Default::default() };
        let t1 = train_similarity_embeddings(&g, &cfg).unwrap();
        let t2 = train_similarity_embeddings(&g, &cfg).unwrap();
        assert_eq!(t1.entity_vectors, t2.entity_vectors);
        assert_eq!(t1.relation_vectors, t2.relation_vectors);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let g = KnowledgeGraph::ingest("a\tr\ta\n".as_bytes()).unwrap();
        let cfg = SimilarityConfig::default();
        assert!(matches!(
            train_similarity_embeddings(&g, &cfg),
            Err(DatasetError::DegenerateGraph)
        ));

        let g = KnowledgeGraph::ingest("a\tr\tb\n".as_bytes()).unwrap();
        let cfg = SimilarityConfig { dim: 0, ..Default::default() };
        assert!(matches!(train_similarity_embeddings(&g, &cfg), Err(DatasetError::InvalidDim(0))));
    }

    #[test]
    fn all_trained_values_are_finite() {
        let g = KnowledgeGraph::ingest("a\tr\tb\nb\tr\tc\nd\ts\ta\n".as_bytes()).unwrap();
        let cfg = SimilarityConfig { dim: 4, epochs: 30, ..Default::default() };
        let t = train_similarity_embeddings(&g, &cfg).unwrap();
        assert!(t.entity_vectors.iter().all(|x| x.is_finite()));
        assert!(t.relation_vectors.iter().all(|x| x.is_finite()));
    }
}
