//! Graph encoder turning directional subgraphs into fixed-size vectors.
//!
//! A three-layer graph convolutional network runs over the node set of a
//! subgraph with symmetric-normalized adjacency (self-loops added), ReLU
//! on the first two layers and a linear third, then mean-pools the node
//! states into a single embedding. Subgraph embeddings fuse with text
//! embeddings by concatenation and feed both the sequence loss in
//! [`sequence`] and the triple classifier in [`train`].
//!
//! Everything here is 64-bit floating point.

mod checkpoint;
mod sequence;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use sequence::{
    assemble_training_sequence, instruction_tuning_loss, ScriptedSequenceModel,
    TokenProbabilityModel, ToyConditionedModel, TrainingSequence, UniformModel,
};
pub use train::{
    classification_accuracy, classify, gradient_oracle_check, predict, train_encoder,
    EncoderTrainConfig,
};

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;
use crate::subgraph::{DirectionalSubgraph, SubgraphKind};

/// Default embedding width of node features and pooled outputs.
pub const EMBEDDING_DIM: usize = 64;
/// Default hidden width of the two inner layers.
pub const HIDDEN_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("entity id {0} not covered by the node feature table")]
    UnknownEntity(u32),
    #[error("instruction token list must be non-empty")]
    EmptyInstruction,
    #[error("token at position {position} was assigned probability zero")]
    ZeroProbabilityToken { position: usize },
    #[error("token {token} at position {position} outside vocabulary of size {vocab}")]
    TokenOutOfRange { position: usize, token: usize, vocab: usize },
    #[error("no examples provided")]
    NoExamples,
    #[error("finite-difference step must lie in [1e-7, 1e-3], got {0}")]
    InvalidEpsilon(f64),
    #[error("checkpoint rejected: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Extract(#[from] crate::subgraph::ExtractError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Nonlinearity applied after the first two layers; the third is always
/// linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// All learned state of the encoder and its triple classifier.
///
/// `layer_weights` maps `emb_dim -> hidden_dim -> hidden_dim -> emb_dim`.
/// `classifier_weights` covers the four subgraph readouts concatenated in
/// [`SubgraphKind::ALL`] order, so its length is `4 * emb_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParameters {
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub node_feature_table: Array2<f64>,
    pub layer_weights: [Array2<f64>; 3],
    pub classifier_weights: Array1<f64>,
    pub classifier_bias: f64,
}

impl GcnParameters {
    /// Random initialization: uniform Glorot-style ranges for the weight
    /// matrices and the feature table, zero classifier bias.
    pub fn init(num_entities: usize, emb_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let uniform = |rows: usize, cols: usize, salt: u64| -> Array2<f64> {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x30, salt]));
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
        };
        let classifier = {
            let bound = (6.0 / (4 * emb_dim + 1) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x30, 4]));
            Array1::from_shape_fn(4 * emb_dim, |_| rng.gen_range(-bound..bound))
        };
        Self {
            emb_dim,
            hidden_dim,
            activation: Activation::Relu,
            node_feature_table: uniform(num_entities, emb_dim, 0),
            layer_weights: [
                uniform(emb_dim, hidden_dim, 1),
                uniform(hidden_dim, hidden_dim, 2),
                uniform(hidden_dim, emb_dim, 3),
            ],
            classifier_weights: classifier,
            classifier_bias: 0.0,
        }
    }

    /// All-zero parameters with the given shapes.
    pub fn zeros(num_entities: usize, emb_dim: usize, hidden_dim: usize) -> Self {
        Self {
            emb_dim,
            hidden_dim,
            activation: Activation::Relu,
            node_feature_table: Array2::zeros((num_entities, emb_dim)),
            layer_weights: [
                Array2::zeros((emb_dim, hidden_dim)),
                Array2::zeros((hidden_dim, hidden_dim)),
                Array2::zeros((hidden_dim, emb_dim)),
            ],
            classifier_weights: Array1::zeros(4 * emb_dim),
            classifier_bias: 0.0,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.node_feature_table.nrows()
    }

    /// The classifier slice reading the given subgraph kind's embedding.
    pub(crate) fn classifier_block(&self, kind: SubgraphKind) -> ndarray::ArrayView1<'_, f64> {
        let k = kind as usize;
        self.classifier_weights.slice(ndarray::s![k * self.emb_dim..(k + 1) * self.emb_dim])
    }
}

/// Mean-pooled output of the encoder for one directional subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphEmbedding {
    pub vector: Array1<f64>,
    pub kind: SubgraphKind,
}

/// Externally supplied text-side embedding of a triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vector: Array1<f64>,
}

/// Concatenation of a subgraph embedding and a text embedding, graph part
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub vector: Array1<f64>,
}

/// Intermediates of one forward pass, kept for backpropagation.
///
/// `products[l]` holds the propagated input of layer l (normalized
/// adjacency times the layer input), `pre[l]` the pre-activation states.
pub(crate) struct ForwardTape {
    pub nodes: Vec<u32>,
    pub a_hat: Array2<f64>,
    pub products: [Array2<f64>; 3],
    pub pre: [Array2<f64>; 3],
    pub post: [Array2<f64>; 3],
}

/// Sorted entity ids occurring in the subgraph's triples.
pub(crate) fn node_ids(sg: &DirectionalSubgraph) -> Vec<u32> {
    let mut set = std::collections::BTreeSet::new();
    for t in &sg.triples {
        set.insert(t.head.0);
        set.insert(t.tail.0);
    }
    set.into_iter().collect()
}

/// Symmetric-normalized adjacency with self-loops over the given node set.
fn normalized_adjacency(nodes: &[u32], sg: &DirectionalSubgraph) -> Array2<f64> {
    let index: BTreeMap<u32, usize> = nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let n = nodes.len();
    let mut a = Array2::<f64>::zeros((n, n));
    for t in &sg.triples {
        let i = index[&t.head.0];
        let j = index[&t.tail.0];
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    for i in 0..n {
        a[[i, i]] += 1.0;
    }
    let degree: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if a[[i, j]] != 0.0 {
                a[[i, j]] /= (degree[i] * degree[j]).sqrt();
            }
        }
    }
    a
}

/// Forward pass keeping intermediates; `None` for an empty subgraph.
pub(crate) fn forward(
    params: &GcnParameters,
    sg: &DirectionalSubgraph,
) -> Result<Option<ForwardTape>, EncoderError> {
    if sg.is_empty() {
        return Ok(None);
    }
    let nodes = node_ids(sg);
    for &id in &nodes {
        if (id as usize) >= params.num_entities() {
            return Err(EncoderError::UnknownEntity(id));
        }
    }
    let a_hat = normalized_adjacency(&nodes, sg);
    let mut x = Array2::<f64>::zeros((nodes.len(), params.emb_dim));
    for (i, &id) in nodes.iter().enumerate() {
        x.row_mut(i).assign(&params.node_feature_table.row(id as usize));
    }

    let mut products: Vec<Array2<f64>> = Vec::with_capacity(3);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(3);
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(3);
    let mut h = x;
    for layer in 0..3 {
        let product = a_hat.dot(&h);
        let p = product.dot(&params.layer_weights[layer]);
        let act = if layer < 2 { params.activation } else { Activation::Linear };
        let out = p.mapv(|v| act.apply(v));
        products.push(product);
        pre.push(p);
        post.push(out.clone());
        h = out;
    }
    let unpack3 = |mut v: Vec<Array2<f64>>| {
        let c = v.pop().unwrap();
        let b = v.pop().unwrap();
        let a = v.pop().unwrap();
        [a, b, c]
    };
    Ok(Some(ForwardTape {
        nodes,
        a_hat,
        products: unpack3(products),
        pre: unpack3(pre),
        post: unpack3(post),
    }))
}

impl ForwardTape {
    /// Mean of the final node states.
    pub(crate) fn readout(&self) -> Array1<f64> {
        self.post[2].mean_axis(Axis(0)).expect("tape always has at least one node")
    }
}

/// Encode one directional subgraph into its pooled embedding.
///
/// An empty subgraph encodes to the zero vector.
pub fn encode_subgraph(
    params: &GcnParameters,
    sg: &DirectionalSubgraph,
) -> Result<SubgraphEmbedding, EncoderError> {
    let vector = match forward(params, sg)? {
        Some(tape) => tape.readout(),
        None => Array1::zeros(params.emb_dim),
    };
    Ok(SubgraphEmbedding { vector, kind: sg.kind })
}

/// Concatenate graph and text embeddings, graph part first.
pub fn fuse(z: &SubgraphEmbedding, e_text: &TextEmbedding) -> FusedEmbedding {
    let mut vector = Array1::zeros(z.vector.len() + e_text.vector.len());
    vector.slice_mut(ndarray::s![..z.vector.len()]).assign(&z.vector);
    vector.slice_mut(ndarray::s![z.vector.len()..]).assign(&e_text.vector);
    FusedEmbedding { vector }
}

/// Accumulate gradients of a scalar loss through one recorded forward
/// pass, given the gradient with respect to the pooled readout.
///
/// Layer-weight gradients add into `d_layers`; feature gradients scatter
/// into the matching rows of `d_features`.
pub(crate) fn backprop(
    params: &GcnParameters,
    tape: &ForwardTape,
    d_readout: &Array1<f64>,
    d_features: &mut Array2<f64>,
    d_layers: &mut [Array2<f64>; 3],
) {
    let n = tape.nodes.len();
    let mut d_post = Array2::<f64>::zeros((n, params.emb_dim));
    for mut row in d_post.rows_mut() {
        row.assign(&(d_readout / n as f64));
    }
    for layer in (0..3).rev() {
        let act = if layer < 2 { params.activation } else { Activation::Linear };
        let mut d_pre = d_post;
        ndarray::Zip::from(&mut d_pre).and(&tape.pre[layer]).for_each(|g, &p| {
            *g *= act.derivative(p);
        });
        d_layers[layer] += &tape.products[layer].t().dot(&d_pre);
        let d_product = d_pre.dot(&params.layer_weights[layer].t());
        d_post = tape.a_hat.t().dot(&d_product);
    }
    for (i, &id) in tape.nodes.iter().enumerate() {
        let mut row = d_features.row_mut(id as usize);
        row += &d_post.row(i);
    }
}
