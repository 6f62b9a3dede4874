//! Supervised training of the encoder and its triple classifier, plus a
//! finite-difference audit of every gradient path.
//!
//! Each training triple contributes its four directional subgraphs; the
//! classifier reads their concatenated embeddings through a logistic
//! head trained with binary cross-entropy, where the positive class is
//! an incorrect triple.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    assemble_training_sequence, backprop, encode_subgraph, forward, fuse, instruction_tuning_loss,
    node_ids, sequence::toy_loss_gradients, EncoderError, GcnParameters, TextEmbedding,
    ToyConditionedModel,
};
use crate::dataset::{DatasetSplit, Label, LabeledExample};
use crate::kg::{KnowledgeGraph, Triple};
use crate::seeding;
use crate::subgraph::{extract, DirectionalSubgraph, SubgraphKind};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EncoderTrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Subgraph size cap used when extracting training views; predictions
    /// made with the same cap and seed see identical views.
    pub cap: usize,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            dim: super::EMBEDDING_DIM,
            hidden: super::HIDDEN_DIM,
            lr: 0.001,
            batch: 64,
            epochs: 100,
            seed: 0,
            cap: 25,
        }
    }
}

fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

fn stable_bce(s: f64, y: f64) -> f64 {
    s.max(0.0) - s * y + (-s.abs()).exp().ln_1p()
}

struct Gradients {
    features: Array2<f64>,
    layers: [Array2<f64>; 3],
    classifier: Array1<f64>,
    bias: f64,
}

impl Gradients {
    fn zeros(params: &GcnParameters) -> Self {
        Self {
            features: Array2::zeros(params.node_feature_table.dim()),
            layers: [
                Array2::zeros(params.layer_weights[0].dim()),
                Array2::zeros(params.layer_weights[1].dim()),
                Array2::zeros(params.layer_weights[2].dim()),
            ],
            classifier: Array1::zeros(params.classifier_weights.len()),
            bias: 0.0,
        }
    }

    fn reset(&mut self) {
        self.features.fill(0.0);
        for l in &mut self.layers {
            l.fill(0.0);
        }
        self.classifier.fill(0.0);
        self.bias = 0.0;
    }

    fn scale(&mut self, factor: f64) {
        self.features *= factor;
        for l in &mut self.layers {
            *l *= factor;
        }
        self.classifier *= factor;
        self.bias *= factor;
    }
}

struct AdamState<D: ndarray::Dimension> {
    m: ndarray::Array<f64, D>,
    v: ndarray::Array<f64, D>,
}

impl<D: ndarray::Dimension> AdamState<D> {
    fn like(template: &ndarray::Array<f64, D>) -> Self {
        Self { m: ndarray::Array::zeros(template.raw_dim()), v: ndarray::Array::zeros(template.raw_dim()) }
    }

    fn step(&mut self, p: &mut ndarray::Array<f64, D>, g: &ndarray::Array<f64, D>, lr: f64, t: i32) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let c1 = 1.0 - B1.powi(t);
        let c2 = 1.0 - B2.powi(t);
        ndarray::Zip::from(p).and(&mut self.m).and(&mut self.v).and(g).for_each(|p, m, v, &g| {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        });
    }
}

/// The four directional views of one example, extracted once up front.
fn extract_views(
    g: &KnowledgeGraph,
    triple: &Triple,
    cap: usize,
    seed: u64,
) -> Result<Vec<DirectionalSubgraph>, EncoderError> {
    SubgraphKind::ALL
        .iter()
        .map(|&kind| extract(g, triple, kind, cap, seed).map_err(EncoderError::from))
        .collect()
}

/// Raw classifier score (pre-sigmoid) of one example from its four views.
fn score_views(
    params: &GcnParameters,
    views: &[DirectionalSubgraph],
) -> Result<(f64, Vec<Option<super::ForwardTape>>), EncoderError> {
    let mut s = params.classifier_bias;
    let mut tapes = Vec::with_capacity(4);
    for view in views {
        let tape = forward(params, view)?;
        if let Some(tape) = &tape {
            s += params.classifier_block(view.kind).dot(&tape.readout());
        }
        tapes.push(tape);
    }
    Ok((s, tapes))
}

fn label_target(label: Label) -> f64 {
    match label {
        Label::Incorrect => 1.0,
        Label::Correct => 0.0,
    }
}

/// Train the encoder and classifier on the training split with Adam.
///
/// Deterministic under the seed: initialization, epoch shuffles, and
/// subgraph truncation all derive from `config.seed`.
pub fn train_encoder(
    split: &DatasetSplit,
    g: &KnowledgeGraph,
    config: &EncoderTrainConfig,
) -> Result<GcnParameters, EncoderError> {
    if split.train.is_empty() {
        return Err(EncoderError::NoExamples);
    }
    let mut params = GcnParameters::init(
        g.num_entities(),
        config.dim,
        config.hidden,
        seeding::derive(config.seed, &[0x60]),
    );

    let mut cached: Vec<(Vec<DirectionalSubgraph>, f64)> = Vec::with_capacity(split.train.len());
    for ex in &split.train {
        cached.push((extract_views(g, &ex.triple, config.cap, config.seed)?, label_target(ex.label)));
    }

    let mut grads = Gradients::zeros(&params);
    let mut adam_features = AdamState::like(&params.node_feature_table);
    let mut adam_layers = [
        AdamState::like(&params.layer_weights[0]),
        AdamState::like(&params.layer_weights[1]),
        AdamState::like(&params.layer_weights[2]),
    ];
    let mut adam_classifier = AdamState::like(&params.classifier_weights);
    let (mut bias_m, mut bias_v) = (0.0f64, 0.0f64);
    let mut t = 0i32;

    let n = cached.len();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeding::derive(config.seed, &[0x61, epoch as u64]));
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(config.batch.max(1)) {
            grads.reset();
            for &idx in chunk {
                let (views, y) = &cached[idx];
                let (s, tapes) = score_views(&params, views)?;
                let ds = sigmoid(s) - y;
                grads.bias += ds;
                for (k, tape) in tapes.iter().enumerate() {
                    if let Some(tape) = tape {
                        let z = tape.readout();
                        let dim = params.emb_dim;
                        grads
                            .classifier
                            .slice_mut(s![k * dim..(k + 1) * dim])
                            .scaled_add(ds, &z);
                        let dz = params.classifier_block(SubgraphKind::ALL[k]).to_owned() * ds;
                        backprop(&params, tape, &dz, &mut grads.features, &mut grads.layers);
                    }
                }
            }
            grads.scale(1.0 / chunk.len() as f64);
            t += 1;
            adam_features.step(&mut params.node_feature_table, &grads.features, config.lr, t);
            for (l, adam) in adam_layers.iter_mut().enumerate() {
                adam.step(&mut params.layer_weights[l], &grads.layers[l], config.lr, t);
            }
            adam_classifier.step(&mut params.classifier_weights, &grads.classifier, config.lr, t);
            {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                bias_m = B1 * bias_m + (1.0 - B1) * grads.bias;
                bias_v = B2 * bias_v + (1.0 - B2) * grads.bias * grads.bias;
                let c1 = 1.0 - B1.powi(t);
                let c2 = 1.0 - B2.powi(t);
                params.classifier_bias -= config.lr * (bias_m / c1) / ((bias_v / c2).sqrt() + 1e-8);
            }
        }
    }
    Ok(params)
}

/// Probability that the triple is incorrect, from its four directional
/// views extracted with the given cap and seed.
pub fn predict(
    params: &GcnParameters,
    g: &KnowledgeGraph,
    triple: &Triple,
    cap: usize,
    seed: u64,
) -> Result<f64, EncoderError> {
    let views = extract_views(g, triple, cap, seed)?;
    let (s, _) = score_views(params, &views)?;
    Ok(sigmoid(s))
}

/// Threshold [`predict`] at 0.5.
pub fn classify(
    params: &GcnParameters,
    g: &KnowledgeGraph,
    triple: &Triple,
    cap: usize,
    seed: u64,
) -> Result<Label, EncoderError> {
    let p = predict(params, g, triple, cap, seed)?;
    Ok(if p >= 0.5 { Label::Incorrect } else { Label::Correct })
}

/// Fraction of examples whose [`classify`] output matches the gold label.
pub fn classification_accuracy(
    params: &GcnParameters,
    g: &KnowledgeGraph,
    examples: &[LabeledExample],
    cap: usize,
    seed: u64,
) -> Result<f64, EncoderError> {
    if examples.is_empty() {
        return Err(EncoderError::NoExamples);
    }
    let mut hits = 0usize;
    for ex in examples {
        if classify(params, g, &ex.triple, cap, seed)? == ex.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

fn bce_path_loss(params: &GcnParameters, sg: &DirectionalSubgraph) -> Result<f64, EncoderError> {
    let z = match forward(params, sg)? {
        Some(tape) => tape.readout(),
        None => Array1::zeros(params.emb_dim),
    };
    let s = params.classifier_block(sg.kind).dot(&z) + params.classifier_bias;
    Ok(stable_bce(s, 1.0))
}

/// Evenly spaced probe coordinates; every coordinate when `len <= max`.
fn sample_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * len / max).collect()
    }
}

fn guarded_relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare analytic gradients against central finite differences and
/// return the worst relative error over both audited paths: the
/// cross-entropy classifier path through the encoder, and the sequence
/// loss through the built-in conditioned toy model.
pub fn gradient_oracle_check(
    params: &GcnParameters,
    sg: &DirectionalSubgraph,
    epsilon: f64,
) -> Result<f64, EncoderError> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(EncoderError::InvalidEpsilon(epsilon));
    }
    let mut worst = 0.0f64;

    // Classifier path.
    {
        let tape = forward(params, sg)?;
        let z = match &tape {
            Some(t) => t.readout(),
            None => Array1::zeros(params.emb_dim),
        };
        let block = params.classifier_block(sg.kind).to_owned();
        let s = block.dot(&z) + params.classifier_bias;
        let ds = sigmoid(s) - 1.0;
        let d_block = &z * ds;
        let d_bias = ds;
        let mut d_features = Array2::zeros(params.node_feature_table.dim());
        let mut d_layers = [
            Array2::zeros(params.layer_weights[0].dim()),
            Array2::zeros(params.layer_weights[1].dim()),
            Array2::zeros(params.layer_weights[2].dim()),
        ];
        if let Some(tape) = &tape {
            backprop(params, tape, &(block * ds), &mut d_features, &mut d_layers);
        }

        let mut probe = params.clone();
        for &id in &node_ids(sg) {
            for col in sample_indices(params.emb_dim, 16) {
                let orig = probe.node_feature_table[[id as usize, col]];
                probe.node_feature_table[[id as usize, col]] = orig + epsilon;
                let up = bce_path_loss(&probe, sg)?;
                probe.node_feature_table[[id as usize, col]] = orig - epsilon;
                let down = bce_path_loss(&probe, sg)?;
                probe.node_feature_table[[id as usize, col]] = orig;
                let numeric = (up - down) / (2.0 * epsilon);
                worst = worst.max(guarded_relative_error(d_features[[id as usize, col]], numeric));
            }
        }
        for layer in 0..3 {
            let (rows, cols) = probe.layer_weights[layer].dim();
            for flat in sample_indices(rows * cols, 48) {
                let coord = [flat / cols, flat % cols];
                let orig = probe.layer_weights[layer][coord];
                probe.layer_weights[layer][coord] = orig + epsilon;
                let up = bce_path_loss(&probe, sg)?;
                probe.layer_weights[layer][coord] = orig - epsilon;
                let down = bce_path_loss(&probe, sg)?;
                probe.layer_weights[layer][coord] = orig;
                let numeric = (up - down) / (2.0 * epsilon);
                worst = worst.max(guarded_relative_error(d_layers[layer][coord], numeric));
            }
        }
        let base = sg.kind as usize * params.emb_dim;
        for i in sample_indices(params.emb_dim, 48) {
            let orig = probe.classifier_weights[base + i];
            probe.classifier_weights[base + i] = orig + epsilon;
            let up = bce_path_loss(&probe, sg)?;
            probe.classifier_weights[base + i] = orig - epsilon;
            let down = bce_path_loss(&probe, sg)?;
            probe.classifier_weights[base + i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(guarded_relative_error(d_block[i], numeric));
        }
        {
            let orig = probe.classifier_bias;
            probe.classifier_bias = orig + epsilon;
            let up = bce_path_loss(&probe, sg)?;
            probe.classifier_bias = orig - epsilon;
            let down = bce_path_loss(&probe, sg)?;
            probe.classifier_bias = orig;
            worst = worst.max(guarded_relative_error(d_bias, (up - down) / (2.0 * epsilon)));
        }
    }

    // Sequence-loss path through the toy conditioned model.
    {
        let z = encode_subgraph(params, sg)?;
        let e_text = TextEmbedding { vector: ndarray::array![0.25, -0.5, 1.0] };
        let conditioning = fuse(&z, &e_text);
        let cond_len = conditioning.vector.len();
        let model = ToyConditionedModel::init(7, 4, cond_len, 0x7A11);
        let seq = assemble_training_sequence(vec![2, 5, 1], conditioning, vec![3, 0])?;
        let grads = toy_loss_gradients(&model, &seq)?;
        let direct_loss = instruction_tuning_loss(&model, &seq)?;
        worst = worst.max(guarded_relative_error(grads.loss, direct_loss));

        let mut probe = model.clone();
        let (rows, cols) = probe.token_embeddings.dim();
        for flat in sample_indices(rows * cols, 48) {
            let coord = [flat / cols, flat % cols];
            let orig = probe.token_embeddings[coord];
            probe.token_embeddings[coord] = orig + epsilon;
            let up = instruction_tuning_loss(&probe, &seq)?;
            probe.token_embeddings[coord] = orig - epsilon;
            let down = instruction_tuning_loss(&probe, &seq)?;
            probe.token_embeddings[coord] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(guarded_relative_error(grads.d_token_embeddings[coord], numeric));
        }
        let (rows, cols) = probe.mixer.dim();
        for flat in sample_indices(rows * cols, 48) {
            let coord = [flat / cols, flat % cols];
            let orig = probe.mixer[coord];
            probe.mixer[coord] = orig + epsilon;
            let up = instruction_tuning_loss(&probe, &seq)?;
            probe.mixer[coord] = orig - epsilon;
            let down = instruction_tuning_loss(&probe, &seq)?;
            probe.mixer[coord] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(guarded_relative_error(grads.d_mixer[coord], numeric));
        }
        let mut shifted = seq.clone();
        for i in sample_indices(cond_len, 48) {
            let orig = shifted.conditioning.vector[i];
            shifted.conditioning.vector[i] = orig + epsilon;
            let up = instruction_tuning_loss(&model, &shifted)?;
            shifted.conditioning.vector[i] = orig - epsilon;
            let down = instruction_tuning_loss(&model, &shifted)?;
            shifted.conditioning.vector[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(guarded_relative_error(grads.d_conditioning[i], numeric));
        }
    }

    Ok(worst)
}
