//! Token sequences conditioned on a fused embedding, and the mean
//! negative log-likelihood loss over them.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EncoderError, FusedEmbedding};
use crate::seeding;

/// An instruction/answer token pair with its conditioning vector.
///
/// The conditioning vector rides along as a side input to the model; it
/// is not part of the token stream. `full` is the instruction followed by
/// the answer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub instruction_tokens: Vec<usize>,
    pub conditioning: FusedEmbedding,
    pub answer_tokens: Vec<usize>,
    pub full: Vec<usize>,
}

/// Build a [`TrainingSequence`]; the instruction must be non-empty. An
/// empty answer gives the inference-time shape.
pub fn assemble_training_sequence(
    instruction: Vec<usize>,
    e_concat: FusedEmbedding,
    answer: Vec<usize>,
) -> Result<TrainingSequence, EncoderError> {
    if instruction.is_empty() {
        return Err(EncoderError::EmptyInstruction);
    }
    let mut full = instruction.clone();
    full.extend_from_slice(&answer);
    Ok(TrainingSequence {
        instruction_tokens: instruction,
        conditioning: e_concat,
        answer_tokens: answer,
        full,
    })
}

/// A next-token predictor conditioned on a fixed side vector.
///
/// Implementations must return a valid probability distribution over the
/// vocabulary (non-negative, summing to 1 within 1e-9) for every prefix.
pub trait TokenProbabilityModel {
    fn vocab_size(&self) -> usize;
    fn next_token_distribution(
        &self,
        prefix: &[usize],
        conditioning: &FusedEmbedding,
    ) -> Array1<f64>;
}

/// Mean negative log-likelihood of every token of the sequence under the
/// model, conditioned on the sequence's fused embedding.
pub fn instruction_tuning_loss<M: TokenProbabilityModel + ?Sized>(
    model: &M,
    seq: &TrainingSequence,
) -> Result<f64, EncoderError> {
    let vocab = model.vocab_size();
    let mut total = 0.0;
    for (position, &token) in seq.full.iter().enumerate() {
        if token >= vocab {
            return Err(EncoderError::TokenOutOfRange { position, token, vocab });
        }
        let dist = model.next_token_distribution(&seq.full[..position], &seq.conditioning);
        debug_assert!((dist.sum() - 1.0).abs() < 1e-9, "model emitted an invalid distribution");
        let p = dist[token];
        if p <= 0.0 {
            return Err(EncoderError::ZeroProbabilityToken { position });
        }
        total += p.ln();
    }
    Ok(-total / seq.full.len() as f64)
}

/// Assigns probability 1/V to every token regardless of context.
#[derive(Debug, Clone)]
pub struct UniformModel {
    pub vocab: usize,
}

impl TokenProbabilityModel for UniformModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_token_distribution(&self, _: &[usize], _: &FusedEmbedding) -> Array1<f64> {
        Array1::from_elem(self.vocab, 1.0 / self.vocab as f64)
    }
}

/// Replays a fixed distribution per position, selected by prefix length;
/// positions past the script fall back to uniform.
#[derive(Debug, Clone)]
pub struct ScriptedSequenceModel {
    distributions: Vec<Array1<f64>>,
}

impl ScriptedSequenceModel {
    /// All distributions must share one vocabulary size; the list must be
    /// non-empty.
    pub fn new(distributions: Vec<Array1<f64>>) -> Self {
        assert!(!distributions.is_empty(), "scripted model needs at least one distribution");
        let vocab = distributions[0].len();
        assert!(
            distributions.iter().all(|d| d.len() == vocab),
            "scripted distributions must agree on vocabulary size"
        );
        Self { distributions }
    }
}

impl TokenProbabilityModel for ScriptedSequenceModel {
    fn vocab_size(&self) -> usize {
        self.distributions[0].len()
    }

    fn next_token_distribution(&self, prefix: &[usize], _: &FusedEmbedding) -> Array1<f64> {
        match self.distributions.get(prefix.len()) {
            Some(d) => d.clone(),
            None => Array1::from_elem(self.vocab_size(), 1.0 / self.vocab_size() as f64),
        }
    }
}

/// A small conditioned softmax language model with tied token embeddings.
///
/// The prefix state is the mean of the prefix tokens' embedding rows
/// (zero for an empty prefix). The mixer maps `[prefix_state ;
/// conditioning]` to a hidden vector, and logits are its inner products
/// with every embedding row.
#[derive(Debug, Clone)]
pub struct ToyConditionedModel {
    pub token_embeddings: Array2<f64>,
    pub mixer: Array2<f64>,
}

impl ToyConditionedModel {
    pub fn init(vocab: usize, state_dim: usize, cond_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, &[0x40]));
        let scale = 0.5;
        Self {
            token_embeddings: Array2::from_shape_fn((vocab, state_dim), |_| {
                rng.gen_range(-scale..scale)
            }),
            mixer: Array2::from_shape_fn((state_dim, state_dim + cond_dim), |_| {
                rng.gen_range(-scale..scale)
            }),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.token_embeddings.ncols()
    }

    pub fn cond_dim(&self) -> usize {
        self.mixer.ncols() - self.state_dim()
    }

    fn prefix_state(&self, prefix: &[usize]) -> Array1<f64> {
        let mut state = Array1::zeros(self.state_dim());
        if prefix.is_empty() {
            return state;
        }
        for &t in prefix {
            state += &self.token_embeddings.row(t);
        }
        state / prefix.len() as f64
    }

    fn hidden(&self, prefix: &[usize], conditioning: &FusedEmbedding) -> Array1<f64> {
        let mut input = Array1::zeros(self.mixer.ncols());
        input.slice_mut(ndarray::s![..self.state_dim()]).assign(&self.prefix_state(prefix));
        input.slice_mut(ndarray::s![self.state_dim()..]).assign(&conditioning.vector);
        self.mixer.dot(&input)
    }
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

impl TokenProbabilityModel for ToyConditionedModel {
    fn vocab_size(&self) -> usize {
        self.token_embeddings.nrows()
    }

    fn next_token_distribution(
        &self,
        prefix: &[usize],
        conditioning: &FusedEmbedding,
    ) -> Array1<f64> {
        softmax(&self.token_embeddings.dot(&self.hidden(prefix, conditioning)))
    }
}

/// Loss gradients of [`instruction_tuning_loss`] through a
/// [`ToyConditionedModel`], with respect to both parameter matrices and
/// the conditioning vector.
pub(crate) struct ToyModelGradients {
    pub loss: f64,
    pub d_token_embeddings: Array2<f64>,
    pub d_mixer: Array2<f64>,
    pub d_conditioning: Array1<f64>,
}

pub(crate) fn toy_loss_gradients(
    model: &ToyConditionedModel,
    seq: &TrainingSequence,
) -> Result<ToyModelGradients, EncoderError> {
    let vocab = model.vocab_size();
    let state_dim = model.state_dim();
    let n = seq.full.len() as f64;
    let mut loss = 0.0;
    let mut d_emb = Array2::zeros(model.token_embeddings.dim());
    let mut d_mixer = Array2::zeros(model.mixer.dim());
    let mut d_cond = Array1::zeros(model.cond_dim());

    for (position, &token) in seq.full.iter().enumerate() {
        if token >= vocab {
            return Err(EncoderError::TokenOutOfRange { position, token, vocab });
        }
        let prefix = &seq.full[..position];
        let state = model.prefix_state(prefix);
        let mut input = Array1::zeros(model.mixer.ncols());
        input.slice_mut(ndarray::s![..state_dim]).assign(&state);
        input.slice_mut(ndarray::s![state_dim..]).assign(&seq.conditioning.vector);
        let hidden = model.mixer.dot(&input);
        let probs = softmax(&model.token_embeddings.dot(&hidden));
        let p = probs[token];
        if p <= 0.0 {
            return Err(EncoderError::ZeroProbabilityToken { position });
        }
        loss -= p.ln() / n;

        let mut d_logits = probs;
        d_logits[token] -= 1.0;
        d_logits /= n;

        // logits = E h: both the outer-product term and the hidden path.
        let d_hidden = model.token_embeddings.t().dot(&d_logits);
        for (v, mut row) in d_logits.iter().zip(d_emb.rows_mut()) {
            row.scaled_add(*v, &hidden);
        }
        for (g, mut row) in d_hidden.iter().zip(d_mixer.rows_mut()) {
            row.scaled_add(*g, &input);
        }
        let d_input = model.mixer.t().dot(&d_hidden);
        d_cond += &d_input.slice(ndarray::s![state_dim..]);

        // The prefix state is a mean of embedding rows, so its gradient
        // scatters back over the prefix tokens.
        if !prefix.is_empty() {
            let d_state = d_input.slice(ndarray::s![..state_dim]);
            let share = 1.0 / prefix.len() as f64;
            for &t in prefix {
                let mut row = d_emb.row_mut(t);
                row.scaled_add(share, &d_state);
            }
        }
    }

    Ok(ToyModelGradients { loss, d_token_embeddings: d_emb, d_mixer, d_conditioning: d_cond })
}
