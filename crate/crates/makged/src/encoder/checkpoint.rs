//! Self-describing JSON checkpoints for trained encoder parameters.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, EncoderError, EncoderTrainConfig, GcnParameters};

const FORMAT: &str = "gcn-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixRecord {
    fn from_array(a: &Array2<f64>) -> Self {
        Self { rows: a.nrows(), cols: a.ncols(), data: a.iter().copied().collect() }
    }

    fn into_array(self, name: &str) -> Result<Array2<f64>, EncoderError> {
        if self.rows * self.cols != self.data.len() {
            return Err(EncoderError::MalformedCheckpoint(format!(
                "{name}: {}x{} declared but {} values stored",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| EncoderError::MalformedCheckpoint(format!("{name}: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    format: String,
    version: u32,
    activation: Activation,
    node_feature_table: MatrixRecord,
    layer_weights: Vec<MatrixRecord>,
    classifier_weights: Vec<f64>,
    classifier_bias: f64,
    config: EncoderTrainConfig,
}

/// Write parameters plus the training configuration that produced them.
pub fn save_checkpoint<W: Write>(
    params: &GcnParameters,
    config: &EncoderTrainConfig,
    writer: W,
) -> Result<(), EncoderError> {
    let record = CheckpointRecord {
        format: FORMAT.to_owned(),
        version: VERSION,
        activation: params.activation,
        node_feature_table: MatrixRecord::from_array(&params.node_feature_table),
        layer_weights: params.layer_weights.iter().map(MatrixRecord::from_array).collect(),
        classifier_weights: params.classifier_weights.to_vec(),
        classifier_bias: params.classifier_bias,
        config: *config,
    };
    serde_json::to_writer(writer, &record)?;
    Ok(())
}

/// Read a checkpoint back, validating shape consistency.
pub fn load_checkpoint<R: Read>(
    reader: R,
) -> Result<(GcnParameters, EncoderTrainConfig), EncoderError> {
    let record: CheckpointRecord = serde_json::from_reader(reader)?;
    if record.format != FORMAT {
        return Err(EncoderError::MalformedCheckpoint(format!(
            "unrecognized format {:?}",
            record.format
        )));
    }
    if record.version != VERSION {
        return Err(EncoderError::MalformedCheckpoint(format!(
            "unsupported version {}",
            record.version
        )));
    }
    if record.layer_weights.len() != 3 {
        return Err(EncoderError::MalformedCheckpoint(format!(
            "expected 3 layer matrices, found {}",
            record.layer_weights.len()
        )));
    }
    let mut layers = record.layer_weights.into_iter();
    let w1 = layers.next().unwrap().into_array("layer 1")?;
    let w2 = layers.next().unwrap().into_array("layer 2")?;
    let w3 = layers.next().unwrap().into_array("layer 3")?;
    let features = record.node_feature_table.into_array("node feature table")?;
    let (emb_dim, hidden_dim) = (w1.nrows(), w1.ncols());
    let shape_ok = features.ncols() == emb_dim
        && w2.dim() == (hidden_dim, hidden_dim)
        && w3.dim() == (hidden_dim, emb_dim)
        && record.classifier_weights.len() == 4 * emb_dim;
    if !shape_ok {
        return Err(EncoderError::MalformedCheckpoint(
            "matrix shapes are mutually inconsistent".to_owned(),
        ));
    }
    let params = GcnParameters {
        emb_dim,
        hidden_dim,
        activation: record.activation,
        node_feature_table: features,
        layer_weights: [w1, w2, w3],
        classifier_weights: Array1::from_vec(record.classifier_weights),
        classifier_bias: record.classifier_bias,
    };
    Ok((params, record.config))
}
