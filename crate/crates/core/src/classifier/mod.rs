//! Dual-channel convolutional classifier over MTAMs.
//!
//! The 2 × 2 × W matrix enters as two channels (packet counts, byte volumes)
//! of a height-2 image (incoming row, outgoing row). Training runs in `f32`;
//! [`gradient_check`] re-runs the same code in `f64` against central
//! differences.

mod arch;
mod gradcheck;
mod io;
mod layers;
mod model;
mod scalar;
mod train;

use thiserror::Error;

use crate::features::{normalize, Mtam};

pub use arch::{ArchConfig, Block1d, Block2d, INPUT_CHANNELS, INPUT_HEIGHT};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION};
pub use model::{argmax, Model};
pub use scalar::Scalar;
pub use train::{train, train_split, write_history_csv, EpochRecord, Optimizer, TrainConfig, TrainHistory};

/// Label emitted when an open-world prediction is rejected.
pub const UNMONITORED: &str = "unmonitored";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("architecture: {0}")]
    Shape(String),
    #[error("input has {got} cells, model expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("unsupported model format version {0}")]
    Version(u8),
    #[error("corrupt model file: {0}")]
    CorruptWeights(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// Predicted label, or [`UNMONITORED`] on open-world rejection.
    pub label: String,
    /// Index into the label map; `None` when rejected.
    pub class: Option<usize>,
    pub embedding: Option<Vec<f64>>,
}

/// Decision rule on a probability vector. Without a threshold the argmax wins
/// (lowest index on ties); with one, a maximum below it is rejected.
pub fn decide(probs: &[f64], threshold: Option<f64>) -> Option<usize> {
    let best = argmax(probs);
    match threshold {
        Some(t) if probs[best] < t => None,
        _ => Some(best),
    }
}

fn prediction(probs: Vec<f64>, labels: &[String], threshold: Option<f64>) -> Prediction {
    let class = decide(&probs, threshold);
    Prediction {
        label: class.map_or_else(|| UNMONITORED.to_string(), |c| labels[c].clone()),
        class,
        probs,
        embedding: None,
    }
}

fn to_f64<F: Scalar>(v: &[F]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap()).collect()
}

impl<F: Scalar> Model<F> {
    fn mtam_inputs(&self, mtams: &[Mtam]) -> Result<Vec<Vec<F>>, ClassifierError> {
        mtams
            .iter()
            .map(|m| {
                if m.windows() != self.arch.windows {
                    return Err(ClassifierError::ShapeMismatch {
                        expected: self.input_len(),
                        got: m.values().len(),
                    });
                }
                Ok(normalize(m, self.normalization)
                    .values()
                    .iter()
                    .map(|v| F::lit(*v))
                    .collect())
            })
            .collect()
    }

    /// Class probabilities for a batch of MTAMs (normalized with the model's
    /// scheme). `train_mode` samples dropout from `seed` and normalizes with
    /// batch statistics; eval mode is deterministic.
    pub fn forward(&self, mtams: &[Mtam], train_mode: bool, seed: u64) -> Result<Vec<Prediction>, ClassifierError> {
        let inputs = self.mtam_inputs(mtams)?;
        let refs: Vec<&[F]> = inputs.iter().map(Vec::as_slice).collect();
        let probs = if train_mode {
            self.probabilities_train_mode(&refs, seed)?
        } else {
            self.probabilities(&refs)?
        };
        Ok(probs
            .into_iter()
            .map(|p| prediction(to_f64(&p), &self.label_map, None))
            .collect())
    }

    /// Eval-mode prediction with optional open-world rejection and the
    /// penultimate embedding attached.
    pub fn predict(&self, mtam: &Mtam, threshold: Option<f64>) -> Result<Prediction, ClassifierError> {
        let input = self.mtam_inputs(std::slice::from_ref(mtam))?;
        self.predict_inputs(&[input[0].as_slice()], threshold)
            .map(|mut v| v.remove(0))
    }

    /// Eval-mode predictions for already-normalized flattened inputs.
    pub fn predict_inputs(&self, inputs: &[&[F]], threshold: Option<f64>) -> Result<Vec<Prediction>, ClassifierError> {
        let probs = self.probabilities(inputs)?;
        let embeddings = self.embeddings(inputs)?;
        Ok(probs
            .into_iter()
            .zip(embeddings)
            .map(|(p, e)| {
                let mut pred = prediction(to_f64(&p), &self.label_map, threshold);
                pred.embedding = Some(to_f64(&e));
                pred
            })
            .collect())
    }
}
