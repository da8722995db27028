use serde::{Deserialize, Serialize};

use super::ClassifierError;

/// Input height: one row per direction (in, out).
pub const INPUT_HEIGHT: usize = 2;
/// Input channels: packet counts and byte volumes.
pub const INPUT_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block2d {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub pool: (usize, usize),
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block1d {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub dropout: f64,
}

/// Layer plan of the classifier.
///
/// Each 2D block is `2 × (conv → ReLU → batch-norm) → max-pool → dropout`; the
/// 2D pools must collapse the height (one row per direction) to exactly 1.
/// A pointwise convolution then reduces the channels to `reduce_channels`,
/// followed by the 1D blocks (same structure along time), a pointwise
/// convolution to `num_classes` channels and global average pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub windows: usize,
    pub blocks2d: Vec<Block2d>,
    pub reduce_channels: usize,
    pub blocks1d: Vec<Block1d>,
    pub num_classes: usize,
}

impl ArchConfig {
    /// The default layer plan for `windows`-wide inputs.
    pub fn standard(windows: usize, num_classes: usize) -> Self {
        Self {
            windows,
            blocks2d: vec![
                Block2d {
                    filters: 32,
                    kernel: (2, 8),
                    pool: (1, 8),
                    dropout: 0.3,
                },
                Block2d {
                    filters: 64,
                    kernel: (2, 8),
                    pool: (2, 8),
                    dropout: 0.3,
                },
            ],
            reduce_channels: 32,
            blocks1d: vec![
                Block1d {
                    filters: 64,
                    kernel: 8,
                    pool: 8,
                    dropout: 0.3,
                },
                Block1d {
                    filters: 128,
                    kernel: 8,
                    pool: 4,
                    dropout: 0.3,
                },
            ],
            num_classes,
        }
    }

    /// One block of each kind with few filters; used for gradient checks and
    /// quick experiments on narrow inputs.
    pub fn tiny(windows: usize, num_classes: usize) -> Self {
        Self {
            windows,
            blocks2d: vec![Block2d {
                filters: 3,
                kernel: (2, 3),
                pool: (2, 2),
                dropout: 0.0,
            }],
            reduce_channels: 3,
            blocks1d: vec![Block1d {
                filters: 4,
                kernel: 3,
                pool: 2,
                dropout: 0.0,
            }],
            num_classes,
        }
    }

    /// Sequence length after every pooling stage, checking shape invariants.
    pub fn output_length(&self) -> Result<usize, ClassifierError> {
        let shape = |m: String| Err(ClassifierError::Shape(m));
        if self.windows == 0 {
            return shape("input width must be at least 1".into());
        }
        if self.num_classes == 0 || self.reduce_channels == 0 {
            return shape("class and channel counts must be positive".into());
        }
        let (mut h, mut w) = (INPUT_HEIGHT, self.windows);
        for (i, b) in self.blocks2d.iter().enumerate() {
            if b.filters == 0 || b.kernel.0 == 0 || b.kernel.1 == 0 || b.pool.0 == 0 || b.pool.1 == 0 {
                return shape(format!("2D block {i}: zero-sized filter, kernel or pool"));
            }
            if !(0.0..1.0).contains(&b.dropout) {
                return shape(format!("2D block {i}: dropout must be in [0, 1)"));
            }
            h = h.div_ceil(b.pool.0);
            w = w.div_ceil(b.pool.1);
        }
        if h != 1 {
            return shape(format!("2D pooling leaves height {h}, expected 1"));
        }
        for (i, b) in self.blocks1d.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 || b.pool == 0 {
                return shape(format!("1D block {i}: zero-sized filter, kernel or pool"));
            }
            if !(0.0..1.0).contains(&b.dropout) {
                return shape(format!("1D block {i}: dropout must be in [0, 1)"));
            }
            w = w.div_ceil(b.pool);
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        self.output_length().map(|_| ())
    }

    /// Width of the penultimate feature vector.
    pub fn embedding_dim(&self) -> usize {
        self.blocks1d.last().map(|b| b.filters).unwrap_or(self.reduce_channels)
    }
}
