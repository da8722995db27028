//! Multi-view traffic aggregation matrices.
//!
//! Each trace is cut into `W` time windows; within window `j` and direction
//! `d` we record the packet count `N_d(j)` and the byte volume `B_d(j)`. The
//! result is a 2 (metric) × 2 (direction) × W tensor, stored as four rows in
//! the fixed order `[N_in, N_out, B_in, B_out]`.

mod dataset;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trace::{Direction, Trace};

pub use dataset::{read_dataset, write_dataset, Dataset, DatasetHeader, Sample, DATASET_FORMAT_VERSION};

pub const ROW_N_IN: usize = 0;
pub const ROW_N_OUT: usize = 1;
pub const ROW_B_IN: usize = 2;
pub const ROW_B_OUT: usize = 3;
pub const ROWS: usize = 4;

pub const DEFAULT_WINDOWS: usize = 1800;
pub const DEFAULT_GAP: f64 = 0.05;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("trace `{0}` has no packets")]
    EmptyTrace(String),
    #[error("trace `{0}` carries no label")]
    MissingLabel(String),
    #[error("invalid MTAM configuration: {0}")]
    Config(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// `W` equal windows spanning the trace's own duration.
    #[default]
    Uniform,
    /// Windows of fixed width `gap` starting at t = 0; later packets are dropped.
    FixedGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    Log1p,
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Normalization::None),
            "log1p" => Ok(Normalization::Log1p),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtamConfig {
    pub windows: usize,
    pub mode: WindowMode,
    /// Window width in seconds; only read in fixed-gap mode.
    pub gap: f64,
    pub clip_counts: Option<f64>,
    pub clip_bytes: Option<f64>,
}

impl Default for MtamConfig {
    fn default() -> Self {
        Self {
            windows: DEFAULT_WINDOWS,
            mode: WindowMode::Uniform,
            gap: DEFAULT_GAP,
            clip_counts: None,
            clip_bytes: None,
        }
    }
}

impl MtamConfig {
    pub fn uniform(windows: usize) -> Self {
        Self {
            windows,
            ..Self::default()
        }
    }

    pub fn fixed_gap(windows: usize, gap: f64) -> Self {
        Self {
            windows,
            mode: WindowMode::FixedGap,
            gap,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.windows == 0 {
            return Err(FeatureError::Config("window count must be at least 1".into()));
        }
        if self.mode == WindowMode::FixedGap && !(self.gap > 0.0 && self.gap.is_finite()) {
            return Err(FeatureError::Config(format!(
                "fixed-gap window width must be positive, got {}",
                self.gap
            )));
        }
        for clip in [self.clip_counts, self.clip_bytes].into_iter().flatten() {
            if clip.is_nan() || clip < 0.0 {
                return Err(FeatureError::Config(format!("bad clip bound {clip}")));
            }
        }
        Ok(())
    }

    /// Time span covered in fixed-gap mode.
    pub fn max_duration(&self) -> f64 {
        self.windows as f64 * self.gap
    }

    /// Short digest identifying this configuration in datasets and models.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mtam {
    windows: usize,
    values: Vec<f64>,
    source_trace_id: String,
    config_hash: String,
    dropped: usize,
}

impl Mtam {
    pub fn zeros(windows: usize, source_trace_id: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            windows,
            values: vec![0.0; ROWS * windows],
            source_trace_id: source_trace_id.into(),
            config_hash: config_hash.into(),
            dropped: 0,
        }
    }

    /// Wraps raw row-major cells; fails unless there are exactly `4 × windows`
    /// finite non-negative values.
    pub fn from_values(
        windows: usize,
        values: Vec<f64>,
        source_trace_id: impl Into<String>,
        config_hash: impl Into<String>,
    ) -> Result<Self, FeatureError> {
        if windows == 0 || values.len() != ROWS * windows {
            return Err(FeatureError::Config(format!(
                "expected {} cells, got {}",
                ROWS * windows,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FeatureError::Config("cells must be finite and non-negative".into()));
        }
        Ok(Self {
            windows,
            values,
            source_trace_id: source_trace_id.into(),
            config_hash: config_hash.into(),
            dropped: 0,
        })
    }

    pub fn windows(&self) -> usize {
        self.windows
    }

    /// Row-major `4 × W` cells.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.windows..(row + 1) * self.windows]
    }

    pub fn get(&self, row: usize, window: usize) -> f64 {
        self.values[row * self.windows + window]
    }

    pub fn source_trace_id(&self) -> &str {
        &self.source_trace_id
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    /// Packets that fell outside the covered time span (fixed-gap mode).
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    fn add(&mut self, row: usize, window: usize, v: f64) {
        self.values[row * self.windows + window] += v;
    }
}

/// Left boundary of window `j` for window width `width`.
#[inline]
fn boundary(j: usize, width: f64) -> f64 {
    j as f64 * width
}

/// Window owning time `t`, using half-open windows `[b_j, b_{j+1})` whose last
/// window extends to the end of the covered span.
fn locate(t: f64, width: f64, windows: usize) -> usize {
    let mut j = ((t / width).floor() as usize).min(windows - 1);
    while j > 0 && t < boundary(j, width) {
        j -= 1;
    }
    while j + 1 < windows && t >= boundary(j + 1, width) {
        j += 1;
    }
    j
}

/// Bins a trace into an MTAM.
pub fn extract_mtam(trace: &Trace, cfg: &MtamConfig) -> Result<Mtam, FeatureError> {
    cfg.validate()?;
    let w = cfg.windows;
    let mut m = Mtam::zeros(w, trace.id(), cfg.digest());

    let (width, limit) = match cfg.mode {
        WindowMode::Uniform => {
            if trace.is_empty() {
                return Err(FeatureError::EmptyTrace(trace.id().to_string()));
            }
            let duration = trace.duration();
            (duration / w as f64, duration)
        }
        WindowMode::FixedGap => (cfg.gap, cfg.max_duration()),
    };

    for p in trace.packets() {
        let j = match cfg.mode {
            WindowMode::Uniform if width == 0.0 => 0,
            WindowMode::Uniform if p.t >= limit => w - 1,
            WindowMode::Uniform => locate(p.t, width, w),
            WindowMode::FixedGap if p.t >= limit => {
                m.dropped += 1;
                continue;
            }
            WindowMode::FixedGap => locate(p.t, width, w),
        };
        let (n_row, b_row) = match p.dir {
            Direction::In => (ROW_N_IN, ROW_B_IN),
            Direction::Out => (ROW_N_OUT, ROW_B_OUT),
        };
        m.add(n_row, j, 1.0);
        m.add(b_row, j, p.size as f64);
    }

    if let Some(c) = cfg.clip_counts {
        for v in &mut m.values[..2 * w] {
            *v = v.min(c);
        }
    }
    if let Some(c) = cfg.clip_bytes {
        for v in &mut m.values[2 * w..] {
            *v = v.min(c);
        }
    }
    Ok(m)
}

/// Cell-wise rescaling. `Log1p` maps `x ↦ ln(1 + x)`.
pub fn normalize(mtam: &Mtam, scheme: Normalization) -> Mtam {
    let mut out = mtam.clone();
    if scheme == Normalization::Log1p {
        for v in &mut out.values {
            *v = v.ln_1p();
        }
    }
    out
}

#[derive(Debug)]
pub struct BatchFailure {
    pub index: usize,
    pub trace_id: String,
    pub error: FeatureError,
}

#[derive(Debug)]
pub struct Batch {
    /// Successful extractions in input order.
    pub items: Vec<(Mtam, String)>,
    pub failures: Vec<BatchFailure>,
    pub config_hash: String,
}

/// Extracts every labeled trace, collecting per-trace failures instead of
/// aborting.
pub fn batch_extract(traces: &[Trace], cfg: &MtamConfig) -> Result<Batch, FeatureError> {
    cfg.validate()?;
    let mut items = Vec::with_capacity(traces.len());
    let mut failures = Vec::new();
    for (index, trace) in traces.iter().enumerate() {
        let result = trace
            .label()
            .ok_or_else(|| FeatureError::MissingLabel(trace.id().to_string()))
            .and_then(|label| Ok((extract_mtam(trace, cfg)?, label.to_string())));
        match result {
            Ok(item) => items.push(item),
            Err(error) => failures.push(BatchFailure {
                index,
                trace_id: trace.id().to_string(),
                error,
            }),
        }
    }
    Ok(Batch {
        items,
        failures,
        config_hash: cfg.digest(),
    })
}
