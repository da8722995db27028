//! Binary MTAM dataset container.
//!
//! Layout (all integers little endian):
//!
//! | bytes        | content                                              |
//! |--------------|------------------------------------------------------|
//! | 4            | magic `APDS`                                         |
//! | 2            | `format_version` (u16)                               |
//! | 4            | header length `h` (u32)                              |
//! | h            | UTF-8 JSON [`DatasetHeader`]                         |
//! | per sample   | label index (u32) then `4·W` row-major f32 cells     |
//!
//! A sidecar `<file>.index.json` lists, per sample, the trace id, label string
//! and byte offset of the record, so that predictions can be joined back to
//! traces.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{batch_extract, normalize, Batch, FeatureError, MtamConfig, Normalization, WindowMode, ROWS};
use crate::trace::Trace;

pub const DATASET_FORMAT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"APDS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u16,
    pub windows: usize,
    pub mode: WindowMode,
    pub gap: f64,
    pub clip_counts: Option<f64>,
    pub clip_bytes: Option<f64>,
    pub scheme: Normalization,
    pub label_map: Vec<String>,
    pub config_hash: String,
    pub count: usize,
}

impl DatasetHeader {
    pub fn mtam_config(&self) -> MtamConfig {
        MtamConfig {
            windows: self.windows,
            mode: self.mode,
            gap: self.gap,
            clip_counts: self.clip_counts,
            clip_bytes: self.clip_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub trace_id: String,
    /// Index into the header's `label_map`.
    pub label: usize,
    /// Row-major `4 × W` cells, already normalized.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    trace_id: String,
    label: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct SidecarIndex {
    format_version: u16,
    count: usize,
    entries: Vec<IndexEntry>,
}

impl Dataset {
    /// Assembles a dataset from a successful batch, labels sorted lexicographically.
    pub fn from_batch(batch: &Batch, cfg: &MtamConfig, scheme: Normalization) -> Self {
        let mut label_map: Vec<String> = batch.items.iter().map(|(_, l)| l.clone()).collect();
        label_map.sort();
        label_map.dedup();
        let samples = batch
            .items
            .iter()
            .map(|(m, label)| Sample {
                trace_id: m.source_trace_id().to_string(),
                label: label_map.binary_search(label).expect("label collected above"),
                values: normalize(m, scheme).values().iter().map(|v| *v as f32).collect(),
            })
            .collect::<Vec<_>>();
        Dataset {
            header: DatasetHeader {
                format_version: DATASET_FORMAT_VERSION,
                windows: cfg.windows,
                mode: cfg.mode,
                gap: cfg.gap,
                clip_counts: cfg.clip_counts,
                clip_bytes: cfg.clip_bytes,
                scheme,
                label_map,
                config_hash: batch.config_hash.clone(),
                count: samples.len(),
            },
            samples,
        }
    }

    /// Extracts and normalizes traces in one go, returning the failures too.
    pub fn from_traces(
        traces: &[Trace],
        cfg: &MtamConfig,
        scheme: Normalization,
    ) -> Result<(Self, Vec<super::BatchFailure>), FeatureError> {
        let batch = batch_extract(traces, cfg)?;
        let ds = Self::from_batch(&batch, cfg, scheme);
        Ok((ds, batch.failures))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_name(&self, index: usize) -> &str {
        &self.header.label_map[index]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Restricts to the given sample indices, keeping the header.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset {
            header: DatasetHeader {
                count: samples.len(),
                ..self.header.clone()
            },
            samples,
        }
    }

    /// Re-labels every sample through `f`, rebuilding a sorted label map.
    pub fn relabel(&self, f: impl Fn(&str) -> String) -> Dataset {
        let names: Vec<String> = self
            .samples
            .iter()
            .map(|s| f(&self.header.label_map[s.label]))
            .collect();
        let mut label_map = names.clone();
        label_map.sort();
        label_map.dedup();
        let samples = self
            .samples
            .iter()
            .zip(&names)
            .map(|(s, n)| Sample {
                label: label_map.binary_search(n).expect("present"),
                ..s.clone()
            })
            .collect();
        Dataset {
            header: DatasetHeader {
                label_map,
                ..self.header.clone()
            },
            samples,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let w = self.header.windows;
        let mut out = Vec::with_capacity(10 + header.len() + self.samples.len() * (4 + 4 * ROWS * w));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.samples {
            out.extend_from_slice(&(s.label as u32).to_le_bytes());
            for v in &s.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes the binary container; trace ids are taken from `ids` when given.
    pub fn from_bytes(bytes: &[u8], ids: Option<Vec<String>>) -> Result<Self, FeatureError> {
        let fmt = |m: &str| FeatureError::Format(m.to_string());
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(fmt("missing APDS magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != DATASET_FORMAT_VERSION {
            return Err(FeatureError::Format(format!(
                "unsupported dataset format version {version}"
            )));
        }
        let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(10..10 + hlen).ok_or_else(|| fmt("truncated header"))?;
        let header: DatasetHeader =
            serde_json::from_slice(body).map_err(|e| FeatureError::Format(format!("bad header: {e}")))?;
        let cells = ROWS * header.windows;
        let record = 4 + 4 * cells;
        let data = &bytes[10 + hlen..];
        if data.len() != header.count * record {
            return Err(FeatureError::Format(format!(
                "expected {} samples of {record} bytes, found {} bytes",
                header.count,
                data.len()
            )));
        }
        if let Some(ids) = &ids {
            if ids.len() != header.count {
                return Err(fmt("index entry count does not match dataset"));
            }
        }
        let mut samples = Vec::with_capacity(header.count);
        for (i, chunk) in data.chunks_exact(record).enumerate() {
            let label = u32::from_le_bytes(chunk[..4].try_into().expect("4 bytes")) as usize;
            if label >= header.label_map.len() {
                return Err(FeatureError::Format(format!(
                    "sample {i}: label index {label} outside label map"
                )));
            }
            let values = chunk[4..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let trace_id = ids.as_ref().map_or_else(|| format!("#{i}"), |ids| ids[i].clone());
            samples.push(Sample {
                trace_id,
                label,
                values,
            });
        }
        Ok(Dataset { header, samples })
    }
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".index.json");
    PathBuf::from(name)
}

/// Writes the binary container and its sidecar index.
pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    fs::write(path, ds.to_bytes())?;
    let hlen = serde_json::to_vec(&ds.header).expect("header serializes").len() as u64;
    let record = 4 + 4 * (ROWS * ds.header.windows) as u64;
    let entries = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| IndexEntry {
            trace_id: s.trace_id.clone(),
            label: ds.header.label_map[s.label].clone(),
            offset: 10 + hlen + i as u64 * record,
        })
        .collect();
    let index = SidecarIndex {
        format_version: DATASET_FORMAT_VERSION,
        count: ds.samples.len(),
        entries,
    };
    fs::write(
        index_path(path),
        serde_json::to_vec_pretty(&index).expect("index serializes"),
    )?;
    Ok(())
}

/// Reads a dataset; the sidecar index is optional.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, FeatureError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let ids = match fs::read(index_path(path)) {
        Ok(raw) => {
            let index: SidecarIndex =
                serde_json::from_slice(&raw).map_err(|e| FeatureError::Format(format!("bad sidecar index: {e}")))?;
            Some(index.entries.into_iter().map(|e| e.trace_id).collect())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Dataset::from_bytes(&bytes, ids)
}
