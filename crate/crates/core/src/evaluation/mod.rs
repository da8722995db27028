//! Stratified splits, classification metrics and repeated-split evaluation.

mod report;

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::{train_split, ArchConfig, ClassifierError, Model, TrainConfig};
use crate::features::Dataset;

pub use report::{ClassMetrics, EvalReport, FoldMetrics, FoldStats};

/// Smallest class size accepted by [`split_dataset`].
pub const MIN_PER_CLASS: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class `{label}` has {count} samples, at least {MIN_PER_CLASS} are required")]
    InsufficientSamples { label: String, count: usize },
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: ClassifierError,
    },
    #[error("{0}")]
    Config(String),
    #[error("report: {0}")]
    Format(String),
}

/// Which half of an `archetype:Behavior` trace label to classify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Behavior,
    Agent,
}

impl LabelKind {
    /// Labels without a `:` are used whole.
    pub fn apply(self, label: &str) -> String {
        match (self, label.split_once(':')) {
            (LabelKind::Agent, Some((agent, _))) => agent.to_string(),
            (LabelKind::Behavior, Some((_, behavior))) => behavior.to_string(),
            _ => label.to_string(),
        }
    }
}

impl FromStr for LabelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "behavior" => Ok(LabelKind::Behavior),
            "agent" => Ok(LabelKind::Agent),
            other => Err(format!("unknown label kind `{other}` (expected behavior or agent)")),
        }
    }
}

/// Split proportions, e.g. `8:1:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRatios {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 8,
            val: 1,
            test: 1,
        }
    }
}

impl FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("split `{s}`: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [train, val, test] if train > 0 && test > 0 => Ok(Self { train, val, test }),
            _ => Err(format!(
                "split `{s}` must be three integers train:val:test with train and test positive"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class stratified split. Each class of size `n` gives
/// `⌊n·val/total⌋` validation and `⌊n·test/total⌋` test samples; the rest
/// train. Index lists come back sorted.
pub fn split_dataset(
    labels: &[usize],
    label_names: &[String],
    ratios: SplitRatios,
    seed: u64,
) -> Result<Split, EvalError> {
    let total = ratios.train + ratios.val + ratios.test;
    if ratios.train == 0 || ratios.test == 0 {
        return Err(EvalError::Config("train and test ratios must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (c, name) in label_names.iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < MIN_PER_CLASS {
            return Err(EvalError::InsufficientSamples {
                label: name.clone(),
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = n * ratios.val / total;
        let n_test = n * ratios.test / total;
        split.val.extend_from_slice(&idx[..n_val]);
        split.test.extend_from_slice(&idx[n_val..n_val + n_test]);
        split.train.extend_from_slice(&idx[n_val + n_test..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Metrics for probability rows against true class indices. The predicted
/// class is the argmax (lowest index on ties); top-K uses the K largest.
pub fn compute_metrics(probs: &[Vec<f64>], truths: &[usize], labels: &[String]) -> Result<EvalReport, EvalError> {
    if probs.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: probs.len(),
            truths: truths.len(),
        });
    }
    let k = labels.len();
    if let Some(bad) = truths.iter().find(|&&t| t >= k) {
        return Err(EvalError::Config(format!("truth index {bad} outside {k} labels")));
    }
    if let Some(row) = probs.iter().find(|p| p.len() != k) {
        return Err(EvalError::Config(format!(
            "probability row of length {} for {k} labels",
            row.len()
        )));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut topk_hits = [0usize; 3];
    for (p, &t) in probs.iter().zip(truths) {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        confusion[t][order[0]] += 1;
        for (j, hits) in topk_hits.iter_mut().enumerate() {
            if order.iter().take(j + 1).any(|&c| c == t) {
                *hits += 1;
            }
        }
    }
    let n = truths.len().max(1) as f64;
    let topk = topk_hits
        .iter()
        .enumerate()
        .map(|(j, &h)| (j + 1, h as f64 / n))
        .collect();
    Ok(EvalReport::from_confusion(labels.to_vec(), confusion, topk, Vec::new()))
}

/// Settings for [`kfold_evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub repeats: usize,
    pub ratios: SplitRatios,
    pub train: TrainConfig,
    /// Layer plan; `windows` and `num_classes` are taken from the dataset.
    pub arch: ArchConfig,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(train: TrainConfig) -> Self {
        Self {
            repeats: 10,
            ratios: SplitRatios::default(),
            arch: ArchConfig::standard(1, 1),
            seed: train.seed,
            train,
        }
    }
}

/// Repeated random stratified splits: each repeat trains a fresh model on
/// its train part (early stopping on the validation part) and is scored on
/// the test part. Confusion and top-K aggregate over all repeats; fold
/// statistics report the spread of per-repeat macro-F1 and accuracy.
pub fn kfold_evaluate(ds: &Dataset, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    if cfg.repeats < 2 {
        return Err(EvalError::Config("at least two repeats are required".into()));
    }
    let labels = ds.labels();
    let names = ds.header.label_map.clone();
    let mut arch = cfg.arch.clone();
    arch.windows = ds.header.windows;
    arch.num_classes = names.len();

    let mut all_probs = Vec::new();
    let mut all_truths = Vec::new();
    let mut folds = Vec::with_capacity(cfg.repeats);
    for fold in 0..cfg.repeats {
        let fold_seed = cfg.seed.wrapping_add(fold as u64);
        let split = split_dataset(&labels, &names, cfg.ratios, fold_seed)?;
        let pick = |idx: &[usize]| -> (Vec<&[f32]>, Vec<usize>) {
            idx.iter()
                .map(|&i| (ds.samples[i].values.as_slice(), labels[i]))
                .unzip()
        };
        let (tx, ty) = pick(&split.train);
        let (vx, vy) = pick(&split.val);
        let (sx, sy) = pick(&split.test);
        let wrap = |source| EvalError::Fold { fold, source };
        let model = Model::<f32>::build(arch.clone(), fold_seed)
            .and_then(|m| m.with_label_map(names.clone()))
            .map_err(wrap)?;
        let train_cfg = TrainConfig {
            seed: fold_seed,
            ..cfg.train.clone()
        };
        let (model, _) = train_split(model, (&tx, &ty), (&vx, &vy), &train_cfg).map_err(wrap)?;
        let probs: Vec<Vec<f64>> = model
            .probabilities(&sx)
            .map_err(wrap)?
            .into_iter()
            .map(|p| p.into_iter().map(f64::from).collect())
            .collect();
        let fold_report = compute_metrics(&probs, &sy, &names)?;
        log::info!(
            "fold {fold}: macro-F1 {:.4}, accuracy {:.4}",
            fold_report.macro_f1,
            fold_report.accuracy
        );
        folds.push(FoldMetrics {
            macro_f1: fold_report.macro_f1,
            accuracy: fold_report.accuracy,
            test_size: sy.len(),
        });
        all_probs.extend(probs);
        all_truths.extend(sy);
    }
    let mut report = compute_metrics(&all_probs, &all_truths, &names)?;
    report.set_folds(folds);
    Ok(report)
}
