use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BnStats, Layer, Mode};
use super::model::{argmax, cross_entropy, Model};
use super::ClassifierError;
use crate::features::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Share of each class held out for validation by [`train`].
    pub validation_fraction: f64,
    /// Stop after this many epochs without the validation loss dropping
    /// more than `min_delta` below its best. The weights of the lowest-loss
    /// epoch are restored either way.
    pub patience: Option<usize>,
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            validation_fraction: 0.1,
            patience: Some(5),
            min_delta: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie strictly between 0 and 1");
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad("min_delta must be finite and non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training cross-entropy with batch statistics and dropout off.
    pub loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
}

/// Writes `epoch,loss,train_acc,val_acc` rows.
pub fn write_history_csv<W: Write>(history: &TrainHistory, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss", "train_acc", "val_acc"])?;
    for e in &history.epochs {
        out.write_record([
            e.epoch.to_string(),
            e.loss.to_string(),
            e.train_acc.to_string(),
            e.val_acc.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

enum OptState {
    Sgd {
        velocity: Vec<Vec<f32>>,
    },
    Adam {
        m: Vec<Vec<f32>>,
        v: Vec<Vec<f32>>,
        step: i32,
    },
}

const MOMENTUM: f32 = 0.9;
const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl OptState {
    fn new(kind: Optimizer, model: &Model<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = model
            .param_tensors()
            .into_iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        match kind {
            Optimizer::SgdMomentum => OptState::Sgd { velocity: zeros },
            Optimizer::Adam => OptState::Adam {
                m: zeros.clone(),
                v: zeros,
                step: 0,
            },
        }
    }

    fn step(&mut self, model: &mut Model<f32>, grads: &[Vec<f32>], lr: f32) {
        match self {
            OptState::Sgd { velocity } => model.visit_params_mut(|k, w| {
                for ((w, g), vel) in w.iter_mut().zip(&grads[k]).zip(velocity[k].iter_mut()) {
                    *vel = MOMENTUM * *vel + g;
                    *w -= lr * *vel;
                }
            }),
            OptState::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - BETA1.powi(*step);
                let c2 = 1.0 - BETA2.powi(*step);
                model.visit_params_mut(|k, w| {
                    for (((w, g), m), v) in w.iter_mut().zip(&grads[k]).zip(m[k].iter_mut()).zip(v[k].iter_mut()) {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                });
            }
        }
    }
}

/// Per-class holdout: `round(n·fraction)` of each class, clamped so both
/// sides keep at least one sample when the class has two or more.
fn stratified_holdout(labels: &[usize], classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let k = if n < 2 {
            0
        } else {
            ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
        };
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Maps dataset label indices onto the model's label map.
fn model_labels(model: &Model<f32>, ds: &Dataset) -> Result<Vec<usize>, ClassifierError> {
    if ds.header.windows != model.arch.windows {
        return Err(ClassifierError::ShapeMismatch {
            expected: model.input_len(),
            got: 4 * ds.header.windows,
        });
    }
    let lookup: Vec<Option<usize>> = ds
        .header
        .label_map
        .iter()
        .map(|name| model.label_map.iter().position(|l| l == name))
        .collect();
    ds.samples
        .iter()
        .map(|s| {
            lookup[s.label].ok_or_else(|| {
                ClassifierError::Config(format!(
                    "dataset label `{}` is not in the model's label map",
                    ds.header.label_map[s.label]
                ))
            })
        })
        .collect()
}

/// Trains on `ds`, holding out `cfg.validation_fraction` of each class.
pub fn train(
    model: Model<f32>,
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainHistory), ClassifierError> {
    cfg.validate()?;
    let labels = model_labels(&model, ds)?;
    let (tr, va) = stratified_holdout(&labels, model.num_classes(), cfg.validation_fraction, cfg.seed);
    let pick = |idx: &[usize]| -> (Vec<&[f32]>, Vec<usize>) {
        idx.iter()
            .map(|&i| (ds.samples[i].values.as_slice(), labels[i]))
            .unzip()
    };
    let (train_x, train_y) = pick(&tr);
    let (val_x, val_y) = pick(&va);
    let model = model
        .with_normalization(ds.header.scheme)
        .with_trained_on(Some(ds.header.config_hash.clone()));
    train_split(model, (&train_x, &train_y), (&val_x, &val_y), cfg)
}

type Split<'a, 'b> = (&'a [&'b [f32]], &'a [usize]);

/// Trains on explicit train and validation splits (labels are model indices).
pub fn train_split(
    mut model: Model<f32>,
    (train_x, train_y): Split<'_, '_>,
    (val_x, val_y): Split<'_, '_>,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainHistory), ClassifierError> {
    cfg.validate()?;
    let classes = model.num_classes();
    let mut present: Vec<usize> = train_y.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(ClassifierError::Config("training needs at least two classes".into()));
    }
    if let Some(&bad) = train_y.iter().chain(val_y).find(|&&y| y >= classes) {
        return Err(ClassifierError::Config(format!(
            "label index {bad} outside the model's classes"
        )));
    }

    let lr = cfg.learning_rate as f32;
    let mut opt = OptState::new(cfg.optimizer, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut calib_order = order.clone();
    calib_order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ CALIBRATION_SALT));
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<Layer<f32>>)> = None;
    let mut reference = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&[f32]> = batch.iter().map(|&i| train_x[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let x = model.input_tensor(&inputs)?;
            let pass = model.pass(x, Mode::Train, &mut rng, true);
            let (loss, dlogits, _) = cross_entropy(&pass.logits, &labels, classes);
            if !loss.is_finite() {
                return Err(ClassifierError::Divergence { epoch, batch: b });
            }
            let grads = model.backward(pass.caches, dlogits, batch.len());
            opt.step(&mut model, &grads, lr);
        }

        let (loss, train_acc) = calibrate(&mut model, train_x, train_y, &calib_order, cfg.batch_size)?;
        if !loss.is_finite() {
            return Err(ClassifierError::Divergence { epoch, batch: 0 });
        }
        let (val_loss, val_acc) = evaluate(&model, val_x, val_y)?;
        history.epochs.push(EpochRecord {
            epoch,
            loss,
            train_acc,
            val_loss,
            val_acc,
        });
        log::debug!(
            "epoch {epoch}: loss {loss:.4} train_acc {train_acc:.3} val_loss {val_loss:.4} val_acc {val_acc:.3}"
        );

        let monitored = if val_y.is_empty() { loss } else { val_loss };
        if best.as_ref().is_none_or(|(l, _)| monitored < *l) {
            best = Some((monitored, model.layers.clone()));
            history.best_epoch = epoch;
        }
        if monitored < reference - cfg.min_delta || reference.is_infinite() {
            reference = monitored;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    if let Some((_, layers)) = best {
        model.layers = layers;
    }
    Ok((model, history))
}

const CALIBRATION_SALT: u64 = 0x5eed_ca1b;

/// Recomputes batch-norm running statistics from the whole training set,
/// batched in a fixed shuffled order with dropout off, and returns the loss
/// and accuracy of that pass.
fn calibrate(
    model: &mut Model<f32>,
    xs: &[&[f32]],
    ys: &[usize],
    order: &[usize],
    batch_size: usize,
) -> Result<(f64, f64), ClassifierError> {
    let classes = model.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let (mut loss, mut correct) = (0.0, 0);
    for batch in order.chunks(batch_size) {
        let xb: Vec<&[f32]> = batch.iter().map(|&i| xs[i]).collect();
        let yb: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
        let x = model.input_tensor(&xb)?;
        let pass = model.pass(x, Mode::Calibrate, &mut rng, false);
        let (l, _, c) = cross_entropy(&pass.logits, &yb, classes);
        loss += l * yb.len() as f64;
        correct += c;
        let weight = yb.len() as f64;
        if sums.is_empty() {
            sums = pass
                .stats
                .iter()
                .map(|(m, _)| (vec![0.0; m.len()], vec![0.0; m.len()]))
                .collect();
        }
        for ((s1, s2), (mean, var)) in sums.iter_mut().zip(&pass.stats) {
            for c in 0..mean.len() {
                s1[c] += weight * mean[c];
                s2[c] += weight * (var[c] + mean[c] * mean[c]);
            }
        }
    }
    let n = xs.len() as f64;
    let stats: Vec<BnStats> = sums
        .into_iter()
        .map(|(s1, s2)| {
            let mean: Vec<f64> = s1.iter().map(|v| v / n).collect();
            let var = s2.iter().zip(&mean).map(|(v, m)| (v / n - m * m).max(0.0)).collect();
            (mean, var)
        })
        .collect();
    model.set_running_stats(&stats);
    Ok((loss / n, correct as f64 / n))
}

fn evaluate(model: &Model<f32>, xs: &[&[f32]], ys: &[usize]) -> Result<(f64, f64), ClassifierError> {
    if xs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let probs = model.probabilities(xs)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, &y) in probs.iter().zip(ys) {
        loss -= (p[y] as f64).max(f64::MIN_POSITIVE).ln();
        if argmax(p) == y {
            correct += 1;
        }
    }
    Ok((loss / xs.len() as f64, correct as f64 / xs.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ArchConfig;

    /// Class 0 puts all mass in the first window, class 1 in the last.
    pub(crate) fn edge_dataset(windows: usize, per_class: usize) -> (Vec<Vec<f32>>, Vec<usize>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..per_class {
            for class in 0..2 {
                let mut v = vec![0.0f32; 4 * windows];
                let col = if class == 0 { 0 } else { windows - 1 };
                let amount = 1.0 + (i % 5) as f32;
                for row in 0..4 {
                    v[row * windows + col] = amount * if row >= 2 { 3.0 } else { 1.0 };
                }
                xs.push(v);
                ys.push(class);
            }
        }
        (xs, ys)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-2,
            patience: None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_edges_are_learned() {
        let (xs, ys) = edge_dataset(16, 20);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let model = Model::<f32>::build(ArchConfig::tiny(16, 2), 1).unwrap();
        let (_, hist) = train_split(model, (&refs, &ys), (&refs[..4], &ys[..4]), &quick_cfg()).unwrap();
        let last = hist.epochs.last().unwrap();
        assert!(last.train_acc >= 0.99, "train accuracy {}", last.train_acc);
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let (xs, ys) = edge_dataset(16, 6);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let model = Model::<f32>::build(ArchConfig::tiny(16, 2), 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 4,
            ..quick_cfg()
        };
        let (trained, hist) = train_split(model.clone(), (&refs, &ys), (&refs[..2], &ys[..2]), &cfg).unwrap();
        assert_eq!(trained.param_tensors(), model.param_tensors());
        let losses: Vec<f64> = hist.epochs.iter().map(|e| e.loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]), "{losses:?}");
    }

    #[test]
    fn patience_stops_a_stalled_run() {
        let (xs, ys) = edge_dataset(16, 6);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let model = Model::<f32>::build(ArchConfig::tiny(16, 2), 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 50,
            patience: Some(3),
            ..quick_cfg()
        };
        let (_, hist) = train_split(model, (&refs, &ys), (&refs[..2], &ys[..2]), &cfg).unwrap();
        assert_eq!(hist.epochs.len(), 4);
        assert_eq!(hist.best_epoch, 0);
    }

    #[test]
    fn training_is_reproducible() {
        let (xs, ys) = edge_dataset(16, 6);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let cfg = TrainConfig {
            epochs: 3,
            ..quick_cfg()
        };
        let run = || {
            let model = Model::<f32>::build(ArchConfig::tiny(16, 2), 3).unwrap();
            train_split(model, (&refs, &ys), (&refs[..2], &ys[..2]), &cfg).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (xs, ys) = edge_dataset(16, 6);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let model = Model::<f32>::build(ArchConfig::tiny(16, 2), 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e30,
            optimizer: Optimizer::SgdMomentum,
            ..quick_cfg()
        };
        assert!(matches!(
            train_split(model, (&refs, &ys), (&refs[..2], &ys[..2]), &cfg),
            Err(ClassifierError::Divergence { .. })
        ));
    }

    #[test]
    fn single_class_is_rejected() {
        let (xs, _) = edge_dataset(16, 3);
        let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let ys = vec![0; refs.len()];
        let model = Model::<f32>::build(ArchConfig::tiny(16, 2), 3).unwrap();
        assert!(train_split(model, (&refs, &ys), (&refs, &ys), &quick_cfg()).is_err());
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let (tr, va) = stratified_holdout(&labels, 3, 0.2, 1);
        assert_eq!(va.len(), 6);
        assert_eq!(tr.len() + va.len(), 30);
        assert!(va.iter().all(|i| !tr.contains(i)));
        for c in 0..3 {
            assert_eq!(va.iter().filter(|&&i| labels[i] == c).count(), 2);
        }
    }
}
