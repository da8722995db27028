use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchConfig, INPUT_CHANNELS, INPUT_HEIGHT};
use super::layers::{BatchNorm, BnStats, Cache, Conv, Grad, Layer, Mode, Tensor};
use super::scalar::Scalar;
use super::ClassifierError;
use crate::features::Normalization;

/// Convolutional classifier over MTAM inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<F = f32> {
    pub(crate) arch: ArchConfig,
    pub(crate) layers: Vec<Layer<F>>,
    pub(crate) label_map: Vec<String>,
    pub(crate) trained_on: Option<String>,
    pub(crate) normalization: Normalization,
}

pub(crate) struct Pass<F> {
    pub logits: Vec<F>,
    pub caches: Vec<Option<Cache<F>>>,
    pub stats: Vec<BnStats>,
}

fn init_conv<F: Scalar>(rng: &mut ChaCha8Rng, cin: usize, cout: usize, kh: usize, kw: usize) -> Layer<F> {
    let fan_in = cin * kh * kw;
    let bound = (6.0 / fan_in as f64).sqrt();
    Layer::Conv(Conv {
        cin,
        cout,
        kh,
        kw,
        weight: (0..cout * fan_in)
            .map(|_| F::lit(rng.random_range(-bound..bound)))
            .collect(),
        bias: vec![F::zero(); cout],
    })
}

impl<F: Scalar> Model<F> {
    /// Builds a freshly initialized model. Kernels are drawn uniformly in
    /// `±sqrt(6 / fan_in)`, biases start at zero and batch-norm at identity.
    pub fn build(arch: ArchConfig, seed: u64) -> Result<Self, ClassifierError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut cin = INPUT_CHANNELS;
        let block = |layers: &mut Vec<Layer<F>>,
                     rng: &mut ChaCha8Rng,
                     cin: usize,
                     f: usize,
                     kh: usize,
                     kw: usize,
                     pool: (usize, usize),
                     dropout: f64| {
            for c in [cin, f] {
                layers.push(init_conv(rng, c, f, kh, kw));
                layers.push(Layer::Relu);
                layers.push(Layer::BatchNorm(BatchNorm::identity(f)));
            }
            layers.push(Layer::MaxPool { ph: pool.0, pw: pool.1 });
            layers.push(Layer::Dropout { rate: dropout });
        };
        for b in &arch.blocks2d {
            block(
                &mut layers,
                &mut rng,
                cin,
                b.filters,
                b.kernel.0,
                b.kernel.1,
                b.pool,
                b.dropout,
            );
            cin = b.filters;
        }
        layers.push(init_conv(&mut rng, cin, arch.reduce_channels, 1, 1));
        cin = arch.reduce_channels;
        for b in &arch.blocks1d {
            block(
                &mut layers,
                &mut rng,
                cin,
                b.filters,
                1,
                b.kernel,
                (1, b.pool),
                b.dropout,
            );
            cin = b.filters;
        }
        layers.push(init_conv(&mut rng, cin, arch.num_classes, 1, 1));
        layers.push(Layer::GlobalAvgPool);
        let label_map = (0..arch.num_classes).map(|i| i.to_string()).collect();
        Ok(Self {
            arch,
            layers,
            label_map,
            trained_on: None,
            normalization: Normalization::None,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn label_map(&self) -> &[String] {
        &self.label_map
    }

    pub fn trained_on(&self) -> Option<&str> {
        self.trained_on.as_deref()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn input_len(&self) -> usize {
        INPUT_CHANNELS * INPUT_HEIGHT * self.arch.windows
    }

    pub fn with_label_map(mut self, labels: Vec<String>) -> Result<Self, ClassifierError> {
        if labels.len() != self.arch.num_classes {
            return Err(ClassifierError::Config(format!(
                "label map has {} entries for {} classes",
                labels.len(),
                self.arch.num_classes
            )));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(ClassifierError::Config("duplicate labels in label map".into()));
        }
        self.label_map = labels;
        Ok(self)
    }

    pub fn with_normalization(mut self, scheme: Normalization) -> Self {
        self.normalization = scheme;
        self
    }

    pub fn with_trained_on(mut self, digest: Option<String>) -> Self {
        self.trained_on = digest;
        self
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.weight.len() + c.bias.len(),
                Layer::BatchNorm(b) => 4 * b.gamma.len(),
                _ => 0,
            })
            .sum()
    }

    /// Converts every weight to another precision.
    pub fn cast<G: Scalar>(&self) -> Model<G> {
        let conv = |v: &[F]| -> Vec<G> { v.iter().map(|x| G::lit(x.to_f64().unwrap())).collect() };
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv {
                    cin: c.cin,
                    cout: c.cout,
                    kh: c.kh,
                    kw: c.kw,
                    weight: conv(&c.weight),
                    bias: conv(&c.bias),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool { ph, pw } => Layer::MaxPool { ph: *ph, pw: *pw },
                Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
            })
            .collect();
        Model {
            arch: self.arch.clone(),
            layers,
            label_map: self.label_map.clone(),
            trained_on: self.trained_on.clone(),
            normalization: self.normalization,
        }
    }

    pub(crate) fn input_tensor(&self, inputs: &[&[F]]) -> Result<Tensor<F>, ClassifierError> {
        let len = self.input_len();
        let mut x = Tensor::zeros(inputs.len(), INPUT_CHANNELS, INPUT_HEIGHT, self.arch.windows);
        for (i, sample) in inputs.iter().enumerate() {
            if sample.len() != len {
                return Err(ClassifierError::ShapeMismatch {
                    expected: len,
                    got: sample.len(),
                });
            }
            x.sample_mut(i).copy_from_slice(sample);
        }
        Ok(x)
    }

    /// Runs the layers; `upto` stops before that layer index.
    pub(crate) fn run_layers(
        &self,
        mut x: Tensor<F>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
        keep_cache: bool,
        upto: usize,
    ) -> (Tensor<F>, Vec<Option<Cache<F>>>, Vec<BnStats>) {
        let mut caches = Vec::with_capacity(upto);
        let mut stats = Vec::new();
        for layer in &self.layers[..upto] {
            let (y, cache) = layer.forward(x, mode, rng, keep_cache, &mut stats);
            caches.push(cache);
            x = y;
        }
        (x, caches, stats)
    }

    pub(crate) fn pass(&self, x: Tensor<F>, mode: Mode, rng: &mut ChaCha8Rng, keep_cache: bool) -> Pass<F> {
        let (out, caches, stats) = self.run_layers(x, mode, rng, keep_cache, self.layers.len());
        Pass {
            logits: out.data,
            caches,
            stats,
        }
    }

    /// Backpropagates `dlogits` (n × classes) through cached activations.
    /// Returns gradients in [`Model::visit_params_mut`] order.
    pub(crate) fn backward(&self, caches: Vec<Option<Cache<F>>>, dlogits: Vec<F>, batch: usize) -> Vec<Vec<F>> {
        let classes = self.arch.num_classes;
        let mut grad = Tensor {
            n: batch,
            c: classes,
            h: 1,
            w: 1,
            data: dlogits,
        };
        let mut grads: Vec<Grad<F>> = Vec::with_capacity(self.layers.len());
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let cache = cache.expect("forward pass kept caches");
            let (dx, g) = layer.backward(cache, grad, i > 0);
            grads.push(g);
            match dx {
                Some(dx) => grad = dx,
                None => break,
            }
        }
        grads.reverse();
        let mut flat = Vec::new();
        for g in grads {
            match g {
                Grad::Conv { dw, db } => {
                    flat.push(dw);
                    flat.push(db);
                }
                Grad::BatchNorm { dgamma, dbeta } => {
                    flat.push(dgamma);
                    flat.push(dbeta);
                }
                Grad::None => {}
            }
        }
        flat
    }

    /// Visits learnable tensors: conv weight and bias, batch-norm scale and shift.
    pub(crate) fn visit_params_mut(&mut self, mut f: impl FnMut(usize, &mut [F])) {
        let mut k = 0;
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    f(k, &mut c.weight);
                    f(k + 1, &mut c.bias);
                    k += 2;
                }
                Layer::BatchNorm(b) => {
                    f(k, &mut b.gamma);
                    f(k + 1, &mut b.beta);
                    k += 2;
                }
                _ => {}
            }
        }
    }

    pub(crate) fn param_tensors(&self) -> Vec<(String, Vec<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    out.push((format!("layer{i}.conv.weight"), c.weight.clone()));
                    out.push((format!("layer{i}.conv.bias"), c.bias.clone()));
                }
                Layer::BatchNorm(b) => {
                    out.push((format!("layer{i}.bn.gamma"), b.gamma.clone()));
                    out.push((format!("layer{i}.bn.beta"), b.beta.clone()));
                }
                _ => {}
            }
        }
        out
    }

    /// Replaces batch-norm running statistics, one entry per batch-norm layer.
    pub(crate) fn set_running_stats(&mut self, stats: &[BnStats]) {
        let mut it = stats.iter();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(b) = layer {
                let (mean, var) = it.next().expect("one stats entry per batch-norm layer");
                b.running_mean = mean.iter().map(|v| F::lit(*v)).collect();
                b.running_var = var.iter().map(|v| F::lit(*v)).collect();
            }
        }
    }

    /// Eval-mode class probabilities for a batch of flattened inputs.
    pub fn probabilities(&self, inputs: &[&[F]]) -> Result<Vec<Vec<F>>, ClassifierError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(32) {
            let x = self.input_tensor(chunk)?;
            let pass = self.pass(x, Mode::Eval, &mut rng, false);
            out.extend(pass.logits.chunks_exact(self.arch.num_classes).map(softmax));
        }
        Ok(out)
    }

    /// Train-mode probabilities: dropout sampled from `seed`, batch statistics.
    pub fn probabilities_train_mode(&self, inputs: &[&[F]], seed: u64) -> Result<Vec<Vec<F>>, ClassifierError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = self.input_tensor(inputs)?;
        let pass = self.pass(x, Mode::Train, &mut rng, false);
        Ok(pass.logits.chunks_exact(self.arch.num_classes).map(softmax).collect())
    }

    /// Penultimate features: the globally averaged input of the final
    /// pointwise convolution (logits are an affine map of this vector).
    pub fn embeddings(&self, inputs: &[&[F]]) -> Result<Vec<Vec<F>>, ClassifierError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let upto = self.layers.len() - 2;
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(32) {
            let x = self.input_tensor(chunk)?;
            let (h, _, _) = self.run_layers(x, Mode::Eval, &mut rng, false, upto);
            let p = h.h * h.w;
            for s in 0..h.n {
                out.push(
                    h.sample(s)
                        .chunks_exact(p)
                        .map(|plane| plane.iter().copied().sum::<F>() / F::lit(p as f64))
                        .collect(),
                );
            }
        }
        Ok(out)
    }

    #[cfg(test)]
    pub(crate) fn final_conv_mut(&mut self) -> &mut Conv<F> {
        let n = self.layers.len();
        match &mut self.layers[n - 2] {
            Layer::Conv(c) => c,
            _ => unreachable!("final layer pair is conv + GAP"),
        }
    }
}

pub(crate) fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|l| (*l - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy over the batch, its logit gradient and the number of
/// argmax hits.
pub(crate) fn cross_entropy<F: Scalar>(logits: &[F], labels: &[usize], classes: usize) -> (f64, Vec<F>, usize) {
    let n = labels.len();
    let mut loss = 0.0;
    let mut correct = 0;
    let mut grad = Vec::with_capacity(logits.len());
    let inv_n = F::lit(1.0 / n as f64);
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        let p = softmax(row);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max).to_f64().unwrap();
        let lse = max + row.iter().map(|l| (l.to_f64().unwrap() - max).exp()).sum::<f64>().ln();
        loss += lse - row[y].to_f64().unwrap();
        if argmax(&p) == y {
            correct += 1;
        }
        for (c, pc) in p.into_iter().enumerate() {
            let target = if c == y { F::one() } else { F::zero() };
            grad.push((pc - target) * inv_n);
        }
    }
    (loss / n as f64, grad, correct)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
