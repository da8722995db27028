use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Mode;
use super::model::{cross_entropy, Model};
use super::scalar::Scalar;
use super::ClassifierError;

/// Weights checked per tensor; smaller tensors are checked exhaustively.
const SAMPLES_PER_TENSOR: usize = 100;
/// Gradients smaller than this are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(tensor name, worst relative error)` per learnable tensor.
    pub per_tensor: Vec<(String, f64)>,
}

/// Compares backpropagated gradients of the mean cross-entropy with central
/// differences `(L(w+eps) − L(w−eps)) / 2eps`, in `f64` and eval mode
/// (dropout off, batch-norm frozen at its running statistics).
///
/// The relative error of a weight is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<F: Scalar>(
    model: &Model<F>,
    inputs: &[&[f64]],
    labels: &[usize],
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, ClassifierError> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(ClassifierError::Config(
            "need one label per input and at least one input".into(),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(ClassifierError::Config("eps must be positive".into()));
    }
    let mut m: Model<f64> = model.cast();
    let classes = m.num_classes();
    let loss = |m: &Model<f64>| -> Result<f64, ClassifierError> {
        let x = m.input_tensor(inputs)?;
        let pass = m.pass(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), false);
        Ok(cross_entropy(&pass.logits, labels, classes).0)
    };

    let x = m.input_tensor(inputs)?;
    let pass = m.pass(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), true);
    let (_, dlogits, _) = cross_entropy(&pass.logits, labels, classes);
    let analytic = m.backward(pass.caches, dlogits, inputs.len());

    let names: Vec<String> = m.param_tensors().into_iter().map(|(n, _)| n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        per_tensor: Vec::with_capacity(names.len()),
    };
    for (k, name) in names.into_iter().enumerate() {
        let len = analytic[k].len();
        let picks: Vec<usize> = if len <= SAMPLES_PER_TENSOR {
            (0..len).collect()
        } else {
            sample(&mut rng, len, SAMPLES_PER_TENSOR).into_vec()
        };
        let mut worst: f64 = 0.0;
        for i in picks {
            let original = nudge(&mut m, k, i, None);
            nudge(&mut m, k, i, Some(original + eps));
            let up = loss(&m)?;
            nudge(&mut m, k, i, Some(original - eps));
            let down = loss(&m)?;
            nudge(&mut m, k, i, Some(original));
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_tensor.push((name, worst));
    }
    Ok(report)
}

/// Reads weight `i` of tensor `k`, optionally overwriting it.
fn nudge(m: &mut Model<f64>, k: usize, i: usize, set: Option<f64>) -> f64 {
    let mut old = 0.0;
    m.visit_params_mut(|idx, w| {
        if idx == k {
            old = w[i];
            if let Some(v) = set {
                w[i] = v;
            }
        }
    });
    old
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::layers::Layer;
    use crate::classifier::ArchConfig;

    fn inputs(windows: usize, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|s| {
                (0..4 * windows)
                    .map(|j| (((j * 37 + s * 11) % 17) as f64 / 17.0 - 0.3) * 1.7)
                    .collect()
            })
            .collect()
    }

    /// Batch-norm running statistics away from identity so the frozen
    /// normalization is exercised.
    fn model() -> Model<f64> {
        let mut m = Model::<f64>::build(ArchConfig::tiny(16, 3), 11).unwrap();
        for layer in &mut m.layers {
            if let Layer::BatchNorm(b) = layer {
                for (c, (mean, var)) in b.running_mean.iter_mut().zip(b.running_var.iter_mut()).enumerate() {
                    *mean = 0.05 * c as f64;
                    *var = 0.5 + 0.25 * c as f64;
                }
                for (c, g) in b.gamma.iter_mut().enumerate() {
                    *g = 0.8 + 0.1 * c as f64;
                }
            }
        }
        m
    }

    #[test]
    fn tiny_architecture_passes() {
        let xs = inputs(16, 3);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let report = gradient_check(&model(), &refs, &[0, 1, 2], 1e-5, 1).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        assert!(report.checked > 100);
    }

    #[test]
    fn final_bias_gradient_is_softmax_minus_onehot_at_zero_input() {
        let m = model();
        let zero = vec![0.0; 64];
        let x = m.input_tensor(&[zero.as_slice()]).unwrap();
        let pass = m.pass(x, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0), true);
        let probs = super::super::model::softmax(&pass.logits);
        let (_, dlogits, _) = cross_entropy(&pass.logits, &[1], 3);
        let grads = m.backward(pass.caches, dlogits, 1);
        let bias = &grads[grads.len() - 1];
        for c in 0..3 {
            let expected = probs[c] - if c == 1 { 1.0 } else { 0.0 };
            assert!((bias[c] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn halving_eps_does_not_blow_up_the_error() {
        let xs = inputs(16, 2);
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let m = model();
        let coarse = gradient_check(&m, &refs, &[0, 2], 1e-4, 5).unwrap();
        let fine = gradient_check(&m, &refs, &[0, 2], 5e-5, 5).unwrap();
        assert!(
            fine.max_rel_error <= 4.0 * coarse.max_rel_error.max(1e-10),
            "{coarse:?} {fine:?}"
        );
    }
}
