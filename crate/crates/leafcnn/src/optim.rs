//! Categorical cross-entropy with the fused softmax gradient, the Adam
//! optimizer, and classification metrics.

use crate::error::{Error, Result};
use crate::layers::network::{Gradients, Network};
use crate::tensor::{argmax, Element, Tensor};

/// Loss and batch accuracy of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub mean_loss: f64,
    pub batch_accuracy: f64,
}

/// Probabilities below this are clamped before the log; single-precision
/// softmax can underflow to exactly zero.
const LOG_CLAMP: f64 = 1e-12;

fn check_labels<E: Element>(probs: &Tensor<E>, labels: &[usize]) -> Result<(usize, usize)> {
    let d = probs.shape().dims();
    if d.len() != 2 {
        return Err(Error::shape("probs must be rank 2 (n, k)"));
    }
    let (n, k) = (d[0], d[1]);
    if labels.len() != n {
        return Err(Error::argument(format!(
            "{} labels for {} rows",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::argument(format!("label {bad} out of range [0,{k})")));
    }
    Ok((n, k))
}

/// Mean over the batch of -log p(true class).
pub fn cross_entropy<E: Element>(probs: &Tensor<E>, labels: &[usize]) -> Result<LossValue> {
    let (n, k) = check_labels(probs, labels)?;
    let mut total = 0.0;
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = &probs.data()[i * k..(i + 1) * k];
        let p = row[label].to_f64().max(LOG_CLAMP);
        total += -p.ln();
        if argmax(row)? == label {
            correct += 1;
        }
    }
    Ok(LossValue {
        mean_loss: total / n as f64,
        batch_accuracy: correct as f64 / n as f64,
    })
}

/// Gradient of mean cross-entropy with respect to the logits:
/// (p - one_hot) / n. Valid only when `probs` came from a softmax over
/// those logits.
pub fn softmax_xent_gradient<E: Element>(
    probs: &Tensor<E>,
    labels: &[usize],
) -> Result<Tensor<E>> {
    let (n, k) = check_labels(probs, labels)?;
    let inv_n = E::from_f64(1.0 / n as f64);
    let mut grad = probs.clone();
    let data = grad.data_mut();
    for (i, &label) in labels.iter().enumerate() {
        let row = &mut data[i * k..(i + 1) * k];
        row[label] = row[label] - E::one();
        for v in row.iter_mut() {
            *v = *v * inv_n;
        }
    }
    Ok(grad)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<E: Element>(probs: &Tensor<E>, labels: &[usize]) -> Result<f64> {
    let (n, k) = check_labels(probs, labels)?;
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if argmax(&probs.data()[i * k..(i + 1) * k])? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / n as f64)
}

/// First/second moment accumulators, one pair of blocks per parameter
/// block of the network.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element> {
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<E: Element> AdamState<E> {
    pub fn new(net: &Network<E>, lr: f64) -> Self {
        let blocks = net.param_blocks();
        Self {
            m: blocks.iter().map(|b| vec![E::zero(); b.len()]).collect(),
            v: blocks.iter().map(|b| vec![E::zero(); b.len()]).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One Adam step over every parameter block, in place.
pub fn adam_step<E: Element>(
    net: &mut Network<E>,
    grads: &Gradients<E>,
    state: &mut AdamState<E>,
) -> Result<()> {
    let grad_blocks = grads.blocks();
    let mut param_blocks = net.param_blocks_mut();
    if grad_blocks.len() != param_blocks.len() || param_blocks.len() != state.m.len() {
        return Err(Error::shape("gradient/parameter/state block counts differ"));
    }
    for (g, p) in grad_blocks.iter().zip(param_blocks.iter()) {
        if g.len() != p.len() {
            return Err(Error::shape("gradient block length mismatch"));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite gradient in adam_step".into()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = E::from_f64(state.beta1);
    let b2 = E::from_f64(state.beta2);
    let one = E::one();
    let bc1 = E::from_f64(1.0 - state.beta1.powi(t));
    let bc2 = E::from_f64(1.0 - state.beta2.powi(t));
    let lr = E::from_f64(state.lr);
    let eps = E::from_f64(state.epsilon);
    for (((p, g), m), v) in param_blocks
        .iter_mut()
        .zip(grad_blocks.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
