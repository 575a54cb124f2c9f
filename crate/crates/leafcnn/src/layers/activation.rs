//! ReLU, flatten and softmax.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Elementwise max(x, 0), written in place. The backward mask can be read
/// off the output: gradient passes where out > 0. With the subgradient at 0
/// fixed to 0, this is identical to masking on the input.
pub fn relu_in_place<E: Element>(x: &mut Tensor<E>) {
    for v in x.data_mut() {
        if *v < E::zero() {
            *v = E::zero();
        }
    }
}

pub fn relu<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let mut out = x.clone();
    relu_in_place(&mut out);
    out
}

/// `out` is the retained forward output.
pub fn relu_backward<E: Element>(grad_out: &Tensor<E>, out: &Tensor<E>) -> Result<Tensor<E>> {
    if grad_out.shape() != out.shape() {
        return Err(Error::shape(format!(
            "relu grad shape {} vs cached {}",
            grad_out.shape(),
            out.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(out.data().iter())
        .map(|(&g, &o)| if o > E::zero() { g } else { E::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape().clone(), data)
}

/// (n,h,w,c) -> (n, h*w*c), row-major, so this is just a reshape.
pub fn flatten<E: Element>(x: Tensor<E>) -> Result<Tensor<E>> {
    let d = x.shape().dims();
    if d.len() != 4 {
        return Err(Error::shape("flatten expects rank 4 input"));
    }
    let (n, rest) = (d[0], d[1] * d[2] * d[3]);
    x.reshape(Shape::new(&[n, rest])?)
}

pub fn flatten_backward<E: Element>(grad_out: Tensor<E>, input_dims: &[usize]) -> Result<Tensor<E>> {
    grad_out.reshape(Shape::new(input_dims)?)
}

/// Row-wise softmax with the mandatory max subtraction.
pub fn softmax<E: Element>(logits: &Tensor<E>) -> Result<Tensor<E>> {
    let d = logits.shape().dims();
    if d.len() != 2 {
        return Err(Error::shape("softmax expects rank 2 (n, k)"));
    }
    if !logits.all_finite() {
        return Err(Error::Numeric("non-finite logits in softmax".into()));
    }
    let k = d[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let mut max = row[0];
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = E::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}
