//! Fully connected layer: out = x * W + b with bias broadcast over the
//! batch. Backward is the exact adjoint.

use crate::error::{Error, Result};
use crate::tensor::{matmul_slices, Element, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<E: Element> {
    /// Row-major (fan_in, fan_out).
    pub weights: Vec<E>,
    pub bias: Vec<E>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl<E: Element> DenseLayer<E> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: vec![E::zero(); fan_in * fan_out],
            bias: vec![E::zero(); fan_out],
            fan_in,
            fan_out,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

fn dense_dims<E: Element>(x: &Tensor<E>, fan_in: usize) -> Result<usize> {
    let d = x.shape().dims();
    if d.len() != 2 {
        return Err(Error::shape("dense input must be rank 2 (n, fan_in)"));
    }
    if d[1] != fan_in {
        return Err(Error::shape(format!(
            "input fan {} does not match layer fan_in {fan_in}",
            d[1]
        )));
    }
    Ok(d[0])
}

pub fn dense_forward<E: Element>(x: &Tensor<E>, layer: &DenseLayer<E>) -> Result<Tensor<E>> {
    let n = dense_dims(x, layer.fan_in)?;
    let mut out = Tensor::zeros(Shape::new(&[n, layer.fan_out])?);
    matmul_slices(
        x.data(),
        &layer.weights,
        out.data_mut(),
        n,
        layer.fan_in,
        layer.fan_out,
    );
    for row in out.data_mut().chunks_mut(layer.fan_out) {
        for (v, &b) in row.iter_mut().zip(layer.bias.iter()) {
            *v = *v + b;
        }
    }
    Ok(out)
}

pub struct DenseGrads<E: Element> {
    pub grad_x: Tensor<E>,
    pub grad_weights: Vec<E>,
    pub grad_bias: Vec<E>,
}

pub fn dense_backward<E: Element>(
    grad_out: &Tensor<E>,
    x: &Tensor<E>,
    layer: &DenseLayer<E>,
) -> Result<DenseGrads<E>> {
    let n = dense_dims(x, layer.fan_in)?;
    let expect = Shape::new(&[n, layer.fan_out])?;
    if grad_out.shape() != &expect {
        return Err(Error::shape(format!(
            "grad_out shape {} does not match output shape {}",
            grad_out.shape(),
            expect
        )));
    }
    let (fi, fo) = (layer.fan_in, layer.fan_out);
    let gd = grad_out.data();

    let mut grad_bias = vec![E::zero(); fo];
    for row in gd.chunks(fo) {
        for (gb, &g) in grad_bias.iter_mut().zip(row.iter()) {
            *gb = *gb + g;
        }
    }

    // grad_w[i][o] = sum_s x[s][i] * gout[s][o], sample-ascending.
    let mut grad_weights = vec![E::zero(); fi * fo];
    let xd = x.data();
    for s in 0..n {
        let xrow = &xd[s * fi..(s + 1) * fi];
        let grow = &gd[s * fo..(s + 1) * fo];
        for (i, &xv) in xrow.iter().enumerate() {
            let dst = &mut grad_weights[i * fo..(i + 1) * fo];
            for (d, &g) in dst.iter_mut().zip(grow.iter()) {
                *d = *d + xv * g;
            }
        }
    }

    // grad_x = gout * W^T
    let mut w_t = vec![E::zero(); fi * fo];
    for i in 0..fi {
        for o in 0..fo {
            w_t[o * fi + i] = layer.weights[i * fo + o];
        }
    }
    let mut grad_x = Tensor::zeros(x.shape().clone());
    matmul_slices(gd, &w_t, grad_x.data_mut(), n, fo, fi);

    Ok(DenseGrads {
        grad_x,
        grad_weights,
        grad_bias,
    })
}
