//! 3x3 valid convolution, stride 1, channels-last. The forward pass lowers
//! each sample to an im2col patch matrix and multiplies by the kernel
//! matrix; the backward pass is the exact adjoint of that contraction.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{matmul_slices, Element, Shape, Tensor};

pub const KERNEL: usize = 3;

/// Kernels stored row-major as (kh, kw, c_in, c_out), bias per output
/// channel. Flattened, the kernels are exactly the (9*c_in, c_out) matrix
/// the im2col product needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<E: Element> {
    pub kernels: Vec<E>,
    pub bias: Vec<E>,
    pub c_in: usize,
    pub c_out: usize,
}

impl<E: Element> ConvLayer<E> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            kernels: vec![E::zero(); KERNEL * KERNEL * c_in * c_out],
            bias: vec![E::zero(); c_out],
            c_in,
            c_out,
        }
    }

    pub fn parameter_count(&self) -> usize {
        KERNEL * KERNEL * self.c_in * self.c_out + self.c_out
    }
}

fn conv_dims<E: Element>(x: &Tensor<E>, layer_c_in: usize) -> Result<(usize, usize, usize, usize)> {
    let d = x.shape().dims();
    if d.len() != 4 {
        return Err(Error::shape("conv input must be rank 4 (n,h,w,c)"));
    }
    let (n, h, w, c) = (d[0], d[1], d[2], d[3]);
    if h < KERNEL || w < KERNEL {
        return Err(Error::shape(format!(
            "spatial extent {h}x{w} below kernel size {KERNEL}"
        )));
    }
    if c != layer_c_in {
        return Err(Error::shape(format!(
            "input has {c} channels, layer expects {layer_c_in}"
        )));
    }
    Ok((n, h, w, c))
}

/// Copy the 3x3 neighbourhood of every output position of one sample into a
/// (out_h*out_w, 9*c_in) row-major matrix.
fn im2col<E: Element>(sample: &[E], h: usize, w: usize, c: usize, patches: &mut [E]) {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let cols = KERNEL * KERNEL * c;
    debug_assert_eq!(patches.len(), oh * ow * cols);
    for i in 0..oh {
        for j in 0..ow {
            let row = &mut patches[(i * ow + j) * cols..(i * ow + j + 1) * cols];
            let mut dst = 0;
            for di in 0..KERNEL {
                let src = ((i + di) * w + j) * c;
                row[dst..dst + KERNEL * c].copy_from_slice(&sample[src..src + KERNEL * c]);
                dst += KERNEL * c;
            }
        }
    }
}

/// Scatter-add of an im2col-shaped gradient back onto the input sample.
fn col2im_add<E: Element>(grad_patches: &[E], h: usize, w: usize, c: usize, grad_sample: &mut [E]) {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let cols = KERNEL * KERNEL * c;
    for i in 0..oh {
        for j in 0..ow {
            let row = &grad_patches[(i * ow + j) * cols..(i * ow + j + 1) * cols];
            let mut src = 0;
            for di in 0..KERNEL {
                let dst = ((i + di) * w + j) * c;
                for (g, v) in grad_sample[dst..dst + KERNEL * c]
                    .iter_mut()
                    .zip(row[src..src + KERNEL * c].iter())
                {
                    *g = *g + *v;
                }
                src += KERNEL * c;
            }
        }
    }
}

pub fn conv3x3_valid_forward<E: Element>(
    x: &Tensor<E>,
    layer: &ConvLayer<E>,
) -> Result<Tensor<E>> {
    let (n, h, w, c) = conv_dims(x, layer.c_in)?;
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let c_out = layer.c_out;
    let cols = KERNEL * KERNEL * c;
    let mut out = Tensor::zeros(Shape::new(&[n, oh, ow, c_out])?);
    let sample_in = h * w * c;
    let sample_out = oh * ow * c_out;
    let xd = x.data();
    parallel::for_each_chunk_mut(out.data_mut(), sample_out, |s, out_s| {
        let mut patches = vec![E::zero(); oh * ow * cols];
        im2col(&xd[s * sample_in..(s + 1) * sample_in], h, w, c, &mut patches);
        matmul_slices(&patches, &layer.kernels, out_s, oh * ow, cols, c_out);
        for row in out_s.chunks_mut(c_out) {
            for (v, &b) in row.iter_mut().zip(layer.bias.iter()) {
                *v = *v + b;
            }
        }
    });
    Ok(out)
}

pub struct ConvGrads<E: Element> {
    pub grad_x: Tensor<E>,
    pub grad_kernels: Vec<E>,
    pub grad_bias: Vec<E>,
}

/// Adjoint of the forward contraction. `x` is the retained forward input.
pub fn conv3x3_valid_backward<E: Element>(
    grad_out: &Tensor<E>,
    x: &Tensor<E>,
    layer: &ConvLayer<E>,
) -> Result<ConvGrads<E>> {
    let (n, h, w, c) = conv_dims(x, layer.c_in)?;
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let c_out = layer.c_out;
    let expect = Shape::new(&[n, oh, ow, c_out])?;
    if grad_out.shape() != &expect {
        return Err(Error::shape(format!(
            "grad_out shape {} does not match forward output {}",
            grad_out.shape(),
            expect
        )));
    }
    let cols = KERNEL * KERNEL * c;
    let sample_in = h * w * c;
    let sample_out = oh * ow * c_out;
    let xd = x.data();
    let gd = grad_out.data();

    // Bias gradient: plain ascending sum over every output position.
    let mut grad_bias = vec![E::zero(); c_out];
    for row in gd.chunks(c_out) {
        for (gb, &g) in grad_bias.iter_mut().zip(row.iter()) {
            *gb = *gb + g;
        }
    }

    // Kernel matrix transposed once: (c_out, 9*c_in) for the grad_x product.
    let mut ker_t = vec![E::zero(); cols * c_out];
    for r in 0..cols {
        for o in 0..c_out {
            ker_t[o * cols + r] = layer.kernels[r * c_out + o];
        }
    }

    let mut grad_x = Tensor::zeros(x.shape().clone());

    // Per-sample partial kernel gradients, reduced afterwards in ascending
    // sample order so the result does not depend on scheduling.
    let partials: Vec<Vec<E>> = parallel::map_indices(n, |s| {
        let gout_s = &gd[s * sample_out..(s + 1) * sample_out];
        let mut patches = vec![E::zero(); oh * ow * cols];
        im2col(&xd[s * sample_in..(s + 1) * sample_in], h, w, c, &mut patches);
        // gk[col][o] += patch[row][col] * gout[row][o], row ascending.
        let mut gk = vec![E::zero(); cols * c_out];
        for r in 0..oh * ow {
            let prow = &patches[r * cols..(r + 1) * cols];
            let grow = &gout_s[r * c_out..(r + 1) * c_out];
            for (ci, &pv) in prow.iter().enumerate() {
                let dst = &mut gk[ci * c_out..(ci + 1) * c_out];
                for (d, &g) in dst.iter_mut().zip(grow.iter()) {
                    *d = *d + pv * g;
                }
            }
        }
        gk
    });

    parallel::for_each_chunk_mut(grad_x.data_mut(), sample_in, |s, gx_s| {
        let gout_s = &gd[s * sample_out..(s + 1) * sample_out];
        let mut grad_patches = vec![E::zero(); oh * ow * cols];
        matmul_slices(gout_s, &ker_t, &mut grad_patches, oh * ow, c_out, cols);
        col2im_add(&grad_patches, h, w, c, gx_s);
    });

    let mut grad_kernels = vec![E::zero(); cols * c_out];
    for part in &partials {
        for (a, &p) in grad_kernels.iter_mut().zip(part.iter()) {
            *a = *a + p;
        }
    }

    Ok(ConvGrads {
        grad_x,
        grad_kernels,
        grad_bias,
    })
}
