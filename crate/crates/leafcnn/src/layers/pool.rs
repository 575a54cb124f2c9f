//! 2x2 max pooling, stride 2, floor semantics: an odd trailing row or
//! column is discarded and receives zero gradient. Ties pick the first
//! element of the window in row-major order so the backward routing is
//! deterministic.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Element, Shape, Tensor};

/// Per-output argmax offsets, relative to the start of the sample.
pub struct PoolCache {
    pub argmax: Vec<u32>,
    pub input_dims: [usize; 4],
}

pub fn maxpool2x2_forward<E: Element>(x: &Tensor<E>) -> Result<(Tensor<E>, PoolCache)> {
    let d = x.shape().dims();
    if d.len() != 4 {
        return Err(Error::shape("pool input must be rank 4 (n,h,w,c)"));
    }
    let (n, h, w, c) = (d[0], d[1], d[2], d[3]);
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("spatial extent {h}x{w} below 2x2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(Shape::new(&[n, oh, ow, c])?);
    let mut argmax = vec![0u32; n * oh * ow * c];
    let sample_in = h * w * c;
    let sample_out = oh * ow * c;
    let xd = x.data();

    // One pass per sample; outputs and argmax entries are disjoint per
    // sample, so split both buffers the same way.
    let out_data = out.data_mut();
    parallel::for_each_chunk_mut(&mut argmax, sample_out, |s, am_s| {
        let xs = &xd[s * sample_in..(s + 1) * sample_in];
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    // Window offsets in row-major order; first max wins.
                    let base = (2 * i * w + 2 * j) * c + ch;
                    let offs = [base, base + c, base + w * c, base + w * c + c];
                    let mut best = offs[0];
                    for &o in &offs[1..] {
                        if xs[o] > xs[best] {
                            best = o;
                        }
                    }
                    am_s[(i * ow + j) * c + ch] = best as u32;
                }
            }
        }
    });
    parallel::for_each_chunk_mut(out_data, sample_out, |s, out_s| {
        let xs = &xd[s * sample_in..(s + 1) * sample_in];
        let am_s = &argmax[s * sample_out..(s + 1) * sample_out];
        for (o, &a) in out_s.iter_mut().zip(am_s.iter()) {
            *o = xs[a as usize];
        }
    });

    Ok((
        out,
        PoolCache {
            argmax,
            input_dims: [n, h, w, c],
        },
    ))
}

pub fn maxpool2x2_backward<E: Element>(
    grad_out: &Tensor<E>,
    cache: &PoolCache,
) -> Result<Tensor<E>> {
    let [n, h, w, c] = cache.input_dims;
    let (oh, ow) = (h / 2, w / 2);
    let expect = Shape::new(&[n, oh, ow, c])?;
    if grad_out.shape() != &expect {
        return Err(Error::shape(format!(
            "grad_out shape {} does not match pooled shape {}",
            grad_out.shape(),
            expect
        )));
    }
    let mut grad_x = Tensor::zeros(Shape::new(&[n, h, w, c])?);
    let sample_in = h * w * c;
    let sample_out = oh * ow * c;
    let gd = grad_out.data();
    parallel::for_each_chunk_mut(grad_x.data_mut(), sample_in, |s, gx_s| {
        let g_s = &gd[s * sample_out..(s + 1) * sample_out];
        let am_s = &cache.argmax[s * sample_out..(s + 1) * sample_out];
        for (&g, &a) in g_s.iter().zip(am_s.iter()) {
            let slot = &mut gx_s[a as usize];
            *slot = *slot + g;
        }
    });
    Ok(grad_x)
}
