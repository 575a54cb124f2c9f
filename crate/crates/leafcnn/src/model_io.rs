//! Model checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic `LEAF` (4 bytes)
//!   format version u16 (currently 1)
//!   precision tag u8 (0 = single, 1 = double)
//!   seed u64
//!   input height u32, input width u32
//!   layer count u16
//!   per layer:
//!     kind tag u8 (0 conv, 1 maxpool, 2 relu, 3 flatten, 4 dense, 5 softmax)
//!     width u32 (output channels / nodes, 0 where not applicable)
//!     two parameter blocks, kernels/weights then bias, each as
//!     element-count u64 followed by raw IEEE-754 values (row-major);
//!     parameterless layers write two zero-length blocks.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::conv::{ConvLayer, KERNEL};
use crate::layers::dense::DenseLayer;
use crate::layers::network::{Layer, LayerKind, Network};
use crate::tensor::{Element, Precision};

const MAGIC: &[u8; 4] = b"LEAF";
const VERSION: u16 = 1;

pub fn save_model<E: Element>(net: &Network<E>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match E::PRECISION {
        Precision::Single => 0,
        Precision::Double => 1,
    });
    out.extend_from_slice(&net.seed.to_le_bytes());
    out.extend_from_slice(&(net.input_dims[0] as u32).to_le_bytes());
    out.extend_from_slice(&(net.input_dims[1] as u32).to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u16).to_le_bytes());
    for layer in &net.layers {
        out.push(layer.kind().tag());
        out.extend_from_slice(&(layer.width() as u32).to_le_bytes());
        let (a, b): (&[E], &[E]) = match layer {
            Layer::Conv(c) => (&c.kernels, &c.bias),
            Layer::Dense(d) => (&d.weights, &d.bias),
            _ => (&[], &[]),
        };
        for block in [a, b] {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            for &v in block {
                v.write_le(&mut out);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Stored precision of a model file, from the header alone.
pub fn model_precision(path: &Path) -> Result<Precision> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    check_header(&mut r)
}

fn check_header(r: &mut Reader<'_>) -> Result<Precision> {
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: format!("bad magic {magic:02x?}, expected {MAGIC:02x?}"),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported format version {version}"),
        });
    }
    match r.u8("precision tag")? {
        0 => Ok(Precision::Single),
        1 => Ok(Precision::Double),
        t => Err(Error::Format {
            offset: 6,
            reason: format!("unknown precision tag {t}"),
        }),
    }
}

pub fn load_model<E: Element>(path: &Path) -> Result<Network<E>> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let precision = check_header(&mut r)?;
    if precision != E::PRECISION {
        return Err(Error::Format {
            offset: 6,
            reason: "model precision does not match requested element type".into(),
        });
    }
    let seed = r.u64("seed")?;
    let input_h = r.u32("input height")? as usize;
    let input_w = r.u32("input width")? as usize;
    let layer_count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let tag_offset = r.pos as u64;
        let kind = LayerKind::from_tag(r.u8("layer kind")?).ok_or_else(|| Error::Format {
            offset: tag_offset,
            reason: format!("unknown layer kind tag in layer {i}"),
        })?;
        let width = r.u32("layer width")? as usize;
        let mut blocks: [Vec<E>; 2] = [Vec::new(), Vec::new()];
        for block in blocks.iter_mut() {
            let len_offset = r.pos as u64;
            let len = r.u64("block length")? as usize;
            let bytes = len.checked_mul(E::BYTE_WIDTH).ok_or_else(|| Error::Format {
                offset: len_offset,
                reason: "parameter block length overflows".into(),
            })?;
            let raw = r.take(bytes, "parameter block")?;
            block.reserve(len);
            for chunk in raw.chunks_exact(E::BYTE_WIDTH) {
                block.push(E::read_le(chunk));
            }
        }
        let [first, bias] = blocks;
        let layer = match kind {
            LayerKind::Conv => {
                let per_out = KERNEL * KERNEL;
                if width == 0 || first.len() % (per_out * width) != 0 || bias.len() != width {
                    return Err(Error::Format {
                        offset: tag_offset,
                        reason: format!("inconsistent conv parameter blocks in layer {i}"),
                    });
                }
                let c_in = first.len() / (per_out * width);
                Layer::Conv(ConvLayer {
                    kernels: first,
                    bias,
                    c_in,
                    c_out: width,
                })
            }
            LayerKind::Dense => {
                if width == 0 || first.len() % width != 0 || bias.len() != width {
                    return Err(Error::Format {
                        offset: tag_offset,
                        reason: format!("inconsistent dense parameter blocks in layer {i}"),
                    });
                }
                Layer::Dense(DenseLayer {
                    fan_in: first.len() / width,
                    fan_out: width,
                    weights: first,
                    bias,
                })
            }
            LayerKind::MaxPool => Layer::MaxPool,
            LayerKind::Relu => Layer::Relu,
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    if r.pos != buf.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            reason: "trailing bytes after last layer".into(),
        });
    }
    // Cross-check the declared input size against the layer structure.
    let c0 = layers
        .iter()
        .find_map(|l| match l {
            Layer::Conv(c) => Some(c.c_in),
            _ => None,
        })
        .ok_or_else(|| Error::Format {
            offset: 0,
            reason: "model has no convolution layer".into(),
        })?;
    if !trace_is_consistent(&layers, input_h, input_w, c0) {
        return Err(Error::Format {
            offset: 13,
            reason: format!("declared input {input_h}x{input_w} does not fit the layer stack"),
        });
    }
    Ok(Network {
        layers,
        seed,
        input_dims: [input_h, input_w, c0],
    })
}

fn trace_is_consistent<E: Element>(
    layers: &[Layer<E>],
    mut h: usize,
    mut w: usize,
    c0: usize,
) -> bool {
    let mut c = c0;
    for layer in layers {
        match layer {
            Layer::Conv(conv) => {
                if h < KERNEL || w < KERNEL || conv.c_in != c {
                    return false;
                }
                h -= 2;
                w -= 2;
                c = conv.c_out;
            }
            Layer::MaxPool => {
                if h < 2 || w < 2 {
                    return false;
                }
                h /= 2;
                w /= 2;
            }
            Layer::Flatten => {
                return layers.iter().any(|l| match l {
                    Layer::Dense(d) => d.fan_in == h * w * c,
                    _ => false,
                });
            }
            _ => {}
        }
    }
    false
}
