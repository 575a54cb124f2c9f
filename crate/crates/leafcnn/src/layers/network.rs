//! The layer stack: five 3x3 valid convolutions each followed by ReLU and
//! 2x2 max pooling, then flatten, a 64-node dense layer with ReLU, a
//! 3-node dense layer and softmax. The canonical 256x256x3 build has
//! exactly 277,891 trainable parameters.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layers::activation::{flatten, flatten_backward, relu_backward, relu_in_place, softmax};
use crate::layers::conv::{conv3x3_valid_backward, conv3x3_valid_forward, ConvLayer, KERNEL};
use crate::layers::dense::{dense_backward, dense_forward, DenseLayer};
use crate::layers::pool::{maxpool2x2_backward, maxpool2x2_forward, PoolCache};
use crate::rng::Xoshiro256PlusPlus;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    MaxPool,
    Relu,
    Flatten,
    Dense,
    Softmax,
}

impl LayerKind {
    /// Stable tag used by the model file format.
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::MaxPool => 1,
            LayerKind::Relu => 2,
            LayerKind::Flatten => 3,
            LayerKind::Dense => 4,
            LayerKind::Softmax => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => LayerKind::Conv,
            1 => LayerKind::MaxPool,
            2 => LayerKind::Relu,
            3 => LayerKind::Flatten,
            4 => LayerKind::Dense,
            5 => LayerKind::Softmax,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<E: Element> {
    Conv(ConvLayer<E>),
    MaxPool,
    Relu,
    Flatten,
    Dense(DenseLayer<E>),
    Softmax,
}

impl<E: Element> Layer<E> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::MaxPool => LayerKind::MaxPool,
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.parameter_count(),
            Layer::Dense(d) => d.parameter_count(),
            _ => 0,
        }
    }

    /// Output channels or nodes where applicable, 0 otherwise.
    pub fn width(&self) -> usize {
        match self {
            Layer::Conv(c) => c.c_out,
            Layer::Dense(d) => d.fan_out,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<E: Element> {
    pub layers: Vec<Layer<E>>,
    pub seed: u64,
    pub input_dims: [usize; 3],
}

/// Per-layer values retained by a train-mode forward pass.
enum CacheEntry<E: Element> {
    /// Conv and dense retain their input.
    Input(Arc<Tensor<E>>),
    /// ReLU retains its output; the mask is out > 0.
    ReluOut(Arc<Tensor<E>>),
    Pool(PoolCache),
    FlattenDims([usize; 4]),
    None,
}

pub struct ForwardCache<E: Element> {
    entries: Vec<CacheEntry<E>>,
    batch: usize,
}

/// Parameter gradients, mirroring the layer structure.
pub struct Gradients<E: Element> {
    pub layers: Vec<LayerGrads<E>>,
}

pub enum LayerGrads<E: Element> {
    Conv { kernels: Vec<E>, bias: Vec<E> },
    Dense { weights: Vec<E>, bias: Vec<E> },
    None,
}

/// Canonical build: 256x256x3 input, conv widths 32/64/64/64/64, dense 64,
/// 3 classes. Weight layout and counts reproduce the reference table.
pub fn build_network<E: Element>(seed: u64) -> Network<E> {
    build_network_with(seed, [256, 256, 3], &[32, 64, 64, 64, 64], 64, 3)
        .expect("canonical build is always valid")
}

/// General builder used for reduced clones in gradient verification and
/// benchmarks. Same layer kinds and ordering as the canonical build.
pub fn build_network_with<E: Element>(
    seed: u64,
    input_dims: [usize; 3],
    conv_widths: &[usize],
    dense_width: usize,
    classes: usize,
) -> Result<Network<E>> {
    let [mut h, mut w, mut c] = input_dims;
    let mut layers = Vec::new();
    let mut stream = 0u64;
    for &cw in conv_widths {
        if h < KERNEL || w < KERNEL {
            return Err(Error::shape(format!(
                "spatial extent {h}x{w} too small for another conv"
            )));
        }
        let mut conv = ConvLayer::zeros(c, cw);
        init_uniform(&mut conv.kernels, KERNEL * KERNEL * c, seed, stream);
        stream += 1;
        layers.push(Layer::Conv(conv));
        layers.push(Layer::Relu);
        h -= 2;
        w -= 2;
        c = cw;
        if h < 2 || w < 2 {
            return Err(Error::shape(format!(
                "spatial extent {h}x{w} too small for pooling"
            )));
        }
        layers.push(Layer::MaxPool);
        h /= 2;
        w /= 2;
    }
    layers.push(Layer::Flatten);
    let flat = h * w * c;
    let mut d1 = DenseLayer::zeros(flat, dense_width);
    init_uniform(&mut d1.weights, flat, seed, stream);
    stream += 1;
    layers.push(Layer::Dense(d1));
    layers.push(Layer::Relu);
    let mut d2 = DenseLayer::zeros(dense_width, classes);
    init_uniform(&mut d2.weights, dense_width, seed, stream);
    layers.push(Layer::Dense(d2));
    layers.push(Layer::Softmax);
    Ok(Network {
        layers,
        seed,
        input_dims,
    })
}

/// He-uniform: bound sqrt(6 / fan_in), drawn from a per-layer substream of
/// the network seed. Biases stay zero.
fn init_uniform<E: Element>(weights: &mut [E], fan_in: usize, seed: u64, stream: u64) {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = Xoshiro256PlusPlus::for_stream(seed, stream);
    for w in weights.iter_mut() {
        *w = E::from_f64(rng.uniform_symmetric(bound));
    }
}

impl<E: Element> Network<E> {
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Shapes after each layer, starting with the input shape, for a batch
    /// of `n`.
    pub fn shape_trace(&self, n: usize) -> Vec<Vec<usize>> {
        let [h0, w0, c0] = self.input_dims;
        let mut cur = vec![n, h0, w0, c0];
        let mut trace = vec![cur.clone()];
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(conv) => vec![cur[0], cur[1] - 2, cur[2] - 2, conv.c_out],
                Layer::MaxPool => vec![cur[0], cur[1] / 2, cur[2] / 2, cur[3]],
                Layer::Relu | Layer::Softmax => cur,
                Layer::Flatten => vec![cur[0], cur[1] * cur[2] * cur[3]],
                Layer::Dense(d) => vec![cur[0], d.fan_out],
            };
            trace.push(cur.clone());
        }
        trace
    }

    /// Run the stack. Train mode retains the values the backward pass needs.
    pub fn forward(&self, x: Tensor<E>, mode: Mode) -> Result<(Tensor<E>, Option<ForwardCache<E>>)> {
        let d = x.shape().dims();
        let [h0, w0, c0] = self.input_dims;
        if d.len() != 4 || d[1] != h0 || d[2] != w0 || d[3] != c0 {
            return Err(Error::shape(format!(
                "input shape {} does not match network input ({h0},{w0},{c0})",
                x.shape()
            )));
        }
        let batch = d[0];
        let train = mode == Mode::Train;
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut cur = Arc::new(x);
        for layer in &self.layers {
            match layer {
                Layer::Conv(conv) => {
                    let out = conv3x3_valid_forward(&cur, conv)?;
                    if train {
                        entries.push(CacheEntry::Input(cur.clone()));
                    }
                    cur = Arc::new(out);
                }
                Layer::Relu => {
                    // In place when we hold the only reference, which is the
                    // common case (previous layer's fresh output).
                    let mut owned = Arc::try_unwrap(cur).unwrap_or_else(|a| (*a).clone());
                    relu_in_place(&mut owned);
                    cur = Arc::new(owned);
                    if train {
                        entries.push(CacheEntry::ReluOut(cur.clone()));
                    }
                }
                Layer::MaxPool => {
                    let (out, pc) = maxpool2x2_forward(&cur)?;
                    if train {
                        entries.push(CacheEntry::Pool(pc));
                    }
                    cur = Arc::new(out);
                }
                Layer::Flatten => {
                    let dims: [usize; 4] = cur.shape().dims().try_into().map_err(|_| {
                        Error::shape("flatten expects rank 4 input")
                    })?;
                    let owned = Arc::try_unwrap(cur).unwrap_or_else(|a| (*a).clone());
                    cur = Arc::new(flatten(owned)?);
                    if train {
                        entries.push(CacheEntry::FlattenDims(dims));
                    }
                }
                Layer::Dense(dl) => {
                    let out = dense_forward(&cur, dl)?;
                    if train {
                        entries.push(CacheEntry::Input(cur.clone()));
                    }
                    cur = Arc::new(out);
                }
                Layer::Softmax => {
                    let out = softmax(&cur)?;
                    if train {
                        entries.push(CacheEntry::None);
                    }
                    cur = Arc::new(out);
                }
            }
        }
        let probs = Arc::try_unwrap(cur).unwrap_or_else(|a| (*a).clone());
        let cache = train.then_some(ForwardCache { entries, batch });
        Ok((probs, cache))
    }

    /// Backward pass from the gradient with respect to the logits (the
    /// fused softmax/cross-entropy gradient), producing parameter gradients
    /// that mirror the layer structure.
    pub fn backward(
        &self,
        cache: &ForwardCache<E>,
        grad_logits: Tensor<E>,
    ) -> Result<Gradients<E>> {
        if cache.entries.len() != self.layers.len() {
            return Err(Error::State(format!(
                "cache has {} entries for {} layers",
                cache.entries.len(),
                self.layers.len()
            )));
        }
        if grad_logits.shape().dims()[0] != cache.batch {
            return Err(Error::State(
                "gradient batch does not match cached forward batch".into(),
            ));
        }
        let mut grads: Vec<LayerGrads<E>> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_logits;
        for (layer, entry) in self.layers.iter().zip(cache.entries.iter()).rev() {
            match (layer, entry) {
                (Layer::Softmax, CacheEntry::None) => {
                    // Gradient already with respect to logits.
                    grads.push(LayerGrads::None);
                }
                (Layer::Dense(dl), CacheEntry::Input(input)) => {
                    let g = dense_backward(&grad, input, dl)?;
                    grad = g.grad_x;
                    grads.push(LayerGrads::Dense {
                        weights: g.grad_weights,
                        bias: g.grad_bias,
                    });
                }
                (Layer::Relu, CacheEntry::ReluOut(out)) => {
                    grad = relu_backward(&grad, out)?;
                    grads.push(LayerGrads::None);
                }
                (Layer::Flatten, CacheEntry::FlattenDims(dims)) => {
                    grad = flatten_backward(grad, dims)?;
                    grads.push(LayerGrads::None);
                }
                (Layer::MaxPool, CacheEntry::Pool(pc)) => {
                    grad = maxpool2x2_backward(&grad, pc)?;
                    grads.push(LayerGrads::None);
                }
                (Layer::Conv(conv), CacheEntry::Input(input)) => {
                    let g = conv3x3_valid_backward(&grad, input, conv)?;
                    grad = g.grad_x;
                    grads.push(LayerGrads::Conv {
                        kernels: g.grad_kernels,
                        bias: g.grad_bias,
                    });
                }
                _ => {
                    return Err(Error::State(
                        "cache entry kind does not match layer kind".into(),
                    ))
                }
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Mutable views of every parameter block, layer order, kernels/weights
    /// before bias. Matches `Gradients` ordering.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut Vec<E>> {
        let mut blocks = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    blocks.push(&mut c.kernels);
                    blocks.push(&mut c.bias);
                }
                Layer::Dense(d) => {
                    blocks.push(&mut d.weights);
                    blocks.push(&mut d.bias);
                }
                _ => {}
            }
        }
        blocks
    }

    pub fn param_blocks(&self) -> Vec<&Vec<E>> {
        let mut blocks = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    blocks.push(&c.kernels);
                    blocks.push(&c.bias);
                }
                Layer::Dense(d) => {
                    blocks.push(&d.weights);
                    blocks.push(&d.bias);
                }
                _ => {}
            }
        }
        blocks
    }

    /// Human-readable per-layer table rows: (name, output shape, params).
    pub fn summary(&self) -> Vec<(String, Vec<usize>, usize)> {
        let trace = self.shape_trace(1);
        let mut rows = Vec::new();
        let mut conv_no = 0;
        let mut pool_no = 0;
        let mut dense_no = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let name = match layer {
                Layer::Conv(_) => {
                    conv_no += 1;
                    format!("Conv2D (C{conv_no})")
                }
                Layer::MaxPool => {
                    pool_no += 1;
                    format!("MaxPool (S{pool_no})")
                }
                Layer::Relu => "ReLU".to_string(),
                Layer::Flatten => "Flatten".to_string(),
                Layer::Dense(_) => {
                    dense_no += 1;
                    format!("Dense ({dense_no})")
                }
                Layer::Softmax => "Softmax".to_string(),
            };
            rows.push((name, trace[i + 1].clone(), layer.parameter_count()));
        }
        rows
    }
}

impl<E: Element> Gradients<E> {
    /// Flatten into the same block order as `Network::param_blocks`.
    pub fn blocks(&self) -> Vec<&Vec<E>> {
        let mut blocks = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrads::Conv { kernels, bias } => {
                    blocks.push(kernels);
                    blocks.push(bias);
                }
                LayerGrads::Dense { weights, bias } => {
                    blocks.push(weights);
                    blocks.push(bias);
                }
                LayerGrads::None => {}
            }
        }
        blocks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn canonical_parameter_counts_match_table() {
        let net = build_network::<f32>(1);
        let per_layer: Vec<usize> = net
            .layers
            .iter()
            .map(Layer::parameter_count)
            .filter(|&c| c > 0)
            .collect();
        assert_eq!(per_layer, vec![896, 18_496, 36_928, 36_928, 36_928, 147_520, 195]);
        assert_eq!(net.parameter_count(), 277_891);
    }

    #[test]
    fn equal_seeds_build_identical_networks() {
        let a = build_network::<f32>(12345);
        let b = build_network::<f32>(12345);
        assert_eq!(a, b);
        let c = build_network::<f32>(54321);
        assert_ne!(a, c);
    }

    #[test]
    fn canonical_shape_trace() {
        let net = build_network::<f32>(0);
        let trace = net.shape_trace(1);
        let spatial: Vec<usize> = trace
            .iter()
            .filter(|s| s.len() == 4)
            .map(|s| s[1])
            .collect();
        // input then conv/relu/pool outputs (relu repeats its input size)
        assert_eq!(
            spatial,
            vec![256, 254, 254, 127, 125, 125, 62, 60, 60, 30, 28, 28, 14, 12, 12, 6]
        );
        // flattened width
        let flat = trace.iter().find(|s| s.len() == 2 && s[1] > 64).unwrap();
        assert_eq!(flat[1], 2304);
        assert_eq!(trace.last().unwrap(), &vec![1, 3]);
    }

    #[test]
    fn forward_probability_rows() {
        let net = build_network_with::<f32>(7, [16, 16, 3], &[4, 4], 8, 3).unwrap();
        let x = Tensor::fill(Shape::new(&[2, 16, 16, 3]).unwrap(), 0.5);
        let (probs, cache) = net.forward(x, Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert_eq!(probs.shape().dims(), &[2, 3]);
        for row in probs.data().chunks(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn infer_forward_is_pure() {
        let net = build_network_with::<f32>(3, [12, 12, 3], &[4], 6, 3).unwrap();
        let x = Tensor::fill(Shape::new(&[1, 12, 12, 3]).unwrap(), 0.25);
        let (a, _) = net.forward(x.clone(), Mode::Infer).unwrap();
        let (b, _) = net.forward(x, Mode::Infer).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn wrong_input_shape_is_shape_error() {
        let net = build_network::<f32>(0);
        let x = Tensor::zeros(Shape::new(&[1, 128, 128, 3]).unwrap());
        assert!(matches!(
            net.forward(x, Mode::Infer),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_param_grads() {
        let net = build_network_with::<f64>(5, [10, 10, 3], &[4], 6, 3).unwrap();
        let x = Tensor::fill(Shape::new(&[2, 10, 10, 3]).unwrap(), 0.3);
        let (_, cache) = net.forward(x, Mode::Train).unwrap();
        let zero = Tensor::zeros(Shape::new(&[2, 3]).unwrap());
        let grads = net.backward(cache.as_ref().unwrap(), zero).unwrap();
        for block in grads.blocks() {
            assert!(block.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn mismatched_cache_is_state_error() {
        let net = build_network_with::<f64>(5, [10, 10, 3], &[4], 6, 3).unwrap();
        let x = Tensor::fill(Shape::new(&[2, 10, 10, 3]).unwrap(), 0.3);
        let (_, cache) = net.forward(x, Mode::Train).unwrap();
        let wrong_batch = Tensor::zeros(Shape::new(&[3, 3]).unwrap());
        assert!(matches!(
            net.backward(cache.as_ref().unwrap(), wrong_batch),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn summary_totals_match() {
        let net = build_network::<f32>(0);
        let rows = net.summary();
        let total: usize = rows.iter().map(|(_, _, c)| c).sum();
        assert_eq!(total, 277_891);
        let c1 = rows.iter().find(|(n, _, _)| n == "Conv2D (C1)").unwrap();
        assert_eq!(c1.2, 896);
        assert_eq!(c1.1, vec![1, 254, 254, 32]);
    }
}
