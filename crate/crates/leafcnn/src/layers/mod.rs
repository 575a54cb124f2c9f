pub mod activation;
pub mod conv;
pub mod dense;
pub mod network;
pub mod pool;

pub use activation::{flatten, flatten_backward, relu, relu_backward, softmax};
pub use conv::{conv3x3_valid_backward, conv3x3_valid_forward, ConvLayer};
pub use dense::{dense_backward, dense_forward, DenseLayer};
pub use network::{
    build_network, build_network_with, ForwardCache, Gradients, Layer, LayerGrads, LayerKind,
    Mode, Network,
};
pub use pool::{maxpool2x2_backward, maxpool2x2_forward, PoolCache};
