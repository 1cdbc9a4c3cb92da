//! Small trainable architectures for desk-scale experiments.

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Conv2d, Dense, Layer};
use crate::nn::network::{init_weights, Network};
use crate::rng::RandomSource;

fn conv(name: &str, c_in: usize, c_out: usize, k: usize) -> Layer {
    Layer::Conv(Conv2d {
        name: name.into(),
        c_in,
        c_out,
        k,
        pad: k / 2,
        weights: vec![0.0; c_out * c_in * k * k],
        bias: vec![0.0; c_out],
        prune: None,
    })
}

fn dense(name: &str, in_features: usize, out_features: usize) -> Layer {
    Layer::Dense(Dense {
        name: name.into(),
        in_features,
        out_features,
        weights: vec![0.0; in_features * out_features],
        bias: vec![0.0; out_features],
        prune: None,
    })
}

fn bn(name: &str, channels: usize) -> Layer {
    Layer::BatchNorm(BatchNorm::new(name, channels))
}

/// Three conv stages with batch norm, two max pools, global average pooling,
/// and a dense head. Input spatial dims must be divisible by 4.
pub fn toy_cnn(input_shape: [usize; 3], classes: usize, rng: &RandomSource) -> Result<Network> {
    let [c, h, w] = input_shape;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "toy-cnn needs spatial dims divisible by 4, got {h}x{w}"
        )));
    }
    let mut net = Network {
        layers: vec![
            conv("conv1", c, 8, 3),
            bn("bn1", 8),
            Layer::Relu,
            Layer::MaxPool2,
            conv("conv2", 8, 16, 3),
            bn("bn2", 16),
            Layer::Relu,
            Layer::MaxPool2,
            conv("conv3", 16, 32, 3),
            bn("bn3", 32),
            Layer::Relu,
            Layer::GlobalAvgPool,
            dense("dense_head", 32, classes),
        ],
        input_shape,
        num_classes: classes,
    };
    init_weights(&mut net, rng);
    Ok(net)
}

/// Flatten plus three dense layers.
pub fn toy_mlp(input_shape: [usize; 3], classes: usize, rng: &RandomSource) -> Result<Network> {
    let [c, h, w] = input_shape;
    let features = c * h * w;
    let mut net = Network {
        layers: vec![
            Layer::Flatten,
            dense("dense1", features, 128),
            Layer::Relu,
            dense("dense2", 128, 128),
            Layer::Relu,
            dense("dense_head", 128, classes),
        ],
        input_shape,
        num_classes: classes,
    };
    init_weights(&mut net, rng);
    Ok(net)
}

/// Two identity-shortcut residual stages joined by a max pool and a 1x1
/// projection conv.
pub fn small_resnet(
    input_shape: [usize; 3],
    classes: usize,
    rng: &RandomSource,
) -> Result<Network> {
    let [c, h, w] = input_shape;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "small-resnet needs even spatial dims, got {h}x{w}"
        )));
    }
    let block = |prefix: &str, channels: usize| -> Layer {
        Layer::Residual(vec![
            conv(&format!("{prefix}_conv1"), channels, channels, 3),
            bn(&format!("{prefix}_bn1"), channels),
            Layer::Relu,
            conv(&format!("{prefix}_conv2"), channels, channels, 3),
            bn(&format!("{prefix}_bn2"), channels),
        ])
    };
    let mut net = Network {
        layers: vec![
            conv("conv1", c, 8, 3),
            bn("bn1", 8),
            Layer::Relu,
            block("res1", 8),
            Layer::Relu,
            Layer::MaxPool2,
            conv("proj1", 8, 16, 1),
            bn("bn_proj1", 16),
            Layer::Relu,
            block("res2", 16),
            Layer::Relu,
            Layer::GlobalAvgPool,
            dense("dense_head", 16, classes),
        ],
        input_shape,
        num_classes: classes,
    };
    init_weights(&mut net, rng);
    Ok(net)
}
