//! Network container, forward/backward orchestration, loss, and Adam.

use crate::error::{Error, Result};
use crate::nn::layers::{
    batchnorm_backward, batchnorm_forward, conv_backward, conv_forward, dense_backward,
    dense_forward, flatten_backward, flatten_forward, global_avg_pool_backward,
    global_avg_pool_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    Layer, LayerCache, LayerGrad,
};
use crate::nn::tensor::Tensor;
use crate::rng::RandomSource;

#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    /// Expected input as [channels, height, width].
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

pub struct ForwardCache {
    pub layer_caches: Vec<LayerCache>,
    pub logits: Tensor,
}

#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<LayerGrad>);

impl Network {
    /// Visit every layer depth-first, recursing into residual blocks.
    pub fn visit_layers(&self, f: &mut impl FnMut(&Layer)) {
        fn walk(layers: &[Layer], f: &mut impl FnMut(&Layer)) {
            for layer in layers {
                f(layer);
                if let Layer::Residual(inner) = layer {
                    walk(inner, f);
                }
            }
        }
        walk(&self.layers, f);
    }

    pub fn visit_layers_mut(&mut self, f: &mut impl FnMut(&mut Layer)) {
        fn walk(layers: &mut [Layer], f: &mut impl FnMut(&mut Layer)) {
            for layer in layers {
                f(layer);
                if let Layer::Residual(inner) = layer {
                    walk(inner, f);
                }
            }
        }
        walk(&mut self.layers, f);
    }

    /// Names of conv layers in order of appearance.
    pub fn conv_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_layers(&mut |layer| {
            if let Layer::Conv(c) = layer {
                names.push(c.name.clone());
            }
        });
        names
    }

    pub fn dense_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_layers(&mut |layer| {
            if let Layer::Dense(d) = layer {
                names.push(d.name.clone());
            }
        });
        names
    }

    /// Total parameter count (weights and biases, including batch norm).
    pub fn parameter_count(&self) -> usize {
        let mut count = 0;
        self.visit_layers(&mut |layer| match layer {
            Layer::Conv(c) => count += c.weight_count() + c.bias.len(),
            Layer::Dense(d) => count += d.weight_count() + d.bias.len(),
            Layer::BatchNorm(b) => count += 2 * b.channels,
            _ => {}
        });
        count
    }
}

fn forward_layers(
    layers: &[Layer],
    x: Tensor,
    training: bool,
    apply_masks: bool,
) -> Result<(Tensor, Vec<LayerCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut current = x;
    for layer in layers {
        let (next, cache) = match layer {
            Layer::Conv(c) => conv_forward(c, &current, apply_masks)?,
            Layer::Dense(d) => dense_forward(d, &current, apply_masks)?,
            Layer::Relu => relu_forward(&current),
            Layer::MaxPool2 => maxpool2_forward(&current)?,
            Layer::GlobalAvgPool => global_avg_pool_forward(&current)?,
            Layer::Flatten => flatten_forward(&current)?,
            Layer::BatchNorm(b) => batchnorm_forward(b, &current, training)?,
            Layer::Residual(inner) => {
                let (branch, inner_caches) =
                    forward_layers(inner, current.clone(), training, apply_masks)?;
                if branch.shape() != current.shape() {
                    return Err(Error::InvalidArgument(format!(
                        "residual branch shape {:?} does not match input {:?}",
                        branch.shape(),
                        current.shape()
                    )));
                }
                let mut summed = current;
                for (y, b) in summed.data_mut().iter_mut().zip(branch.data()) {
                    *y += b;
                }
                (summed, LayerCache::Residual(inner_caches))
            }
        };
        caches.push(cache);
        current = next;
    }
    Ok((current, caches))
}

fn backward_layers(
    layers: &[Layer],
    caches: &[LayerCache],
    dy: Tensor,
) -> Result<(Tensor, Vec<LayerGrad>)> {
    let mut grads: Vec<LayerGrad> = Vec::with_capacity(layers.len());
    let mut current = dy;
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let grad = match layer {
            Layer::Conv(c) => {
                let (dx, g) = conv_backward(c, cache, &current)?;
                current = dx;
                g
            }
            Layer::Dense(d) => {
                let (dx, g) = dense_backward(d, cache, &current)?;
                current = dx;
                g
            }
            Layer::Relu => {
                current = relu_backward(cache, &current)?;
                LayerGrad::None
            }
            Layer::MaxPool2 => {
                current = maxpool2_backward(cache, &current)?;
                LayerGrad::None
            }
            Layer::GlobalAvgPool => {
                current = global_avg_pool_backward(cache, &current)?;
                LayerGrad::None
            }
            Layer::Flatten => {
                current = flatten_backward(cache, &current)?;
                LayerGrad::None
            }
            Layer::BatchNorm(b) => {
                let (dx, g) = batchnorm_backward(b, cache, &current)?;
                current = dx;
                g
            }
            Layer::Residual(inner) => {
                let LayerCache::Residual(inner_caches) = cache else {
                    return Err(Error::InvalidArgument("residual cache mismatch".into()));
                };
                let (d_branch, inner_grads) =
                    backward_layers(inner, inner_caches, current.clone())?;
                for (d, b) in current.data_mut().iter_mut().zip(d_branch.data()) {
                    *d += b;
                }
                LayerGrad::Residual(inner_grads)
            }
        };
        grads.push(grad);
    }
    grads.reverse();
    Ok((current, grads))
}

/// Forward pass. Maskable layers multiply their weights by the current mask;
/// stored weights are never modified.
pub fn forward(net: &Network, batch: &Tensor, training: bool) -> Result<(Tensor, ForwardCache)> {
    forward_with_masks(net, batch, training, true)
}

/// Forward pass with mask application switchable (off = evaluate the dense
/// network regardless of any prune state).
pub fn forward_with_masks(
    net: &Network,
    batch: &Tensor,
    training: bool,
    apply_masks: bool,
) -> Result<(Tensor, ForwardCache)> {
    let (logits, layer_caches) = forward_layers(&net.layers, batch.clone(), training, apply_masks)?;
    let cache = ForwardCache {
        layer_caches,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = logits.dims2()?;
    if labels.len() != batch {
        return Err(Error::LengthMismatch {
            expected: batch,
            got: labels.len(),
        });
    }
    let mut dlogits = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (bi, &label) in labels.iter().enumerate() {
        let row = &logits.data()[bi * classes..][..classes];
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - row[label];
        let drow = &mut dlogits.data_mut()[bi * classes..][..classes];
        for (k, d) in drow.iter_mut().enumerate() {
            let softmax = (row[k] - max).exp() / sum_exp;
            *d = (softmax - if k == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    Ok((loss / batch as f64, dlogits))
}

/// Backward pass from cached activations and integer labels. Masked weights
/// receive exactly zero gradient.
pub fn backward(net: &Network, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients> {
    let (_, dlogits) = softmax_cross_entropy(&cache.logits, labels)?;
    backward_from(net, cache, dlogits)
}

/// Backward pass from an already computed logit gradient.
pub fn backward_from(net: &Network, cache: &ForwardCache, dlogits: Tensor) -> Result<Gradients> {
    let (_, grads) = backward_layers(&net.layers, &cache.layer_caches, dlogits)?;
    Ok(Gradients(grads))
}

/// Fold this step's batch statistics into every batch-norm layer's running
/// moments. Called once per training step, after the optimizer update.
pub fn update_running_stats(net: &mut Network, cache: &ForwardCache) {
    fn walk(layers: &mut [Layer], caches: &[LayerCache]) {
        for (layer, cache) in layers.iter_mut().zip(caches) {
            match (layer, cache) {
                (
                    Layer::BatchNorm(bn),
                    LayerCache::BatchNorm {
                        batch_mean,
                        batch_var,
                        ..
                    },
                ) => {
                    let m = bn.momentum;
                    for c in 0..bn.channels {
                        bn.running_mean[c] = m * bn.running_mean[c] + (1.0 - m) * batch_mean[c];
                        bn.running_var[c] = m * bn.running_var[c] + (1.0 - m) * batch_var[c];
                    }
                }
                (Layer::Residual(inner), LayerCache::Residual(inner_caches)) => {
                    walk(inner, inner_caches);
                }
                _ => {}
            }
        }
    }
    walk(&mut net.layers, &cache.layer_caches);
}

#[derive(Debug, Clone)]
enum AdamSlot {
    Pair {
        mw: Vec<f64>,
        vw: Vec<f64>,
        mb: Vec<f64>,
        vb: Vec<f64>,
    },
    Residual(Vec<AdamSlot>),
    None,
}

/// Adam optimizer with bias correction (decay 0.9 / 0.999, epsilon 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    slots: Vec<AdamSlot>,
}

fn build_slots(layers: &[Layer]) -> Vec<AdamSlot> {
    layers
        .iter()
        .map(|layer| match layer {
            Layer::Conv(c) => AdamSlot::Pair {
                mw: vec![0.0; c.weight_count()],
                vw: vec![0.0; c.weight_count()],
                mb: vec![0.0; c.bias.len()],
                vb: vec![0.0; c.bias.len()],
            },
            Layer::Dense(d) => AdamSlot::Pair {
                mw: vec![0.0; d.weight_count()],
                vw: vec![0.0; d.weight_count()],
                mb: vec![0.0; d.bias.len()],
                vb: vec![0.0; d.bias.len()],
            },
            Layer::BatchNorm(b) => AdamSlot::Pair {
                mw: vec![0.0; b.channels],
                vw: vec![0.0; b.channels],
                mb: vec![0.0; b.channels],
                vb: vec![0.0; b.channels],
            },
            Layer::Residual(inner) => AdamSlot::Residual(build_slots(inner)),
            _ => AdamSlot::None,
        })
        .collect()
}

impl Adam {
    pub fn new(net: &Network) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            slots: build_slots(&net.layers),
        }
    }

    /// One optimizer step over all parameters.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);

        #[allow(clippy::too_many_arguments)]
        fn update(
            params: &mut [f64],
            grad: &[f64],
            m: &mut [f64],
            v: &mut [f64],
            lr: f64,
            b1: f64,
            b2: f64,
            eps: f64,
            bc1: f64,
            bc2: f64,
        ) {
            for i in 0..params.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }

        #[allow(clippy::too_many_arguments)]
        fn walk(
            layers: &mut [Layer],
            grads: &[LayerGrad],
            slots: &mut [AdamSlot],
            lr: f64,
            b1: f64,
            b2: f64,
            eps: f64,
            bc1: f64,
            bc2: f64,
        ) -> Result<()> {
            for ((layer, grad), slot) in layers.iter_mut().zip(grads).zip(slots) {
                match (layer, grad, slot) {
                    (
                        Layer::Conv(c),
                        LayerGrad::Conv { d_weights, d_bias },
                        AdamSlot::Pair { mw, vw, mb, vb },
                    ) => {
                        update(&mut c.weights, d_weights, mw, vw, lr, b1, b2, eps, bc1, bc2);
                        update(&mut c.bias, d_bias, mb, vb, lr, b1, b2, eps, bc1, bc2);
                    }
                    (
                        Layer::Dense(d),
                        LayerGrad::Dense { d_weights, d_bias },
                        AdamSlot::Pair { mw, vw, mb, vb },
                    ) => {
                        update(&mut d.weights, d_weights, mw, vw, lr, b1, b2, eps, bc1, bc2);
                        update(&mut d.bias, d_bias, mb, vb, lr, b1, b2, eps, bc1, bc2);
                    }
                    (
                        Layer::BatchNorm(bn),
                        LayerGrad::BatchNorm { d_gamma, d_shift },
                        AdamSlot::Pair { mw, vw, mb, vb },
                    ) => {
                        update(&mut bn.gamma, d_gamma, mw, vw, lr, b1, b2, eps, bc1, bc2);
                        update(&mut bn.shift, d_shift, mb, vb, lr, b1, b2, eps, bc1, bc2);
                    }
                    (
                        Layer::Residual(inner),
                        LayerGrad::Residual(inner_grads),
                        AdamSlot::Residual(inner_slots),
                    ) => {
                        walk(inner, inner_grads, inner_slots, lr, b1, b2, eps, bc1, bc2)?;
                    }
                    (_, LayerGrad::None, AdamSlot::None) => {}
                    // Eval-mode batch norm contributes no gradient entry.
                    (Layer::BatchNorm(_), LayerGrad::None, AdamSlot::Pair { .. }) => {}
                    (layer, grad, _) => {
                        return Err(Error::InvalidArgument(format!(
                            "optimizer state mismatch at {:?} / {:?}",
                            layer.name(),
                            std::mem::discriminant(grad)
                        )));
                    }
                }
            }
            Ok(())
        }
        walk(
            &mut net.layers,
            &grads.0,
            &mut self.slots,
            lr,
            b1,
            b2,
            eps,
            bc1,
            bc2,
        )
    }
}

/// He-normal initialization for conv and dense weights; batch norm starts at
/// identity. Each layer draws from a substream keyed by its name, so layer
/// order does not matter.
pub fn init_weights(net: &mut Network, rng: &RandomSource) {
    net.visit_layers_mut(&mut |layer| match layer {
        Layer::Conv(c) => {
            let fan_in = (c.c_in * c.k * c.k) as f64;
            let std = (2.0 / fan_in).sqrt();
            let mut r = rng.fork_str(&c.name);
            for w in &mut c.weights {
                *w = std * r.next_normal();
            }
            c.bias.fill(0.0);
        }
        Layer::Dense(d) => {
            let std = (2.0 / d.in_features as f64).sqrt();
            let mut r = rng.fork_str(&d.name);
            for w in &mut d.weights {
                *w = std * r.next_normal();
            }
            d.bias.fill(0.0);
        }
        Layer::BatchNorm(b) => {
            b.gamma.fill(1.0);
            b.shift.fill(0.0);
            b.running_mean.fill(0.0);
            b.running_var.fill(1.0);
        }
        _ => {}
    });
}
