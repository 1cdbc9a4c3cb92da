//! Shared helpers for integration tests: flat parameter access and central
//! finite-difference gradients.

use gibbs_pruning::nn::layers::{Layer, LayerGrad};
use gibbs_pruning::nn::network::{backward, forward, softmax_cross_entropy, Gradients, Network};
use gibbs_pruning::nn::tensor::Tensor;

/// Concatenate every parameter in visit order: conv/dense weights then bias,
/// batch-norm gamma then shift.
pub fn get_params(net: &Network) -> Vec<f64> {
    let mut out = Vec::new();
    net.visit_layers(&mut |layer| match layer {
        Layer::Conv(c) => {
            out.extend_from_slice(&c.weights);
            out.extend_from_slice(&c.bias);
        }
        Layer::Dense(d) => {
            out.extend_from_slice(&d.weights);
            out.extend_from_slice(&d.bias);
        }
        Layer::BatchNorm(b) => {
            out.extend_from_slice(&b.gamma);
            out.extend_from_slice(&b.shift);
        }
        _ => {}
    });
    out
}

pub fn set_params(net: &mut Network, params: &[f64]) {
    fn take(dst: &mut [f64], params: &[f64], at: &mut usize) {
        let len = dst.len();
        dst.copy_from_slice(&params[*at..*at + len]);
        *at += len;
    }
    let mut at = 0usize;
    net.visit_layers_mut(&mut |layer| match layer {
        Layer::Conv(c) => {
            take(&mut c.weights, params, &mut at);
            take(&mut c.bias, params, &mut at);
        }
        Layer::Dense(d) => {
            take(&mut d.weights, params, &mut at);
            take(&mut d.bias, params, &mut at);
        }
        Layer::BatchNorm(b) => {
            take(&mut b.gamma, params, &mut at);
            take(&mut b.shift, params, &mut at);
        }
        _ => {}
    });
    assert_eq!(at, params.len());
}

/// Flatten analytic gradients in the same order as `get_params`.
pub fn flatten_grads(net: &Network, grads: &Gradients) -> Vec<f64> {
    fn walk(layers: &[Layer], grads: &[LayerGrad], out: &mut Vec<f64>) {
        for (layer, grad) in layers.iter().zip(grads) {
            match (layer, grad) {
                (Layer::Conv(_), LayerGrad::Conv { d_weights, d_bias }) => {
                    out.extend_from_slice(d_weights);
                    out.extend_from_slice(d_bias);
                }
                (Layer::Dense(_), LayerGrad::Dense { d_weights, d_bias }) => {
                    out.extend_from_slice(d_weights);
                    out.extend_from_slice(d_bias);
                }
                (Layer::BatchNorm(_), LayerGrad::BatchNorm { d_gamma, d_shift }) => {
                    out.extend_from_slice(d_gamma);
                    out.extend_from_slice(d_shift);
                }
                (Layer::Residual(inner), LayerGrad::Residual(inner_grads)) => {
                    walk(inner, inner_grads, out);
                }
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(&net.layers, &grads.0, &mut out);
    out
}

pub fn loss_of(net: &Network, batch: &Tensor, labels: &[usize]) -> f64 {
    let (logits, _) = forward(net, batch, true).unwrap();
    softmax_cross_entropy(&logits, labels).unwrap().0
}

pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Central finite differences against the analytic gradient on a sample of
/// parameter indices (all of them when `sample_every` is 1).
pub fn grad_check(
    net: &mut Network,
    batch: &Tensor,
    labels: &[usize],
    sample_every: usize,
) -> GradCheckReport {
    let (_, cache) = forward(net, batch, true).unwrap();
    let analytic = {
        let grads = backward(net, &cache, labels).unwrap();
        flatten_grads(net, &grads)
    };
    let base = get_params(net);
    assert_eq!(analytic.len(), base.len());

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for i in (0..base.len()).step_by(sample_every.max(1)) {
        let rel_at = |net: &mut Network, h: f64| -> f64 {
            let mut plus = base.clone();
            plus[i] += h;
            set_params(net, &plus);
            let l_plus = loss_of(net, batch, labels);
            let mut minus = base.clone();
            minus[i] -= h;
            set_params(net, &minus);
            let l_minus = loss_of(net, batch, labels);
            set_params(net, &base);

            let numeric = (l_plus - l_minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            (analytic[i] - numeric).abs() / denom
        };
        // A relu/maxpool kink inside the step interval inflates the error at
        // one step size but vanishes at a smaller one; a wrong gradient
        // stays wrong at every step size.
        let scale = base[i].abs().max(1.0);
        let mut rel = rel_at(net, 1e-5 * scale);
        if rel > 1e-4 {
            rel = rel.min(rel_at(net, 1e-6 * scale));
        }
        if rel > 1e-4 {
            rel = rel.min(rel_at(net, 1e-7 * scale));
        }
        if rel > max_rel {
            max_rel = rel;
        }
        checked += 1;
    }
    GradCheckReport {
        max_rel_error: max_rel,
        checked,
    }
}
