//! Network layers with explicit forward/backward passes.
//!
//! Convolution and dense layers can carry a prune state; their forward pass
//! multiplies weights by the current mask without touching the stored
//! parameters, so a weight masked this step gets exactly zero gradient and
//! is untouched by the optimizer residue of that step's backprop.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::prune::PruneState;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad: usize,
    /// `[c_out][c_in][k][k]`, row-major. This flattening order is the layer's
    /// canonical weight-vector order everywhere (masks, partitions, files).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub prune: Option<PruneState>,
}

impl Conv2d {
    pub fn weight_count(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub prune: Option<PruneState>,
}

impl Dense {
    pub fn weight_count(&self) -> usize {
        self.in_features * self.out_features
    }
}

/// Per-channel scale/shift with running moments. Never pruned.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
            gamma: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    BatchNorm(BatchNorm),
    /// Identity-shortcut block: output = input + inner(input).
    Residual(Vec<Layer>),
}

impl Layer {
    pub fn name(&self) -> Option<&str> {
        match self {
            Layer::Conv(c) => Some(&c.name),
            Layer::Dense(d) => Some(&d.name),
            Layer::BatchNorm(b) => Some(&b.name),
            _ => None,
        }
    }
}

/// Everything backward needs from one layer's forward pass.
#[derive(Debug)]
pub enum LayerCache {
    Conv {
        input: Tensor,
        w_eff: Vec<f64>,
        mask_mult: Option<Vec<f64>>,
    },
    Dense {
        input: Tensor,
        w_eff: Vec<f64>,
        mask_mult: Option<Vec<f64>>,
    },
    Relu {
        positive: Vec<bool>,
    },
    MaxPool2 {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input_shape: Vec<usize>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    BatchNorm {
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    BatchNormEval,
    Residual(Vec<LayerCache>),
}

/// Parameter gradients for one layer.
#[derive(Debug, Clone)]
pub enum LayerGrad {
    Conv {
        d_weights: Vec<f64>,
        d_bias: Vec<f64>,
    },
    Dense {
        d_weights: Vec<f64>,
        d_bias: Vec<f64>,
    },
    BatchNorm {
        d_gamma: Vec<f64>,
        d_shift: Vec<f64>,
    },
    Residual(Vec<LayerGrad>),
    None,
}

/// Effective weights for a maskable layer: the stored weights multiplied by
/// the current mask when one applies. Returns the multiplier alongside so
/// backward can zero the same gradient entries.
fn effective_weights(
    weights: &[f64],
    prune: &Option<PruneState>,
    apply_masks: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    match prune {
        Some(state) if apply_masks => {
            let mult: Vec<f64> = state
                .mask
                .entries()
                .iter()
                .map(|e| f64::from(e + 1) * 0.5)
                .collect();
            let w_eff = weights.iter().zip(&mult).map(|(w, m)| w * m).collect();
            (w_eff, Some(mult))
        }
        _ => (weights.to_vec(), None),
    }
}

pub fn conv_forward(conv: &Conv2d, x: &Tensor, apply_masks: bool) -> Result<(Tensor, LayerCache)> {
    let (batch, c_in, h, w) = x.dims4()?;
    if c_in != conv.c_in {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} input channels, got {c_in}",
            conv.name, conv.c_in
        )));
    }
    let (k, pad) = (conv.k, conv.pad);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::InvalidArgument(format!(
            "{}: {h}x{w} input too small for k={k} pad={pad}",
            conv.name
        )));
    }
    let (w_eff, mask_mult) = effective_weights(&conv.weights, &conv.prune, apply_masks);
    let h_out = h + 2 * pad - k + 1;
    let w_out = w + 2 * pad - k + 1;
    let mut y = Tensor::zeros(&[batch, conv.c_out, h_out, w_out]);
    let in_plane = h * w;
    let out_plane = h_out * w_out;
    let x_data = x.data();
    let c_out = conv.c_out;
    y.data_mut()
        .par_chunks_mut(c_out * out_plane)
        .enumerate()
        .for_each(|(bi, y_b)| {
            let x_b = &x_data[bi * c_in * in_plane..][..c_in * in_plane];
            for o in 0..c_out {
                for yy in 0..h_out {
                    for xx in 0..w_out {
                        let mut acc = conv.bias[o];
                        for i in 0..c_in {
                            for r in 0..k {
                                let iy = yy + r;
                                if iy < pad || iy >= h + pad {
                                    continue;
                                }
                                let iy = iy - pad;
                                for s in 0..k {
                                    let ix = xx + s;
                                    if ix < pad || ix >= w + pad {
                                        continue;
                                    }
                                    let ix = ix - pad;
                                    acc += w_eff[((o * c_in + i) * k + r) * k + s]
                                        * x_b[(i * h + iy) * w + ix];
                                }
                            }
                        }
                        y_b[(o * h_out + yy) * w_out + xx] = acc;
                    }
                }
            }
        });
    Ok((
        y,
        LayerCache::Conv {
            input: x.clone(),
            w_eff,
            mask_mult,
        },
    ))
}

pub fn conv_backward(
    conv: &Conv2d,
    cache: &LayerCache,
    dy: &Tensor,
) -> Result<(Tensor, LayerGrad)> {
    let LayerCache::Conv {
        input,
        w_eff,
        mask_mult,
    } = cache
    else {
        return Err(Error::InvalidArgument(
            "conv backward got a mismatched cache".into(),
        ));
    };
    let (batch, c_in, h, w) = input.dims4()?;
    let (_, c_out, h_out, w_out) = dy.dims4()?;
    let (k, pad) = (conv.k, conv.pad);
    let in_plane = h * w;
    let out_plane = h_out * w_out;
    let x_data = input.data();
    let dy_data = dy.data();

    let mut dx = Tensor::zeros(input.shape());
    dx.data_mut()
        .par_chunks_mut(c_in * in_plane)
        .enumerate()
        .for_each(|(bi, dx_b)| {
            let dy_b = &dy_data[bi * c_out * out_plane..][..c_out * out_plane];
            for o in 0..c_out {
                for yy in 0..h_out {
                    for xx in 0..w_out {
                        let g = dy_b[(o * h_out + yy) * w_out + xx];
                        if g == 0.0 {
                            continue;
                        }
                        for i in 0..c_in {
                            for r in 0..k {
                                let iy = yy + r;
                                if iy < pad || iy >= h + pad {
                                    continue;
                                }
                                let iy = iy - pad;
                                for s in 0..k {
                                    let ix = xx + s;
                                    if ix < pad || ix >= w + pad {
                                        continue;
                                    }
                                    let ix = ix - pad;
                                    dx_b[(i * h + iy) * w + ix] +=
                                        g * w_eff[((o * c_in + i) * k + r) * k + s];
                                }
                            }
                        }
                    }
                }
            }
        });

    let mut d_weights = vec![0.0; conv.weight_count()];
    let per_filter = c_in * k * k;
    d_weights
        .par_chunks_mut(per_filter)
        .enumerate()
        .for_each(|(o, dw_o)| {
            for bi in 0..batch {
                let x_b = &x_data[bi * c_in * in_plane..][..c_in * in_plane];
                let dy_o = &dy_data[(bi * c_out + o) * out_plane..][..out_plane];
                for yy in 0..h_out {
                    for xx in 0..w_out {
                        let g = dy_o[yy * w_out + xx];
                        if g == 0.0 {
                            continue;
                        }
                        for i in 0..c_in {
                            for r in 0..k {
                                let iy = yy + r;
                                if iy < pad || iy >= h + pad {
                                    continue;
                                }
                                let iy = iy - pad;
                                for s in 0..k {
                                    let ix = xx + s;
                                    if ix < pad || ix >= w + pad {
                                        continue;
                                    }
                                    let ix = ix - pad;
                                    dw_o[(i * k + r) * k + s] += g * x_b[(i * h + iy) * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        });
    if let Some(mult) = mask_mult {
        for (dw, m) in d_weights.iter_mut().zip(mult) {
            *dw *= m;
        }
    }

    let mut d_bias = vec![0.0; c_out];
    for bi in 0..batch {
        for (o, db) in d_bias.iter_mut().enumerate() {
            let dy_o = &dy_data[(bi * c_out + o) * out_plane..][..out_plane];
            *db += dy_o.iter().sum::<f64>();
        }
    }
    Ok((dx, LayerGrad::Conv { d_weights, d_bias }))
}

pub fn dense_forward(dense: &Dense, x: &Tensor, apply_masks: bool) -> Result<(Tensor, LayerCache)> {
    let (batch, features) = x.dims2()?;
    if features != dense.in_features {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} input features, got {features}",
            dense.name, dense.in_features
        )));
    }
    let (w_eff, mask_mult) = effective_weights(&dense.weights, &dense.prune, apply_masks);
    let mut y = Tensor::zeros(&[batch, dense.out_features]);
    let x_data = x.data();
    for bi in 0..batch {
        let x_b = &x_data[bi * features..][..features];
        let y_b = &mut y.data_mut()[bi * dense.out_features..][..dense.out_features];
        for (o, y_o) in y_b.iter_mut().enumerate() {
            let row = &w_eff[o * features..][..features];
            let mut acc = dense.bias[o];
            for (w_i, x_i) in row.iter().zip(x_b) {
                acc += w_i * x_i;
            }
            *y_o = acc;
        }
    }
    Ok((
        y,
        LayerCache::Dense {
            input: x.clone(),
            w_eff,
            mask_mult,
        },
    ))
}

pub fn dense_backward(
    dense: &Dense,
    cache: &LayerCache,
    dy: &Tensor,
) -> Result<(Tensor, LayerGrad)> {
    let LayerCache::Dense {
        input,
        w_eff,
        mask_mult,
    } = cache
    else {
        return Err(Error::InvalidArgument(
            "dense backward got a mismatched cache".into(),
        ));
    };
    let (batch, features) = input.dims2()?;
    let out = dense.out_features;
    let x_data = input.data();
    let dy_data = dy.data();

    let mut dx = Tensor::zeros(input.shape());
    let mut d_weights = vec![0.0; dense.weight_count()];
    let mut d_bias = vec![0.0; out];
    for bi in 0..batch {
        let x_b = &x_data[bi * features..][..features];
        let dy_b = &dy_data[bi * out..][..out];
        let dx_b = &mut dx.data_mut()[bi * features..][..features];
        for (o, &g) in dy_b.iter().enumerate() {
            d_bias[o] += g;
            let row = &w_eff[o * features..][..features];
            let drow = &mut d_weights[o * features..][..features];
            for i in 0..features {
                dx_b[i] += g * row[i];
                drow[i] += g * x_b[i];
            }
        }
    }
    if let Some(mult) = mask_mult {
        for (dw, m) in d_weights.iter_mut().zip(mult) {
            *dw *= m;
        }
    }
    Ok((dx, LayerGrad::Dense { d_weights, d_bias }))
}

pub fn relu_forward(x: &Tensor) -> (Tensor, LayerCache) {
    let mut y = x.clone();
    let positive: Vec<bool> = x.data().iter().map(|v| *v > 0.0).collect();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    (y, LayerCache::Relu { positive })
}

pub fn relu_backward(cache: &LayerCache, dy: &Tensor) -> Result<Tensor> {
    let LayerCache::Relu { positive } = cache else {
        return Err(Error::InvalidArgument(
            "relu backward got a mismatched cache".into(),
        ));
    };
    let mut dx = dy.clone();
    for (d, keep) in dx.data_mut().iter_mut().zip(positive) {
        if !keep {
            *d = 0.0;
        }
    }
    Ok(dx)
}

pub fn maxpool2_forward(x: &Tensor) -> Result<(Tensor, LayerCache)> {
    let (batch, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "maxpool2 needs even dims, got {h}x{w}"
        )));
    }
    let (h_out, w_out) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[batch, c, h_out, w_out]);
    let mut argmax = vec![0usize; batch * c * h_out * w_out];
    let x_data = x.data();
    let mut out_idx = 0;
    for bi in 0..batch {
        for ci in 0..c {
            let plane = (bi * c + ci) * h * w;
            for i in 0..h_out {
                for j in 0..w_out {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let at = plane + (2 * i + dy) * w + 2 * j + dx;
                            if x_data[at] > best {
                                best = x_data[at];
                                best_at = at;
                            }
                        }
                    }
                    y.data_mut()[out_idx] = best;
                    argmax[out_idx] = best_at;
                    out_idx += 1;
                }
            }
        }
    }
    Ok((
        y,
        LayerCache::MaxPool2 {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2_backward(cache: &LayerCache, dy: &Tensor) -> Result<Tensor> {
    let LayerCache::MaxPool2 {
        input_shape,
        argmax,
    } = cache
    else {
        return Err(Error::InvalidArgument(
            "maxpool backward got a mismatched cache".into(),
        ));
    };
    let mut dx = Tensor::zeros(input_shape);
    for (out_idx, &at) in argmax.iter().enumerate() {
        dx.data_mut()[at] += dy.data()[out_idx];
    }
    Ok(dx)
}

pub fn global_avg_pool_forward(x: &Tensor) -> Result<(Tensor, LayerCache)> {
    let (batch, c, h, w) = x.dims4()?;
    let plane = h * w;
    let mut y = Tensor::zeros(&[batch, c]);
    for bi in 0..batch {
        for ci in 0..c {
            let start = (bi * c + ci) * plane;
            let sum: f64 = x.data()[start..start + plane].iter().sum();
            y.data_mut()[bi * c + ci] = sum / plane as f64;
        }
    }
    Ok((
        y,
        LayerCache::GlobalAvgPool {
            input_shape: x.shape().to_vec(),
        },
    ))
}

pub fn global_avg_pool_backward(cache: &LayerCache, dy: &Tensor) -> Result<Tensor> {
    let LayerCache::GlobalAvgPool { input_shape } = cache else {
        return Err(Error::InvalidArgument(
            "avg-pool backward got a mismatched cache".into(),
        ));
    };
    let (batch, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let plane = h * w;
    let mut dx = Tensor::zeros(input_shape);
    for bi in 0..batch {
        for ci in 0..c {
            let g = dy.data()[bi * c + ci] / plane as f64;
            let start = (bi * c + ci) * plane;
            for v in &mut dx.data_mut()[start..start + plane] {
                *v = g;
            }
        }
    }
    Ok(dx)
}

pub fn flatten_forward(x: &Tensor) -> Result<(Tensor, LayerCache)> {
    let shape = x.shape().to_vec();
    let batch = shape[0];
    let features: usize = shape[1..].iter().product();
    let y = Tensor::from_vec(&[batch, features], x.data().to_vec())?;
    Ok((y, LayerCache::Flatten { input_shape: shape }))
}

pub fn flatten_backward(cache: &LayerCache, dy: &Tensor) -> Result<Tensor> {
    let LayerCache::Flatten { input_shape } = cache else {
        return Err(Error::InvalidArgument(
            "flatten backward got a mismatched cache".into(),
        ));
    };
    Tensor::from_vec(input_shape, dy.data().to_vec())
}

pub fn batchnorm_forward(
    bn: &BatchNorm,
    x: &Tensor,
    training: bool,
) -> Result<(Tensor, LayerCache)> {
    let (batch, c, h, w) = x.dims4()?;
    if c != bn.channels {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} channels, got {c}",
            bn.name, bn.channels
        )));
    }
    let plane = h * w;
    let m = (batch * plane) as f64;
    let mut y = Tensor::zeros(x.shape());

    if !training {
        for bi in 0..batch {
            for ci in 0..c {
                let inv = 1.0 / (bn.running_var[ci] + bn.eps).sqrt();
                let start = (bi * c + ci) * plane;
                for idx in start..start + plane {
                    let x_hat = (x.data()[idx] - bn.running_mean[ci]) * inv;
                    y.data_mut()[idx] = bn.gamma[ci] * x_hat + bn.shift[ci];
                }
            }
        }
        return Ok((y, LayerCache::BatchNormEval));
    }

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut sum = 0.0;
        for bi in 0..batch {
            let start = (bi * c + ci) * plane;
            sum += x.data()[start..start + plane].iter().sum::<f64>();
        }
        mean[ci] = sum / m;
        let mut sq = 0.0;
        for bi in 0..batch {
            let start = (bi * c + ci) * plane;
            for &v in &x.data()[start..start + plane] {
                let d = v - mean[ci];
                sq += d * d;
            }
        }
        var[ci] = sq / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut x_hat = vec![0.0; x.numel()];
    for bi in 0..batch {
        for ci in 0..c {
            let start = (bi * c + ci) * plane;
            let xs = &x.data()[start..start + plane];
            let hats = &mut x_hat[start..start + plane];
            let ys = &mut y.data_mut()[start..start + plane];
            for ((xv, hat), yv) in xs.iter().zip(hats).zip(ys) {
                let xh = (xv - mean[ci]) * inv_std[ci];
                *hat = xh;
                *yv = bn.gamma[ci] * xh + bn.shift[ci];
            }
        }
    }
    Ok((
        y,
        LayerCache::BatchNorm {
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

pub fn batchnorm_backward(
    bn: &BatchNorm,
    cache: &LayerCache,
    dy: &Tensor,
) -> Result<(Tensor, LayerGrad)> {
    let LayerCache::BatchNorm { x_hat, inv_std, .. } = cache else {
        return Err(Error::InvalidArgument(
            "batchnorm backward needs a training cache".into(),
        ));
    };
    let (batch, c, h, w) = dy.dims4()?;
    let plane = h * w;
    let m = (batch * plane) as f64;

    let mut d_gamma = vec![0.0; c];
    let mut d_shift = vec![0.0; c];
    for bi in 0..batch {
        for ci in 0..c {
            let start = (bi * c + ci) * plane;
            let dys = &dy.data()[start..start + plane];
            let hats = &x_hat[start..start + plane];
            for (g, hat) in dys.iter().zip(hats) {
                d_gamma[ci] += g * hat;
                d_shift[ci] += g;
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape());
    for bi in 0..batch {
        for ci in 0..c {
            let scale = bn.gamma[ci] * inv_std[ci];
            let mean_dy = d_shift[ci] / m;
            let mean_dy_xhat = d_gamma[ci] / m;
            let start = (bi * c + ci) * plane;
            let dys = &dy.data()[start..start + plane];
            let hats = &x_hat[start..start + plane];
            let dxs = &mut dx.data_mut()[start..start + plane];
            for ((out, g), hat) in dxs.iter_mut().zip(dys).zip(hats) {
                *out = scale * (g - mean_dy - hat * mean_dy_xhat);
            }
        }
    }
    Ok((dx, LayerGrad::BatchNorm { d_gamma, d_shift }))
}
