//! The training loop: per-step mask sampling, masked forward/backward, Adam
//! updates, schedule advancement at epoch boundaries, and the deterministic
//! final mask.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::mask::{mask_agreement, pruned_fraction, PruneMask};
use crate::nn::data::{gather_batch, DatasetSplit};
use crate::nn::layers::Layer;
use crate::nn::network::{
    backward_from, forward_with_masks, softmax_cross_entropy, update_running_stats, Adam,
    Gradients, Network,
};
use crate::nn::prune::PruneState;
use crate::rng::RandomSource;
use crate::schedule::{beta_at, lr_at, BetaSchedule, LrSchedule};

/// How masks evolve during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Sample each step from the annealed Gibbs distribution.
    Gibbs,
    /// Hard pruning: pin each step's mask to the converged mask of the
    /// current weights.
    Converged,
    /// Keep the masks installed before training untouched.
    Fixed,
    /// Train dense; any installed masks are reset to all-kept.
    Unpruned,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub mask_mode: MaskMode,
    /// L1 coefficient added to the loss over prunable layers' weights.
    pub l1_penalty: f64,
    /// Overrides the schedule with a constant rate (fine-tuning).
    pub constant_lr: Option<f64>,
    /// Label recorded in history rows.
    pub phase: String,
    /// Epoch numbering offset for multi-phase runs.
    pub epoch_offset: usize,
    /// Append the closing "final" row. Multi-phase runs disable this on all
    /// but the last phase.
    pub emit_final: bool,
}

impl TrainOptions {
    pub fn gibbs(epochs: usize, batch_size: usize) -> Self {
        TrainOptions {
            epochs,
            batch_size,
            augment: false,
            mask_mode: MaskMode::Gibbs,
            l1_penalty: 0.0,
            constant_lr: None,
            phase: "train".into(),
            epoch_offset: 0,
            emit_final: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerEpochStats {
    pub layer: String,
    pub pruned_fraction: f64,
    pub agreement_with_cvg: f64,
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: String,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub beta: f64,
    pub lr: f64,
    pub layers: Vec<LayerEpochStats>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochStats>,
    pub final_masks: Vec<(String, PruneMask)>,
}

fn for_each_prunable(
    layers: &mut [Layer],
    f: &mut impl FnMut(&str, &[f64], &mut PruneState) -> Result<()>,
) -> Result<()> {
    for layer in layers {
        match layer {
            Layer::Conv(c) => {
                if let Some(state) = c.prune.as_mut() {
                    f(&c.name, &c.weights, state)?;
                }
            }
            Layer::Dense(d) => {
                if let Some(state) = d.prune.as_mut() {
                    f(&d.name, &d.weights, state)?;
                }
            }
            Layer::Residual(inner) => for_each_prunable(inner, f)?,
            _ => {}
        }
    }
    Ok(())
}

fn resample_masks(
    net: &mut Network,
    mode: MaskMode,
    beta: f64,
    mask_rng: &RandomSource,
    step: u64,
) -> Result<()> {
    for_each_prunable(&mut net.layers, &mut |name, weights, state| match mode {
        MaskMode::Gibbs => {
            let rng = mask_rng.fork_str(name).fork(step);
            state.resample(weights, name, beta, &rng)
        }
        MaskMode::Converged => state.set_converged(weights, name),
        MaskMode::Fixed => Ok(()),
        MaskMode::Unpruned => {
            state.mask = PruneMask::all_kept(state.mask.len());
            Ok(())
        }
    })
}

/// Add the L1 subgradient for prunable layers' weights and return the
/// penalty value itself.
fn apply_l1(net: &mut Network, grads: &mut Gradients, penalty: f64) -> f64 {
    if penalty == 0.0 {
        return 0.0;
    }
    fn walk(layers: &[Layer], grads: &mut [crate::nn::layers::LayerGrad], penalty: f64) -> f64 {
        use crate::nn::layers::LayerGrad;
        let mut total = 0.0;
        for (layer, grad) in layers.iter().zip(grads) {
            match (layer, grad) {
                (Layer::Conv(c), LayerGrad::Conv { d_weights, .. }) if c.prune.is_some() => {
                    for (g, w) in d_weights.iter_mut().zip(&c.weights) {
                        *g += penalty * w.signum();
                        total += penalty * w.abs();
                    }
                }
                (Layer::Dense(d), LayerGrad::Dense { d_weights, .. }) if d.prune.is_some() => {
                    for (g, w) in d_weights.iter_mut().zip(&d.weights) {
                        *g += penalty * w.signum();
                        total += penalty * w.abs();
                    }
                }
                (Layer::Residual(inner), LayerGrad::Residual(inner_grads)) => {
                    total += walk(inner, inner_grads, penalty);
                }
                _ => {}
            }
        }
        total
    }
    walk(&net.layers, &mut grads.0, penalty)
}

fn layer_stats(net: &mut Network) -> Result<Vec<LayerEpochStats>> {
    let mut stats = Vec::new();
    for_each_prunable(&mut net.layers, &mut |name, weights, state| {
        let cvg = state.converged_mask(weights, name)?;
        stats.push(LayerEpochStats {
            layer: name.to_string(),
            pruned_fraction: pruned_fraction(&state.mask),
            agreement_with_cvg: mask_agreement(&state.mask, &cvg)?,
        });
        Ok(())
    })?;
    Ok(stats)
}

/// Pin every prunable layer's mask to the converged mask of its current
/// weights (one-shot magnitude pruning).
pub fn set_converged_masks(net: &mut Network) -> Result<()> {
    for_each_prunable(&mut net.layers, &mut |name, weights, state| {
        state.set_converged(weights, name)
    })
}

/// Collect (layer name, mask) for every prunable layer.
pub fn collect_masks(net: &mut Network) -> Vec<(String, PruneMask)> {
    let mut masks = Vec::new();
    let _ = for_each_prunable(&mut net.layers, &mut |name, _, state| {
        masks.push((name.to_string(), state.mask.clone()));
        Ok(())
    });
    masks
}

/// Install fixed masks by layer name (missing layers error).
pub fn install_masks(net: &mut Network, masks: &[(String, PruneMask)]) -> Result<()> {
    for (name, mask) in masks {
        let mut found = false;
        for_each_prunable(&mut net.layers, &mut |layer_name, _, state| {
            if layer_name == name {
                if state.mask.len() != mask.len() {
                    return Err(Error::LengthMismatch {
                        expected: state.mask.len(),
                        got: mask.len(),
                    });
                }
                state.mask = mask.clone();
                found = true;
            }
            Ok(())
        })?;
        if !found {
            return Err(Error::InvalidArgument(format!(
                "mask targets layer {name}, which is not prunable in this model"
            )));
        }
    }
    Ok(())
}

/// Top-1 accuracy over a split. `mask_applied` switches between the masked
/// network and the dense weights.
pub fn evaluate(net: &Network, split: &DatasetSplit, mask_applied: bool) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(256) {
        let (batch, labels) = gather_batch(split, chunk, None);
        let (logits, _) = forward_with_masks(net, &batch, false, mask_applied)?;
        let (_, classes) = logits.dims2()?;
        for (bi, &label) in labels.iter().enumerate() {
            let row = &logits.data()[bi * classes..][..classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(k, _)| k)
                .expect("at least one class");
            if pred == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Train with per-step mask sampling, then pin the final mask.
///
/// Per step: rebuild energy coefficients from the current weights (subject
/// to each layer's rebuild cadence), draw a mask per pruned layer, run the
/// masked forward/backward, and take an Adam step. Beta and the learning
/// rate advance at epoch boundaries. After the last epoch the final mask is
/// the deterministic converged mask of the final weights (for the sampling
/// modes), and a closing history row records the permanently masked
/// evaluation.
pub fn train_and_prune(
    net: &mut Network,
    train: &DatasetSplit,
    val: &DatasetSplit,
    beta_sched: &BetaSchedule,
    lr_sched: &LrSchedule,
    opts: &TrainOptions,
    rng: &RandomSource,
) -> Result<TrainResult> {
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let mut adam = Adam::new(net);
    let shuffle_rng = rng.fork_str("shuffle");
    let augment_rng = rng.fork_str("augment");
    let mask_rng = rng.fork_str("mask");

    let samples_masks = matches!(opts.mask_mode, MaskMode::Gibbs | MaskMode::Converged);
    let mut history = Vec::new();
    let mut global_step: u64 = 0;
    let mut last_loss = 0.0;
    let mut last_beta = 0.0;
    let mut last_lr = 0.0;

    for epoch in 0..opts.epochs {
        let started = Instant::now();
        let beta = beta_at(beta_sched, epoch);
        let lr = opts.constant_lr.unwrap_or_else(|| lr_at(lr_sched, epoch));
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle_rng.fork(epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            resample_masks(net, opts.mask_mode, beta, &mask_rng, global_step)?;
            let aug = opts.augment.then(|| augment_rng.fork(global_step));
            let (batch, labels) = gather_batch(train, chunk, aug.as_ref());
            let (logits, cache) = forward_with_masks(net, &batch, true, true)?;
            let (mut loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            let mut grads = backward_from(net, &cache, dlogits)?;
            loss += apply_l1(net, &mut grads, opts.l1_penalty);
            adam.step(net, &grads, lr)?;
            update_running_stats(net, &cache);
            loss_sum += loss;
            steps += 1;
            global_step += 1;
        }

        last_loss = loss_sum / steps as f64;
        last_beta = if samples_masks { beta } else { 0.0 };
        last_lr = lr;
        let val_accuracy = evaluate(net, val, true)?;
        history.push(EpochStats {
            epoch: opts.epoch_offset + epoch,
            phase: opts.phase.clone(),
            train_loss: last_loss,
            val_accuracy,
            beta: last_beta,
            lr,
            layers: layer_stats(net)?,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }

    // The final mask is deterministic: the converged mask of the final
    // weights, not one more stochastic draw.
    if samples_masks {
        set_converged_masks(net)?;
    }
    let final_masks = collect_masks(net);
    if opts.emit_final {
        let final_started = Instant::now();
        let val_accuracy = evaluate(net, val, true)?;
        history.push(EpochStats {
            epoch: opts.epoch_offset + opts.epochs.saturating_sub(1),
            phase: "final".into(),
            train_loss: last_loss,
            val_accuracy,
            beta: last_beta,
            lr: last_lr,
            layers: layer_stats(net)?,
            wall_time_s: final_started.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainResult {
        history,
        final_masks,
    })
}
