//! Config-driven experiment execution: model assembly, layer pruning policy,
//! Gibbs training, the four baselines, and artifact output.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::config::{
    AugmentMode, BaselineKind, DatasetKind, ExperimentConfig, ModelKind,
};
use crate::experiment::maskio::{export_mask, import_mask};
use crate::experiment::report::{rows_from_history, write_report, ReportRow};
use crate::mask::{PruneFraction, PruneMask};
use crate::nn::checkpoint::write_checkpoint;
use crate::nn::data::{subset, synthetic_dataset, DatasetSplit};
use crate::nn::layers::Layer;
use crate::nn::models::{small_resnet, toy_cnn, toy_mlp};
use crate::nn::network::Network;
use crate::nn::prune::{filter_partition, kernel_partition, PruneConfig, PruneState, Structure};
use crate::nn::train::{
    collect_masks, install_masks, train_and_prune, EpochStats, MaskMode, TrainOptions,
};
use crate::rng::RandomSource;
use crate::schedule::{BetaSchedule, LrSchedule};

/// Environment variable naming the dataset root directory.
pub const DATA_ENV: &str = "GIBBS_PRUNE_DATA";

#[derive(Debug, Clone)]
pub struct ExperimentArtifacts {
    pub experiment_id: String,
    pub out_dir: PathBuf,
    pub report_csv: PathBuf,
    pub checkpoint: PathBuf,
    pub mask_file: PathBuf,
    pub rows: Vec<ReportRow>,
    pub final_accuracy: f64,
}

fn cifar_paths(root: &Path, train: bool) -> Vec<PathBuf> {
    let names: Vec<String> = if train {
        (1..=5).map(|i| format!("data_batch_{i}.bin")).collect()
    } else {
        vec!["test_batch.bin".into()]
    };
    let nested = root.join("cifar-10-batches-bin");
    let base = if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    };
    names.iter().map(|n| base.join(n)).collect()
}

/// Resolve the configured dataset into train and validation splits.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(DatasetSplit, DatasetSplit)> {
    match &cfg.dataset {
        DatasetKind::Synthetic { per_class } => synthetic_dataset(cfg.seed, *per_class),
        DatasetKind::Cifar10 { subset: take } => {
            let root = std::env::var(DATA_ENV).map(PathBuf::from).map_err(|_| {
                Error::Dataset(format!(
                    "cifar10 requires the {DATA_ENV} environment variable to point at the dataset root"
                ))
            })?;
            let train_paths = cifar_paths(&root, true);
            for p in &train_paths {
                if !p.is_file() {
                    return Err(Error::Dataset(format!(
                        "missing dataset file {}",
                        p.display()
                    )));
                }
            }
            let mut train = crate::nn::data::load_cifar10_binary(&train_paths)?;
            if let Some(n) = take {
                train = subset(&train, *n);
            }
            let test = crate::nn::data::load_cifar10_binary(&cifar_paths(&root, false))?;
            Ok((train, test))
        }
    }
}

/// Build the configured model with seeded initialization.
pub fn build_model(cfg: &ExperimentConfig, data: &DatasetSplit) -> Result<Network> {
    let (h, w, c) = data.image_shape();
    let input_shape = [c, h, w];
    let init_rng = RandomSource::new(cfg.seed).fork_str("init");
    match cfg.model {
        ModelKind::ToyCnn => toy_cnn(input_shape, data.classes, &init_rng),
        ModelKind::ToyMlp => toy_mlp(input_shape, data.classes, &init_rng),
        ModelKind::SmallResnet => small_resnet(input_shape, data.classes, &init_rng),
    }
}

/// Default pruning targets: every conv layer except the first (batch norm
/// and the dense head stay dense). Models without convs prune their interior
/// dense layers instead. Filter-structured runs can skip 1x1 convs.
pub fn default_prune_targets(net: &Network, structure: Structure, skip_1x1: bool) -> Vec<String> {
    let mut convs: Vec<(String, usize)> = Vec::new();
    net.visit_layers(&mut |layer| {
        if let Layer::Conv(c) = layer {
            convs.push((c.name.clone(), c.k));
        }
    });
    if !convs.is_empty() {
        return convs
            .into_iter()
            .skip(1)
            .filter(|(_, k)| !(skip_1x1 && structure == Structure::Filter && *k == 1))
            .map(|(name, _)| name)
            .collect();
    }
    let dense = net.dense_names();
    if dense.len() <= 2 {
        return Vec::new();
    }
    dense[1..dense.len() - 1].to_vec()
}

/// Attach prune state to the configured layers.
pub fn install_pruning(net: &mut Network, cfg: &ExperimentConfig) -> Result<()> {
    let targets = default_prune_targets(net, cfg.structure, cfg.skip_1x1);
    let mut errors: Vec<Error> = Vec::new();
    let mut unachievable: Vec<String> = Vec::new();
    net.visit_layers_mut(&mut |layer| {
        let (name, is_conv, geom, n) = match layer {
            Layer::Conv(c) => (
                c.name.clone(),
                true,
                Some((c.c_out, c.c_in, c.k)),
                c.weight_count(),
            ),
            Layer::Dense(d) => (d.name.clone(), false, None, d.weight_count()),
            _ => return,
        };
        let overridden = cfg.layer_overrides.get(&name);
        let enabled = overridden
            .and_then(|o| o.prune)
            .unwrap_or_else(|| targets.contains(&name));
        if !enabled {
            return;
        }

        let p_value = overridden.and_then(|o| o.p).unwrap_or(cfg.p);
        let structure = overridden
            .and_then(|o| o.structure)
            .unwrap_or(cfg.structure);
        let hamiltonian = overridden
            .and_then(|o| o.hamiltonian)
            .unwrap_or_else(|| cfg.effective_hamiltonian());
        let p = match PruneFraction::new(p_value) {
            Ok(p) => p,
            Err(e) => {
                errors.push(e);
                return;
            }
        };
        let partition = match (structure, geom) {
            (Structure::Unstructured, _) => None,
            (Structure::Kernel, Some((o, i, k))) => Some(kernel_partition(o, i, k)),
            (Structure::Filter, Some((o, i, k))) => Some(filter_partition(o, i, k)),
            (_, None) => {
                errors.push(Error::InvalidArgument(format!(
                    "layer {name}: structured pruning applies to conv layers only"
                )));
                return;
            }
        };
        let config = PruneConfig {
            p,
            structure,
            hamiltonian,
            c: overridden.and_then(|o| o.c).unwrap_or(cfg.c),
            rebuild_every: overridden
                .and_then(|o| o.rebuild_every)
                .unwrap_or(cfg.rebuild_every),
            chromatic_iters: cfg.chromatic_iters,
            max_block: cfg.max_block,
        };
        // Achievability is a warning, not an error.
        let achievable = match &partition {
            Some(part) => {
                let mut sizes: Vec<usize> = part.groups().iter().map(Vec::len).collect();
                sizes.sort_unstable();
                p.resolve_group_count(&sizes, n).1
            }
            None => p.resolve_count(n).1,
        };
        if !achievable {
            unachievable.push(name.clone());
        }
        match PruneState::new(config, n, partition) {
            Ok(state) => match layer {
                Layer::Conv(c) => c.prune = Some(state),
                Layer::Dense(d) => d.prune = Some(state),
                _ => unreachable!(),
            },
            Err(e) => errors.push(e),
        }
        let _ = is_conv;
    });
    if let Some(e) = errors.into_iter().next() {
        return Err(e);
    }
    for name in unachievable {
        eprintln!(
            "warning: layer {name}: p={} is not exactly achievable; using the nearest achievable count",
            cfg.p
        );
    }
    Ok(())
}

pub fn schedules(cfg: &ExperimentConfig) -> Result<(BetaSchedule, LrSchedule)> {
    let beta = BetaSchedule::new(
        cfg.beta_start,
        cfg.effective_beta_end(),
        cfg.anneal_epochs,
        cfg.beta_mode,
    )?
    .stretched(cfg.stretch)?;
    let lr = LrSchedule::new(
        cfg.lr,
        cfg.lr_drop_epoch,
        cfg.lr_drop_interval,
        cfg.lr_drop_factor,
    )?
    .stretched(cfg.stretch)?;
    Ok((beta, lr))
}

fn augment_enabled(cfg: &ExperimentConfig) -> bool {
    match cfg.augment {
        AugmentMode::On => true,
        AugmentMode::Off => false,
        AugmentMode::Auto => matches!(cfg.dataset, DatasetKind::Cifar10 { .. }),
    }
}

/// Uniformly random masks at each prunable layer's configured sparsity,
/// pruning whole neighbourhoods under structured configs.
pub fn random_masks(net: &mut Network, rng: &RandomSource) -> Vec<(String, PruneMask)> {
    let mut masks = Vec::new();
    net.visit_layers_mut(&mut |layer| {
        let (name, state) = match layer {
            Layer::Conv(c) => (&c.name, c.prune.as_ref()),
            Layer::Dense(d) => (&d.name, d.prune.as_ref()),
            _ => return,
        };
        let Some(state) = state else { return };
        let n = state.mask.len();
        let mut r = rng.fork_str(name);
        let mask = match &state.partition {
            Some(part) if state.config.structure != Structure::Unstructured => {
                let mut order: Vec<usize> = (0..part.num_groups()).collect();
                r.shuffle(&mut order);
                let sizes: Vec<usize> = order.iter().map(|&g| part.groups()[g].len()).collect();
                let (m, _) = state.config.p.resolve_group_count(&sizes, n);
                let mut entries = vec![1i8; n];
                for &g in &order[..m] {
                    for &i in &part.groups()[g] {
                        entries[i] = -1;
                    }
                }
                PruneMask::new(entries).expect("entries are +-1")
            }
            _ => {
                let (count, _) = state.config.p.resolve_count(n);
                let mut order: Vec<usize> = (0..n).collect();
                r.shuffle(&mut order);
                let mut entries = vec![1i8; n];
                for &i in &order[..count] {
                    entries[i] = -1;
                }
                PruneMask::new(entries).expect("entries are +-1")
            }
        };
        masks.push((name.clone(), mask));
    });
    masks
}

fn run_training(
    cfg: &ExperimentConfig,
    net: &mut Network,
    train: &DatasetSplit,
    val: &DatasetSplit,
) -> Result<Vec<EpochStats>> {
    let (beta_sched, lr_sched) = schedules(cfg)?;
    let rng = RandomSource::new(cfg.seed).fork_str("train");
    let augment = augment_enabled(cfg);
    let total_epochs = cfg.total_epochs();

    match cfg.baseline {
        None => {
            let opts = TrainOptions {
                augment,
                ..TrainOptions::gibbs(total_epochs, cfg.batch_size)
            };
            let result = train_and_prune(net, train, val, &beta_sched, &lr_sched, &opts, &rng)?;
            Ok(result.history)
        }
        Some(BaselineKind::RandomMask) => {
            let mask_rng = RandomSource::new(cfg.seed).fork_str("random-mask");
            let masks = random_masks(net, &mask_rng);
            install_masks(net, &masks)?;
            let opts = TrainOptions {
                augment,
                mask_mode: MaskMode::Fixed,
                ..TrainOptions::gibbs(total_epochs, cfg.batch_size)
            };
            let result = train_and_prune(net, train, val, &beta_sched, &lr_sched, &opts, &rng)?;
            Ok(result.history)
        }
        Some(BaselineKind::ReinitRetrain) => {
            let path = cfg.mask_file.as_ref().ok_or_else(|| {
                Error::InvalidArgument("reinit-retrain needs mask_file=<path>".into())
            })?;
            let masks = import_mask(path)?;
            install_masks(net, &masks)?;
            let opts = TrainOptions {
                augment,
                mask_mode: MaskMode::Fixed,
                ..TrainOptions::gibbs(total_epochs, cfg.batch_size)
            };
            let result = train_and_prune(net, train, val, &beta_sched, &lr_sched, &opts, &rng)?;
            Ok(result.history)
        }
        Some(BaselineKind::OneshotMagnitude) => {
            run_post_training_baseline(cfg, net, train, val, &beta_sched, &lr_sched, &rng, 0.0)
        }
        Some(BaselineKind::L1Reg) => run_post_training_baseline(
            cfg,
            net,
            train,
            val,
            &beta_sched,
            &lr_sched,
            &rng,
            cfg.l1_penalty,
        ),
    }
}

/// Train dense (optionally under an L1 penalty), apply the converged
/// magnitude mask once, then fine-tune with the mask fixed.
#[allow(clippy::too_many_arguments)]
fn run_post_training_baseline(
    cfg: &ExperimentConfig,
    net: &mut Network,
    train: &DatasetSplit,
    val: &DatasetSplit,
    beta_sched: &BetaSchedule,
    lr_sched: &LrSchedule,
    rng: &RandomSource,
    l1_penalty: f64,
) -> Result<Vec<EpochStats>> {
    let augment = augment_enabled(cfg);
    let total_epochs = cfg.total_epochs();
    let dense_opts = TrainOptions {
        augment,
        mask_mode: MaskMode::Unpruned,
        l1_penalty,
        ..TrainOptions::gibbs(total_epochs, cfg.batch_size)
    };
    // The trailing final row comes from the fine-tune phase.
    let mut history = Vec::new();
    let dense_result = train_and_prune(
        net,
        train,
        val,
        beta_sched,
        lr_sched,
        &TrainOptions {
            emit_final: false,
            ..dense_opts
        },
        &rng.fork_str("dense-phase"),
    )?;
    history.extend(dense_result.history);

    // One-shot magnitude mask at the converged state of the trained weights.
    crate::nn::train::set_converged_masks(net)?;
    let ft_opts = TrainOptions {
        epochs: cfg.fine_tune_epochs,
        batch_size: cfg.batch_size,
        augment,
        mask_mode: MaskMode::Fixed,
        l1_penalty: 0.0,
        constant_lr: Some(cfg.fine_tune_lr),
        phase: "fine-tune".into(),
        epoch_offset: total_epochs,
        emit_final: true,
    };
    let ft_result = train_and_prune(
        net,
        train,
        val,
        beta_sched,
        lr_sched,
        &ft_opts,
        &rng.fork_str("fine-tune"),
    )?;
    history.extend(ft_result.history);
    Ok(history)
}

/// Execute a configured experiment and write its artifacts: a CSV report,
/// a final checkpoint, and a mask file.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentArtifacts> {
    let experiment_id = cfg.resolved_id();
    let out_dir = cfg
        .output_dir
        .join(&experiment_id)
        .join(format!("seed{}", cfg.seed));
    fs::create_dir_all(&out_dir)?;

    let (train, val) = load_dataset(cfg)?;
    let mut net = build_model(cfg, &train)?;
    install_pruning(&mut net, cfg)?;
    let history = run_training(cfg, &mut net, &train, &val)?;

    let rows = rows_from_history(&experiment_id, cfg.seed, &history);
    let report_csv = out_dir.join("report.csv");
    write_report(&report_csv, &rows)?;

    let checkpoint = out_dir.join("final.ckpt");
    write_checkpoint(&net, &checkpoint)?;

    let mask_file = out_dir.join("final_masks.txt");
    export_mask(&collect_masks(&mut net), &mask_file)?;

    let final_accuracy = rows
        .iter()
        .rev()
        .find(|r| r.phase == "final")
        .map(|r| r.val_accuracy)
        .unwrap_or(0.0);

    Ok(ExperimentArtifacts {
        experiment_id,
        out_dir,
        report_csv,
        checkpoint,
        mask_file,
        rows,
        final_accuracy,
    })
}
