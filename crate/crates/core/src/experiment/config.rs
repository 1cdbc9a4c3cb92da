//! Flat key=value experiment configuration.
//!
//! Lines are `key=value`; `#` starts a comment; unknown keys are errors and
//! missing keys take documented defaults. Per-layer overrides use
//! `layer.<name>.<key>` prefixes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::nn::prune::{HamiltonianKind, Structure};
use crate::schedule::AnnealMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ToyMlp,
    ToyCnn,
    SmallResnet,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::ToyMlp => "toy-mlp",
            ModelKind::ToyCnn => "toy-cnn",
            ModelKind::SmallResnet => "small-resnet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic { per_class: usize },
    Cifar10 { subset: Option<usize> },
}

impl DatasetKind {
    pub fn id_str(&self) -> String {
        match self {
            DatasetKind::Synthetic { per_class } => format!("synthetic{per_class}"),
            DatasetKind::Cifar10 { subset: None } => "cifar10".into(),
            DatasetKind::Cifar10 { subset: Some(n) } => format!("cifar10-{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    /// On for CIFAR-10, off for the synthetic set.
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    RandomMask,
    ReinitRetrain,
    OneshotMagnitude,
    L1Reg,
}

impl BaselineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::RandomMask => "random-mask",
            BaselineKind::ReinitRetrain => "reinit-retrain",
            BaselineKind::OneshotMagnitude => "oneshot-magnitude",
            BaselineKind::L1Reg => "l1-reg",
        }
    }
}

/// Per-layer overrides of the pruning defaults.
#[derive(Debug, Clone, Default)]
pub struct LayerOverride {
    pub prune: Option<bool>,
    pub p: Option<f64>,
    pub structure: Option<Structure>,
    pub hamiltonian: Option<HamiltonianKind>,
    pub c: Option<f64>,
    pub rebuild_every: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dataset: DatasetKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub stretch: usize,
    pub augment: AugmentMode,

    pub p: f64,
    pub structure: Structure,
    pub hamiltonian: Option<HamiltonianKind>,
    pub c: f64,
    pub rebuild_every: usize,
    pub chromatic_iters: usize,
    pub max_block: usize,
    pub layer_overrides: BTreeMap<String, LayerOverride>,

    pub beta_start: f64,
    pub beta_end: Option<f64>,
    pub anneal_epochs: usize,
    pub beta_mode: AnnealMode,

    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_interval: usize,
    pub lr_drop_factor: f64,

    pub baseline: Option<BaselineKind>,
    pub mask_file: Option<PathBuf>,
    pub fine_tune_epochs: usize,
    pub fine_tune_lr: f64,
    pub l1_penalty: f64,
    pub skip_1x1: bool,

    pub output_dir: PathBuf,
    pub experiment_id: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::ToyCnn,
            dataset: DatasetKind::Synthetic { per_class: 250 },
            seed: 0,
            epochs: 200,
            batch_size: 32,
            stretch: 1,
            augment: AugmentMode::Auto,
            p: 0.9,
            structure: Structure::Unstructured,
            hamiltonian: None,
            c: 0.01,
            rebuild_every: 1,
            chromatic_iters: 50,
            max_block: 16,
            layer_overrides: BTreeMap::new(),
            beta_start: 0.7,
            beta_end: None,
            anneal_epochs: 128,
            beta_mode: AnnealMode::Log,
            lr: 1e-3,
            lr_drop_epoch: 80,
            lr_drop_interval: 40,
            lr_drop_factor: 10.0,
            baseline: None,
            mask_file: None,
            fine_tune_epochs: 0,
            fine_tune_lr: 1e-5,
            l1_penalty: 0.001,
            skip_1x1: false,
            output_dir: PathBuf::from("runs"),
            experiment_id: None,
        }
    }
}

impl ExperimentConfig {
    /// Final beta: explicit value, else 1e4, escalated to 1e6 when the
    /// schedule is stretched.
    pub fn effective_beta_end(&self) -> f64 {
        self.beta_end
            .unwrap_or(if self.stretch > 1 { 1e6 } else { 1e4 })
    }

    /// Hamiltonian family: explicit value, else the best performer for the
    /// structure (linear-square unstructured, quadratic structured).
    pub fn effective_hamiltonian(&self) -> HamiltonianKind {
        self.hamiltonian.unwrap_or(match self.structure {
            Structure::Unstructured => HamiltonianKind::LinearSquare,
            _ => HamiltonianKind::StructuredQuadratic,
        })
    }

    /// Total epochs actually trained: configured epochs times the stretch.
    pub fn total_epochs(&self) -> usize {
        self.epochs * self.stretch
    }

    pub fn resolved_id(&self) -> String {
        if let Some(id) = &self.experiment_id {
            return id.clone();
        }
        let structure = match self.structure {
            Structure::Unstructured => "unstructured",
            Structure::Kernel => "kernel",
            Structure::Filter => "filter",
        };
        let ham = hamiltonian_str(self.effective_hamiltonian());
        let baseline = match self.baseline {
            None => String::new(),
            Some(b) => format!("_{}", b.as_str()),
        };
        let stretch = if self.stretch > 1 {
            format!("_s{}", self.stretch)
        } else {
            String::new()
        };
        format!(
            "{}_{}_{}_{}_p{:.2}{}{}",
            self.model.as_str(),
            self.dataset.id_str(),
            structure,
            ham,
            self.p,
            stretch,
            baseline
        )
    }
}

fn hamiltonian_str(kind: HamiltonianKind) -> &'static str {
    match kind {
        HamiltonianKind::Binary => "binary",
        HamiltonianKind::LinearSign => "linear-sign",
        HamiltonianKind::LinearSquare => "linear-square",
        HamiltonianKind::LinearAbs => "linear-abs",
        HamiltonianKind::StructuredLinear => "structured-linear",
        HamiltonianKind::StructuredQuadratic => "structured-quadratic",
    }
}

fn parse_hamiltonian(value: &str, line: usize) -> Result<HamiltonianKind> {
    Ok(match value {
        "binary" => HamiltonianKind::Binary,
        "linear-sign" => HamiltonianKind::LinearSign,
        "linear-square" => HamiltonianKind::LinearSquare,
        "linear-abs" => HamiltonianKind::LinearAbs,
        "structured-linear" => HamiltonianKind::StructuredLinear,
        "structured-quadratic" => HamiltonianKind::StructuredQuadratic,
        other => {
            return Err(Error::Config {
                line,
                message: format!("unknown hamiltonian '{other}'"),
            })
        }
    })
}

fn parse_structure(value: &str, line: usize) -> Result<Structure> {
    Ok(match value {
        "unstructured" => Structure::Unstructured,
        "kernel" => Structure::Kernel,
        "filter" => Structure::Filter,
        other => {
            return Err(Error::Config {
                line,
                message: format!("unknown structure '{other}'"),
            })
        }
    })
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("could not parse '{value}' for key '{key}'"),
    })
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::Config {
            line,
            message: format!("could not parse '{other}' as a flag for key '{key}'"),
        }),
    }
}

fn parse_fraction(value: &str, line: usize, key: &str) -> Result<f64> {
    let p: f64 = parse_num(value, line, key)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config {
            line,
            message: format!("{key}={p} outside [0, 1]"),
        });
    }
    Ok(p)
}

/// Parse a configuration from key=value text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected key=value, got '{content}'"),
            });
        };
        let key = key.trim();
        let value = value.trim();

        if let Some(rest) = key.strip_prefix("layer.") {
            let Some((name, field)) = rest.rsplit_once('.') else {
                return Err(Error::Config {
                    line,
                    message: format!("layer override '{key}' needs layer.<name>.<field>"),
                });
            };
            let entry = cfg.layer_overrides.entry(name.to_string()).or_default();
            match field {
                "prune" => entry.prune = Some(parse_bool(value, line, key)?),
                "p" => entry.p = Some(parse_fraction(value, line, key)?),
                "structure" => entry.structure = Some(parse_structure(value, line)?),
                "hamiltonian" => entry.hamiltonian = Some(parse_hamiltonian(value, line)?),
                "c" => entry.c = Some(parse_num(value, line, key)?),
                "rebuild_every" => entry.rebuild_every = Some(parse_num(value, line, key)?),
                other => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown layer override field '{other}'"),
                    })
                }
            }
            continue;
        }

        match key {
            "model" => {
                cfg.model = match value {
                    "toy-mlp" => ModelKind::ToyMlp,
                    "toy-cnn" => ModelKind::ToyCnn,
                    "small-resnet" => ModelKind::SmallResnet,
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown model '{other}'"),
                        })
                    }
                }
            }
            "dataset" => {
                cfg.dataset = match value.split_once(':') {
                    None => match value {
                        "synthetic" => DatasetKind::Synthetic { per_class: 250 },
                        "cifar10" => DatasetKind::Cifar10 { subset: None },
                        other => {
                            return Err(Error::Config {
                                line,
                                message: format!("unknown dataset '{other}'"),
                            })
                        }
                    },
                    Some(("synthetic", n)) => DatasetKind::Synthetic {
                        per_class: parse_num(n, line, key)?,
                    },
                    Some(("cifar10", n)) => DatasetKind::Cifar10 {
                        subset: Some(parse_num(n, line, key)?),
                    },
                    Some((other, _)) => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown dataset '{other}'"),
                        })
                    }
                }
            }
            "seed" => cfg.seed = parse_num(value, line, key)?,
            "epochs" => cfg.epochs = parse_num(value, line, key)?,
            "batch_size" => cfg.batch_size = parse_num(value, line, key)?,
            "stretch" => cfg.stretch = parse_num(value, line, key)?,
            "augment" => {
                cfg.augment = match value {
                    "auto" => AugmentMode::Auto,
                    "on" | "true" => AugmentMode::On,
                    "off" | "false" => AugmentMode::Off,
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown augment mode '{other}'"),
                        })
                    }
                }
            }
            "p" => cfg.p = parse_fraction(value, line, key)?,
            "structure" => cfg.structure = parse_structure(value, line)?,
            "hamiltonian" => cfg.hamiltonian = Some(parse_hamiltonian(value, line)?),
            "c" => cfg.c = parse_num(value, line, key)?,
            "rebuild_every" => cfg.rebuild_every = parse_num(value, line, key)?,
            "chromatic_iters" => cfg.chromatic_iters = parse_num(value, line, key)?,
            "max_block" => cfg.max_block = parse_num(value, line, key)?,
            "beta_start" => cfg.beta_start = parse_num(value, line, key)?,
            "beta_end" => cfg.beta_end = Some(parse_num(value, line, key)?),
            "anneal_epochs" => cfg.anneal_epochs = parse_num(value, line, key)?,
            "beta_mode" => {
                cfg.beta_mode = match value {
                    "log" => AnnealMode::Log,
                    "linear" => AnnealMode::Linear,
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown beta mode '{other}'"),
                        })
                    }
                }
            }
            "lr" => cfg.lr = parse_num(value, line, key)?,
            "lr_drop_epoch" => cfg.lr_drop_epoch = parse_num(value, line, key)?,
            "lr_drop_interval" => cfg.lr_drop_interval = parse_num(value, line, key)?,
            "lr_drop_factor" => cfg.lr_drop_factor = parse_num(value, line, key)?,
            "baseline" => {
                cfg.baseline = match value {
                    "" | "none" => None,
                    "random-mask" => Some(BaselineKind::RandomMask),
                    "reinit-retrain" => Some(BaselineKind::ReinitRetrain),
                    "oneshot-magnitude" => Some(BaselineKind::OneshotMagnitude),
                    "l1-reg" => Some(BaselineKind::L1Reg),
                    other => {
                        return Err(Error::Config {
                            line,
                            message: format!("unknown baseline '{other}'"),
                        })
                    }
                }
            }
            "mask_file" => cfg.mask_file = Some(PathBuf::from(value)),
            "fine_tune_epochs" => cfg.fine_tune_epochs = parse_num(value, line, key)?,
            "fine_tune_lr" => cfg.fine_tune_lr = parse_num(value, line, key)?,
            "l1_penalty" => cfg.l1_penalty = parse_num(value, line, key)?,
            "skip_1x1" => cfg.skip_1x1 = parse_bool(value, line, key)?,
            "output_dir" => cfg.output_dir = PathBuf::from(value),
            "experiment_id" => cfg.experiment_id = Some(value.to_string()),
            other => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key '{other}'"),
                })
            }
        }
    }

    if cfg.epochs == 0 {
        return Err(Error::Config {
            line: 0,
            message: "epochs must be at least 1".into(),
        });
    }
    if cfg.stretch == 0 {
        return Err(Error::Config {
            line: 0,
            message: "stretch must be at least 1".into(),
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config {
            line: 0,
            message: "batch_size must be at least 1".into(),
        });
    }
    // Surface structure/hamiltonian mismatches at parse time.
    cfg.effective_hamiltonian()
        .variant_for(cfg.structure)
        .map_err(|e| Error::Config {
            line: 0,
            message: e.to_string(),
        })?;
    Ok(cfg)
}
