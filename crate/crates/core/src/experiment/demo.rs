//! Convergence diagnostics: sweep beta over the schedule on a frozen weight
//! snapshot and record how sampled masks approach the converged mask.

use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiment::config::ExperimentConfig;
use crate::experiment::runner::{build_model, install_pruning, load_dataset, schedules};
use crate::nn::layers::Layer;
use crate::rng::RandomSource;
use crate::schedule::beta_at;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub beta: f64,
    pub mask_agreement: f64,
    pub pruned_fraction: f64,
}

/// One mask draw per pruned layer at each scheduled beta, aggregated over
/// all pruned weights.
pub fn sample_demo_rows(cfg: &ExperimentConfig) -> Result<Vec<DemoRow>> {
    let (train, _) = load_dataset(cfg)?;
    let mut net = build_model(cfg, &train)?;
    install_pruning(&mut net, cfg)?;
    let (beta_sched, _) = schedules(cfg)?;
    let rng = RandomSource::new(cfg.seed).fork_str("sample-demo");

    let mut rows = Vec::new();
    for epoch in 0..=cfg.total_epochs() {
        let beta = beta_at(&beta_sched, epoch);
        let mut agree = 0usize;
        let mut pruned = 0usize;
        let mut total = 0usize;
        let mut maybe_err = None;
        net.visit_layers_mut(&mut |layer| {
            let (name, weights, state) = match layer {
                Layer::Conv(c) => (&c.name, &c.weights, c.prune.as_mut()),
                Layer::Dense(d) => (&d.name, &d.weights, d.prune.as_mut()),
                _ => return,
            };
            let Some(state) = state else { return };
            if maybe_err.is_some() {
                return;
            }
            let draw_rng = rng.fork_str(name).fork(epoch as u64);
            if let Err(e) = state.resample(weights, name, beta, &draw_rng) {
                maybe_err = Some(e);
                return;
            }
            let cvg = match state.converged_mask(weights, name) {
                Ok(c) => c,
                Err(e) => {
                    maybe_err = Some(e);
                    return;
                }
            };
            for (a, b) in state.mask.entries().iter().zip(cvg.entries()) {
                if a == b {
                    agree += 1;
                }
                if *a == -1 {
                    pruned += 1;
                }
            }
            total += state.mask.len();
        });
        if let Some(e) = maybe_err {
            return Err(e);
        }
        if total == 0 {
            break;
        }
        rows.push(DemoRow {
            beta,
            mask_agreement: agree as f64 / total as f64,
            pruned_fraction: pruned as f64 / total as f64,
        });
    }
    Ok(rows)
}

/// Run the sweep and write `sample_demo.csv` under the configured output
/// directory. Returns the path and rows.
pub fn sample_demo(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<DemoRow>)> {
    let rows = sample_demo_rows(cfg)?;
    let out_dir = cfg
        .output_dir
        .join(cfg.resolved_id())
        .join(format!("seed{}", cfg.seed));
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("sample_demo.csv");
    write_demo_csv(&path, &rows)?;
    Ok((path, rows))
}

pub fn write_demo_csv(path: impl AsRef<Path>, rows: &[DemoRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["beta", "mask_agreement", "pruned_fraction"])?;
    for row in rows {
        w.write_record([
            row.beta.to_string(),
            row.mask_agreement.to_string(),
            row.pruned_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
