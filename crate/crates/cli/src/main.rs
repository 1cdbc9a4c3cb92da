//! Command-line experiment runner.
//!
//! Subcommands: `run` (train-and-prune or a baseline from a config file),
//! `sample-demo` (beta-sweep convergence diagnostics), `export-mask` (pull
//! masks out of a checkpoint), and `report` (aggregate run CSVs).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gibbs_pruning::experiment::config::{parse_config, ExperimentConfig};
use gibbs_pruning::experiment::demo::sample_demo;
use gibbs_pruning::experiment::maskio::export_mask;
use gibbs_pruning::experiment::report::{read_report, summarize, write_summary};
use gibbs_pruning::experiment::runner::run_experiment;
use gibbs_pruning::mask::PruneMask;
use gibbs_pruning::nn::checkpoint::read_checkpoint;

#[derive(Parser)]
#[command(
    name = "gibbs-prune",
    version,
    about = "Gibbs-distribution neural network pruning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiments from config files.
    Run {
        /// Config file path (repeatable).
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Seed overrides; each config runs once per seed (comma separated).
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        /// Override the configured output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the configured schedule stretch factor.
        #[arg(long)]
        stretch: Option<usize>,
        /// Run up to this many experiments concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Sweep beta over the schedule on frozen weights and report mask
    /// convergence diagnostics.
    SampleDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write the masks stored in a checkpoint to a mask file.
    ExportMask {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate report CSVs under a directory into a summary table.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Summary CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(
    configs: &[PathBuf],
    seeds: &[u64],
    out_dir: Option<PathBuf>,
    stretch: Option<usize>,
    jobs: usize,
) -> Result<(), String> {
    let mut experiments = Vec::new();
    for path in configs {
        let base = load_config(path)?;
        let seed_list: Vec<u64> = if seeds.is_empty() {
            vec![base.seed]
        } else {
            seeds.to_vec()
        };
        for seed in seed_list {
            let mut cfg = base.clone();
            cfg.seed = seed;
            if let Some(dir) = &out_dir {
                cfg.output_dir = dir.clone();
            }
            if let Some(s) = stretch {
                cfg.stretch = s;
            }
            experiments.push(cfg);
        }
    }

    let run_one = |cfg: &ExperimentConfig| -> Result<String, String> {
        let artifacts = run_experiment(cfg).map_err(|e| e.to_string())?;
        Ok(format!(
            "{} seed {}: final accuracy {:.4} -> {}",
            artifacts.experiment_id,
            cfg.seed,
            artifacts.final_accuracy,
            artifacts.out_dir.display()
        ))
    };

    let results: Vec<Result<String, String>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| {
            use rayon::prelude::*;
            experiments.par_iter().map(run_one).collect()
        })
    } else {
        experiments.iter().map(run_one).collect()
    };

    let mut failed = false;
    for result in results {
        match result {
            Ok(line) => println!("{line}"),
            Err(e) => {
                eprintln!("error: {e}");
                failed = true;
            }
        }
    }
    if failed {
        Err("one or more experiments failed".into())
    } else {
        Ok(())
    }
}

fn cmd_sample_demo(
    config: &PathBuf,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> Result<(), String> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(dir) = out_dir {
        cfg.output_dir = dir;
    }
    let (path, rows) = sample_demo(&cfg).map_err(|e| e.to_string())?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

fn cmd_export_mask(checkpoint: &PathBuf, out: &PathBuf) -> Result<(), String> {
    let entries = read_checkpoint(checkpoint).map_err(|e| e.to_string())?;
    let mut masks = Vec::new();
    for entry in entries {
        if let Some(mask) = entry.mask {
            let mask = PruneMask::new(mask).map_err(|e| e.to_string())?;
            masks.push((entry.name, mask));
        }
    }
    export_mask(&masks, out).map_err(|e| e.to_string())?;
    println!("wrote {} ({} layers)", out.display(), masks.len());
    Ok(())
}

fn find_reports(dir: &std::path::Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&current) else {
            continue;
        };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "report.csv") {
                found.push(path);
            }
        }
    }
    found.sort();
    found
}

fn cmd_report(dir: &std::path::Path, out: Option<PathBuf>) -> Result<(), String> {
    let files = find_reports(dir);
    if files.is_empty() {
        return Err(format!("no report.csv files under {}", dir.display()));
    }
    let mut rows = Vec::new();
    for file in &files {
        rows.extend(read_report(file).map_err(|e| format!("{}: {e}", file.display()))?);
    }
    let summary = summarize(&rows);
    match out {
        Some(path) => {
            write_summary(&path, &summary).map_err(|e| e.to_string())?;
            println!("wrote {} ({} experiments)", path.display(), summary.len());
        }
        None => {
            println!(
                "experiment_id,runs,mean_final_accuracy,min_final_accuracy,max_final_accuracy,mean_final_pruned_fraction"
            );
            for s in &summary {
                println!(
                    "{},{},{},{},{},{}",
                    s.experiment_id,
                    s.runs,
                    s.mean_final_accuracy,
                    s.min_final_accuracy,
                    s.max_final_accuracy,
                    s.mean_final_pruned_fraction
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            configs,
            seed,
            out_dir,
            stretch,
            jobs,
        } => cmd_run(configs, seed, out_dir.clone(), *stretch, *jobs),
        Command::SampleDemo {
            config,
            seed,
            out_dir,
        } => cmd_sample_demo(config, *seed, out_dir.clone()),
        Command::ExportMask { checkpoint, out } => cmd_export_mask(checkpoint, out),
        Command::Report { dir, out } => cmd_report(dir, out.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
