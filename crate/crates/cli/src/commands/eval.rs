use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use hres::dataio::load_weights_for;
use hres::metrics::{compute_metrics, confusion_matrix, roc_curve};
use hres::train::{predict_scores, split_dataset};

use super::sibling;
use crate::config::CliConfig;
use crate::data::load_dataset;

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Dataset tree of PNG patches or preprocessed tensors.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate every sample instead of the configured test split.
    #[arg(long)]
    pub all: bool,
    /// ROC curve CSV. Defaults to `<weights>.roc.csv`.
    #[arg(long)]
    pub roc: Option<PathBuf>,
}

pub fn run(args: &EvalArgs, cfg: &CliConfig) -> Result<()> {
    let network = load_weights_for(&args.weights, &cfg.model_config())
        .with_context(|| format!("loading {}", args.weights.display()))?;
    let (data, _) = load_dataset(&args.data, cfg)?;
    let indices = if args.all {
        (0..data.len()).collect()
    } else {
        split_dataset(&data.labels, &cfg.split_spec(data.len())?)?.test
    };
    let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    let scores = predict_scores(&network, &data, &indices)?;

    let cm = confusion_matrix(&scores, &labels, cfg.eval.threshold)?;
    let report = compute_metrics(&cm)?;
    println!(
        "evaluated {} samples ({})",
        indices.len(),
        if args.all { "all" } else { "test split" }
    );
    println!("confusion matrix (rows actual, columns predicted):");
    print!("{}", cm.to_grid());
    print!("{}", report.to_table());
    if report.degenerate {
        println!("note: some ratios had a zero denominator and are reported as 0");
    }
    match roc_curve(&scores, &labels) {
        Ok(curve) => {
            println!("AUROC {:.4}", curve.area());
            let roc_path = args
                .roc
                .clone()
                .unwrap_or_else(|| sibling(&args.weights, ".roc.csv"));
            fs::write(&roc_path, curve.to_csv())
                .with_context(|| format!("writing {}", roc_path.display()))?;
            println!("roc: {}", roc_path.display());
        }
        Err(e) => println!("AUROC unavailable: {e}"),
    }
    Ok(())
}
