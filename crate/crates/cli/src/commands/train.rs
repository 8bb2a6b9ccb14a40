use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use hres::dataio::save_weights;
use hres::model::{build_network, ModelConfig, MAX_BLOCKS, MAX_KERNEL, MIN_BLOCKS, MIN_KERNEL};
use hres::train::{evaluate_loss, fit, split_dataset, Dataset, History, Splits};

use super::sibling;
use crate::config::CliConfig;
use crate::data::load_dataset;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset tree of PNG patches or preprocessed tensors.
    #[arg(long)]
    pub data: PathBuf,
    /// Weights file, rewritten at every validation improvement.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV. Defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Train every kernel size and block count instead of the configured
    /// model; writes `<out>.b<B>k<K>` weights and `<out>.sweep.csv`.
    #[arg(long)]
    pub sweep: bool,
}

struct Outcome {
    history: History,
    val_loss: f64,
    val_accuracy: f64,
    parameters: usize,
}

fn train_one(
    model: &ModelConfig,
    data: &Dataset,
    splits: &Splits,
    cfg: &CliConfig,
    out: &Path,
    history_path: &Path,
) -> Result<Outcome> {
    let mut network = build_network(model, cfg.train.seed)?;
    let history = fit(&mut network, data, splits, &cfg.train, |net, _| {
        save_weights(net, out)?;
        Ok(())
    })?;
    fs::write(history_path, history.to_csv())
        .with_context(|| format!("writing {}", history_path.display()))?;
    let val = evaluate_loss(&network, data, &splits.val)?;
    Ok(Outcome {
        history,
        val_loss: val.loss,
        val_accuracy: val.accuracy,
        parameters: network.parameter_count(),
    })
}

pub fn run(args: &TrainArgs, cfg: &CliConfig) -> Result<()> {
    let (data, _) = load_dataset(&args.data, cfg)?;
    let splits = split_dataset(&data.labels, &cfg.split_spec(data.len())?)?;
    println!(
        "split: train {}, validation {}, test {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let config_path = sibling(&args.out, ".config.toml");
    fs::write(&config_path, cfg.resolved_toml())
        .with_context(|| format!("writing {}", config_path.display()))?;

    if !args.sweep {
        let history_path = args
            .history
            .clone()
            .unwrap_or_else(|| sibling(&args.out, ".history.csv"));
        let o = train_one(
            &cfg.model_config(),
            &data,
            &splits,
            cfg,
            &args.out,
            &history_path,
        )?;
        println!(
            "trained {} epochs, best epoch {}: validation loss {:.4}, accuracy {:.4}",
            o.history.epochs.len(),
            o.history.best_epoch,
            o.val_loss,
            o.val_accuracy
        );
        println!("weights: {}", args.out.display());
        println!("history: {}", history_path.display());
        return Ok(());
    }

    let mut csv = String::from("blocks,kernel,parameters,epochs,best_epoch,val_loss,val_acc\n");
    for blocks in MIN_BLOCKS..=MAX_BLOCKS {
        for k in MIN_KERNEL..=MAX_KERNEL {
            let model = cfg.model_config().with_shape(blocks, k);
            let out = sibling(&args.out, &format!(".b{blocks}k{k}"));
            let history_path = sibling(&out, ".history.csv");
            let o = train_one(&model, &data, &splits, cfg, &out, &history_path)?;
            println!(
                "blocks {blocks} kernel {k}x{k}: {} parameters, best epoch {}, validation loss {:.4}, accuracy {:.4}",
                o.parameters, o.history.best_epoch, o.val_loss, o.val_accuracy
            );
            let _ = writeln!(
                csv,
                "{blocks},{k},{},{},{},{:.6},{:.6}",
                o.parameters,
                o.history.epochs.len(),
                o.history.best_epoch,
                o.val_loss,
                o.val_accuracy
            );
        }
    }
    let sweep_path = sibling(&args.out, ".sweep.csv");
    fs::write(&sweep_path, csv).with_context(|| format!("writing {}", sweep_path.display()))?;
    println!("sweep: {}", sweep_path.display());
    Ok(())
}
