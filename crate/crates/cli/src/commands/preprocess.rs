use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use hres::dataio::{list_class_files, read_png, write_container};
use hres::imageproc::{preprocess_patch, CHANNELS};

use crate::config::CliConfig;
use crate::data::{tensor_path, IMAGE_TENSOR};

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Dataset tree with `0/` (normal) and `1/` (affected) PNG patches.
    #[arg(long)]
    pub input: PathBuf,
    /// Output tree; receives `0/<name>.hres` and `1/<name>.hres`.
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(args: &PreprocessArgs, cfg: &CliConfig) -> Result<()> {
    let manifest = list_class_files(&args.input, "png")?;
    let kernel = cfg.kernel()?;
    let clahe = cfg.clahe_config();
    for label in 0..2 {
        fs::create_dir_all(args.output.join(label.to_string()))?;
    }
    let mut written = [0usize; 2];
    let mut failures = Vec::new();
    for entry in &manifest.entries {
        let result = read_png(&entry.path)
            .map_err(anyhow::Error::from)
            .and_then(|patch| Ok(preprocess_patch(&patch, &kernel, &clahe)?))
            .and_then(|image| {
                let (h, w) = (image.height(), image.width());
                let tensor = image.to_tensor().reshape(vec![CHANNELS, h, w])?;
                let source = entry.path.file_name().unwrap_or_default().to_string_lossy();
                let header = format!("label = {}\nsource = {:?}\n", entry.label, source);
                let out = tensor_path(&args.output, entry.label, &entry.path);
                write_container(&out, &header, &[(IMAGE_TENSOR, &tensor)])?;
                Ok(())
            });
        match result {
            Ok(()) => written[entry.label] += 1,
            Err(e) => {
                eprintln!("failed: {}: {e:#}", entry.path.display());
                failures.push(entry.path.clone());
            }
        }
    }
    println!(
        "preprocessed {} of {} patches: normal {}, affected {}",
        written[0] + written[1],
        manifest.len(),
        written[0],
        written[1]
    );
    if !failures.is_empty() {
        bail!("{} of {} patches failed", failures.len(), manifest.len());
    }
    Ok(())
}
