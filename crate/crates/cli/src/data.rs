use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hres::dataio::{list_class_files, read_container, read_png, DataError, DatasetManifest};
use hres::imageproc::{preprocess_patch, CHANNELS};
use hres::train::Dataset;
use hres::Tensor;
use log::info;

use crate::config::CliConfig;

/// Extension of preprocessed tensor files.
pub const TENSOR_EXT: &str = "hres";
/// Name of the image tensor inside a preprocessed file.
pub const IMAGE_TENSOR: &str = "image";

/// Output path of the preprocessed tensor for `source` under `out`.
pub fn tensor_path(out: &Path, label: usize, source: &Path) -> PathBuf {
    let stem = source.file_stem().unwrap_or_default();
    out.join(label.to_string())
        .join(Path::new(stem).with_extension(TENSOR_EXT))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let container = read_container(path)?;
    let Some((_, t)) = container
        .tensors
        .into_iter()
        .find(|(n, _)| n == IMAGE_TENSOR)
    else {
        bail!("{}: no {IMAGE_TENSOR} tensor", path.display());
    };
    if t.rank() != 3 || t.shape()[0] != CHANNELS {
        bail!(
            "{}: expected a {CHANNELS}×H×W tensor, got {:?}",
            path.display(),
            t.shape()
        );
    }
    Ok(t)
}

/// Loads a class tree of raw PNG patches, preprocessing them in memory, or
/// of preprocessed tensor files.
pub fn load_dataset(dir: &Path, cfg: &CliConfig) -> Result<(Dataset, DatasetManifest)> {
    let (manifest, preprocessed) = match list_class_files(dir, "png") {
        Ok(m) => (m, false),
        Err(png_err @ DataError::Unsupported { .. }) => match list_class_files(dir, TENSOR_EXT) {
            Ok(m) => (m, true),
            Err(_) => return Err(png_err.into()),
        },
        Err(e) => return Err(e.into()),
    };
    if manifest.is_empty() {
        bail!("{}: no samples found", dir.display());
    }
    let kernel = cfg.kernel()?;
    let clahe = cfg.clahe_config();
    let mut inputs = Vec::with_capacity(manifest.len());
    for entry in &manifest.entries {
        let input = if preprocessed {
            read_tensor_file(&entry.path)?
        } else {
            let patch = read_png(&entry.path)?;
            let image = preprocess_patch(&patch, &kernel, &clahe)
                .with_context(|| format!("preprocessing {}", entry.path.display()))?;
            let (h, w) = (image.height(), image.width());
            image.to_tensor().reshape(vec![CHANNELS, h, w])?
        };
        inputs.push(input);
    }
    info!(
        "loaded {} samples from {} (normal {}, affected {})",
        manifest.len(),
        dir.display(),
        manifest.counts[0],
        manifest.counts[1]
    );
    Ok((
        Dataset {
            inputs,
            labels: manifest.labels(),
        },
        manifest,
    ))
}
