use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use hres::dataio::{load_weights_for, read_png, write_gray_png, write_png};
use hres::gradcam::{gradcam, overlay, select_layer};
use hres::imageproc::{preprocess_patch, resize_bilinear, ClaheConfig, GaussianKernel, PATCH_SIDE};
use hres::model::{predicted_class, Network};

use crate::config::CliConfig;

#[derive(Debug, Args)]
pub struct GradCamArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Directory receiving `<name>.heat.png` and `<name>.overlay.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Convolution layer name, or `last_conv`. Overrides the config.
    #[arg(long)]
    pub layer: Option<String>,
    /// Explain this class (0 normal, 1 affected) instead of the prediction.
    #[arg(long)]
    pub class: Option<usize>,
    /// PNG patches to explain.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

const CLASS_NAMES: [&str; 2] = ["normal", "affected"];

struct Context<'a> {
    network: &'a Network,
    layer: &'a str,
    kernel: GaussianKernel,
    clahe: ClaheConfig,
    alpha: f64,
    class: Option<usize>,
    out: &'a Path,
}

fn explain(ctx: &Context, path: &Path, stem: &str) -> Result<()> {
    let patch = read_png(path)?;
    let image = preprocess_patch(&patch, &ctx.kernel, &ctx.clahe)?;
    let probs = ctx.network.predict_proba(&image)?;
    let predicted = predicted_class(&probs);
    let target = ctx.class.unwrap_or(predicted);
    let heat = gradcam(ctx.network, &image, ctx.layer, target)?;
    let base = resize_bilinear(&patch, PATCH_SIDE, PATCH_SIDE)?;
    let blended = overlay(&heat, &base, ctx.alpha)?;

    let heat_path = ctx.out.join(format!("{stem}.heat.png"));
    let overlay_path = ctx.out.join(format!("{stem}.overlay.png"));
    write_gray_png(&heat_path, heat.width, heat.height, &heat.to_gray())?;
    write_png(&overlay_path, &blended)?;
    println!(
        "{}: predicted {} (p={:.4}), map for {} -> {}, {}",
        path.display(),
        CLASS_NAMES[predicted],
        probs[predicted],
        CLASS_NAMES[target],
        heat_path.display(),
        overlay_path.display()
    );
    Ok(())
}

/// File stems for the outputs; stems shared by several inputs are
/// prefixed with the parent directory name.
fn output_stems(images: &[PathBuf]) -> Vec<String> {
    let stem = |p: &PathBuf| {
        p.file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned()
    };
    let stems: Vec<String> = images.iter().map(stem).collect();
    images
        .iter()
        .zip(&stems)
        .map(|(path, s)| {
            if stems.iter().filter(|t| *t == s).count() == 1 {
                return s.clone();
            }
            match path.parent().and_then(|d| d.file_name()) {
                Some(dir) => format!("{}_{s}", dir.to_string_lossy()),
                None => s.clone(),
            }
        })
        .collect()
}

pub fn run(args: &GradCamArgs, cfg: &CliConfig) -> Result<()> {
    let network = load_weights_for(&args.weights, &cfg.model_config())?;
    let selector = args.layer.as_deref().unwrap_or(&cfg.gradcam.layer);
    let layer = select_layer(&network, selector)?;
    if let Some(c) = args.class {
        if c > 1 {
            bail!("class must be 0 or 1, got {c}");
        }
    }
    fs::create_dir_all(&args.out)?;
    println!("layer: {layer}");
    let ctx = Context {
        network: &network,
        layer: &layer,
        kernel: cfg.kernel()?,
        clahe: cfg.clahe_config(),
        alpha: cfg.gradcam.alpha,
        class: args.class,
        out: &args.out,
    };
    let mut failed = 0;
    for (path, stem) in args.images.iter().zip(output_stems(&args.images)) {
        if let Err(e) = explain(&ctx, path, &stem) {
            eprintln!("failed: {}: {e:#}", path.display());
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} images failed", args.images.len());
    }
    Ok(())
}
