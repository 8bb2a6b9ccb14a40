use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use hres::dataio::{generate_synthetic, SyntheticKind, SyntheticSpec};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output tree; receives `0/` and `1/` PNG patches.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 250)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        per_class: args.per_class,
        seed: args.seed,
        kind: SyntheticKind::BlobVsTexture,
    };
    let manifest = generate_synthetic(&spec, &args.output)?;
    println!(
        "wrote {} patches to {}: normal {}, affected {}",
        manifest.len(),
        args.output.display(),
        manifest.counts[0],
        manifest.counts[1]
    );
    Ok(())
}
