use anyhow::Result;
use clap::Args;
use hres::imageproc::PATCH_SIDE;
use hres::model::{summarize, MAX_BLOCKS, MAX_KERNEL, MIN_BLOCKS, MIN_KERNEL};

use crate::config::CliConfig;

#[derive(Debug, Args)]
pub struct SummaryArgs {
    /// Emit CSV instead of a table.
    #[arg(long)]
    pub csv: bool,
    /// Total parameters for every kernel size and block count.
    #[arg(long)]
    pub sweep: bool,
    /// Input side length used for the cost column.
    #[arg(long, default_value_t = PATCH_SIDE)]
    pub input_size: usize,
}

pub fn run(args: &SummaryArgs, cfg: &CliConfig) -> Result<()> {
    let model = cfg.model_config();
    if !args.sweep {
        let s = summarize(&model, args.input_size)?;
        print!("{}", if args.csv { s.to_csv() } else { s.to_table() });
        return Ok(());
    }
    let blocks: Vec<usize> = (MIN_BLOCKS..=MAX_BLOCKS).collect();
    let sep = if args.csv { "," } else { " " };
    let cell = |v: String| if args.csv { v } else { format!("{v:>12}") };
    let mut header = vec![if args.csv {
        "kernel".to_string()
    } else {
        format!("{:<8}", "kernel")
    }];
    header.extend(blocks.iter().map(|b| cell(format!("blocks_{b}"))));
    println!("{}", header.join(sep));
    for k in MIN_KERNEL..=MAX_KERNEL {
        let mut row = vec![if args.csv {
            format!("{k}x{k}")
        } else {
            format!("{:<8}", format!("{k}x{k}"))
        }];
        for &b in &blocks {
            let total = summarize(&model.with_shape(b, k), args.input_size)?.total_parameters();
            row.push(cell(total.to_string()));
        }
        println!("{}", row.join(sep));
    }
    Ok(())
}
