use std::fmt::Write as _;

use super::{ModelConfig, ModelError};
use crate::imageproc::CHANNELS;

/// Parameter and cost figures for one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub kernel: u64,
    pub f_in: u64,
    pub f_out: u64,
    /// Spatial side of the layer's input.
    pub d_in: u64,
    /// Weight elements, `k·k·f_in·f_out`.
    pub rho: u64,
    /// Multiply count, `rho·d_in·d_in`.
    pub kappa: u64,
    pub bias: u64,
}

impl LayerRow {
    fn new(name: String, kernel: usize, f_in: usize, f_out: usize, d_in: usize) -> Self {
        let (k, fi, fo, d) = (kernel as u64, f_in as u64, f_out as u64, d_in as u64);
        let rho = k * k * fi * fo;
        Self {
            name,
            kernel: k,
            f_in: fi,
            f_out: fo,
            d_in: d,
            rho,
            kappa: rho * d * d,
            bias: fo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSummary {
    pub rows: Vec<LayerRow>,
    pub total_rho: u64,
    pub total_bias: u64,
    pub total_kappa: u64,
}

impl LayerSummary {
    /// Weights plus biases.
    pub fn total_parameters(&self) -> u64 {
        self.total_rho + self.total_bias
    }

    pub fn to_table(&self) -> String {
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$} {:>3} {:>6} {:>6} {:>5} {:>12} {:>16} {:>8}",
            "layer", "k", "f_in", "f_out", "d_in", "rho", "kappa", "bias"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<name_w$} {:>3} {:>6} {:>6} {:>5} {:>12} {:>16} {:>8}",
                r.name, r.kernel, r.f_in, r.f_out, r.d_in, r.rho, r.kappa, r.bias
            );
        }
        let _ = writeln!(
            out,
            "{:<name_w$} {:>3} {:>6} {:>6} {:>5} {:>12} {:>16} {:>8}",
            "total", "", "", "", "", self.total_rho, self.total_kappa, self.total_bias
        );
        let _ = writeln!(out, "parameters: {}", self.total_parameters());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,k,f_in,f_out,d_in,rho,kappa,bias\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.name, r.kernel, r.f_in, r.f_out, r.d_in, r.rho, r.kappa, r.bias
            );
        }
        out
    }
}

/// Per-layer weight counts and multiply costs for a network fed
/// `input_spatial × input_spatial` images. The dense head is listed as a
/// 1×1 layer on a 1×1 input.
pub fn summarize(cfg: &ModelConfig, input_spatial: usize) -> Result<LayerSummary, ModelError> {
    cfg.validate()?;
    let k = cfg.kernel_size;
    let mut rows = vec![LayerRow::new(
        "stem".into(),
        k,
        CHANNELS,
        cfg.stem_width,
        input_spatial,
    )];
    let mut d = input_spatial;
    let mut cin = cfg.stem_width;
    for (i, &w) in cfg.stage_widths.iter().enumerate() {
        let name = |part: &str| format!("block{}.{part}", i + 1);
        let half = d.div_ceil(2);
        rows.push(LayerRow::new(name("conv1"), k, cin, w, d));
        rows.push(LayerRow::new(name("conv2"), k, w, w, half));
        rows.push(LayerRow::new(name("conv3"), k, w, w, half));
        rows.push(LayerRow::new(
            name("shortcut"),
            cfg.shortcut_kernel_size(),
            cin,
            w,
            d,
        ));
        d = half;
        cin = w;
    }
    rows.push(LayerRow::new("head".into(), 1, cin, cfg.num_classes, 1));
    Ok(LayerSummary {
        total_rho: rows.iter().map(|r| r.rho).sum(),
        total_bias: rows.iter().map(|r| r.bias).sum(),
        total_kappa: rows.iter().map(|r| r.kappa).sum(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, ShortcutKernel};

    #[test]
    fn stem_row_values() {
        let s = summarize(&ModelConfig::default(), 100).unwrap();
        let stem = &s.rows[0];
        assert_eq!((stem.rho, stem.kappa), (3584, 35_840_000));
        assert_eq!(s.rows.len(), 1 + 4 * 4 + 1);
    }

    #[test]
    fn pointwise_shortcut() {
        let cfg = ModelConfig {
            num_residual_blocks: 2,
            stage_widths: vec![8, 8],
            stem_width: 8,
            shortcut_kernel: ShortcutKernel::Pointwise,
            ..ModelConfig::default()
        };
        let s = summarize(&cfg, 100).unwrap();
        let row = s.rows.iter().find(|r| r.name == "block2.shortcut").unwrap();
        assert_eq!(row.rho, 64);
        assert_eq!(row.d_in, 50);
    }

    #[test]
    fn totals_match_allocation() {
        let cfg = ModelConfig::default().with_shape(3, 5);
        let s = summarize(&cfg, 100).unwrap();
        let net = build_network(&cfg, 0).unwrap();
        assert_eq!(s.total_parameters(), net.parameter_count() as u64);
    }

    #[test]
    fn spatial_sizes_halve_with_ceiling() {
        let s = summarize(&ModelConfig::default(), 100).unwrap();
        let d: Vec<u64> = s
            .rows
            .iter()
            .filter(|r| r.name.ends_with("conv1"))
            .map(|r| r.d_in)
            .collect();
        assert_eq!(d, vec![100, 50, 25, 13]);
    }

    #[test]
    fn csv_has_row_per_layer() {
        let s = summarize(&ModelConfig::default(), 100).unwrap();
        assert_eq!(s.to_csv().lines().count(), s.rows.len() + 1);
        assert!(s.to_table().contains("parameters:"));
    }
}
