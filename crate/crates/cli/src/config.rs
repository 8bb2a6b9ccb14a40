use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hres::imageproc::{ClaheConfig, GaussianKernel, PATCH_SIDE};
use hres::metrics::DEFAULT_THRESHOLD;
use hres::model::{ModelConfig, ShortcutKernel};
use hres::train::{SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// Model overrides. Unset fields derive from the default model reshaped to
/// `num_residual_blocks` and `kernel_size`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_residual_blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_widths: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stem_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elu_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shortcut_kernel: Option<ShortcutKernel>,
}

impl ModelSection {
    pub fn resolve(&self) -> ModelConfig {
        let base = ModelConfig::default();
        let mut cfg = base.with_shape(
            self.num_residual_blocks.unwrap_or(base.num_residual_blocks),
            self.kernel_size.unwrap_or(base.kernel_size),
        );
        if let Some(w) = &self.stage_widths {
            cfg.stage_widths = w.clone();
        }
        if let Some(v) = self.stem_width {
            cfg.stem_width = v;
        }
        if let Some(v) = self.num_classes {
            cfg.num_classes = v;
        }
        if let Some(v) = self.elu_alpha {
            cfg.elu_alpha = v;
        }
        if let Some(v) = self.shortcut_kernel {
            cfg.shortcut_kernel = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurSection {
    pub sigma: f64,
    pub radius: usize,
}

impl Default for BlurSection {
    fn default() -> Self {
        let k = GaussianKernel::default();
        Self {
            sigma: k.sigma(),
            radius: k.radius(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClaheSection {
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub clip_limit: f64,
}

impl Default for ClaheSection {
    fn default() -> Self {
        let c = ClaheConfig::default();
        Self {
            tile_rows: c.tile_rows,
            tile_cols: c.tile_cols,
            clip_limit: c.clip_limit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Fraction of all samples held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining training pool used for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCamSection {
    pub alpha: f64,
    pub layer: String,
}

impl Default for GradCamSection {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            layer: hres::gradcam::LAST_CONV.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub blur: BlurSection,
    pub clahe: ClaheSection,
    pub split: SplitSection,
    pub gradcam: GradCamSection,
    pub eval: EvalSection,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))?
            }
            None => Self::default(),
        };
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train.validate()?;
        self.kernel()?;
        self.clahe_config().validate(PATCH_SIDE, PATCH_SIDE)?;
        for (name, f) in [
            ("split.test_fraction", self.split.test_fraction),
            ("split.val_fraction", self.split.val_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                bail!("{name} must lie in [0, 1), got {f}");
            }
        }
        if !(0.0..=1.0).contains(&self.gradcam.alpha) {
            bail!(
                "gradcam.alpha must lie in [0, 1], got {}",
                self.gradcam.alpha
            );
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            bail!(
                "eval.threshold must lie in [0, 1], got {}",
                self.eval.threshold
            );
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.resolve()
    }

    pub fn kernel(&self) -> Result<GaussianKernel> {
        Ok(GaussianKernel::new(self.blur.sigma, self.blur.radius)?)
    }

    pub fn clahe_config(&self) -> ClaheConfig {
        ClaheConfig {
            tile_rows: self.clahe.tile_rows,
            tile_cols: self.clahe.tile_cols,
            clip_limit: self.clahe.clip_limit,
        }
    }

    pub fn split_spec(&self, total: usize) -> Result<SplitSpec> {
        Ok(SplitSpec::from_fractions(
            total,
            self.split.test_fraction,
            self.split.val_fraction,
            self.split.seed,
        )?)
    }

    /// Fully resolved configuration as TOML, with the model section
    /// expanded.
    pub fn resolved_toml(&self) -> String {
        #[derive(Serialize)]
        struct Resolved<'a> {
            model: ModelConfig,
            train: &'a TrainConfig,
            blur: &'a BlurSection,
            clahe: &'a ClaheSection,
            split: &'a SplitSection,
            gradcam: &'a GradCamSection,
            eval: &'a EvalSection,
        }
        toml::to_string(&Resolved {
            model: self.model_config(),
            train: &self.train,
            blur: &self.blur,
            clahe: &self.clahe,
            split: &self.split,
            gradcam: &self.gradcam,
            eval: &self.eval,
        })
        .expect("config serializes")
    }
}
