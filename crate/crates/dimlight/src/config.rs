//! Run configuration: a TOML file with one table per concern, then
//! environment overrides (`DIMLIGHT__SECTION__KEY=value`), then command-line
//! overrides (`section.key=value`). Values are parsed as TOML literals and
//! fall back to plain strings.

use std::path::{Path, PathBuf};

use dimlight_core::data::{AugmentConfig, Interval};
use dimlight_core::encoder::{ContrastiveConfig, EncoderTopology, STREAM_DEPTH};
use dimlight_core::irn::IrnTopology;
use dimlight_core::loss::{LossWeights, Variant};
use dimlight_core::spectral::FrequencyLossConfig;
use dimlight_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "DIMLIGHT__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    pub train_split: String,
    /// Split used for per-epoch validation; skipped when absent.
    pub val_split: Option<String>,
    pub test_split: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data/LOL"),
            train_split: "our485".into(),
            val_split: Some("eval15".into()),
            test_split: "eval15".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub irn_channels: usize,
    pub encoder_channels: [usize; STREAM_DEPTH],
    pub encoder_strides: [usize; STREAM_DEPTH],
    pub encoder_hidden: usize,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let t = EncoderTopology::default();
        Self {
            irn_channels: IrnTopology::default().channels,
            encoder_channels: t.channels,
            encoder_strides: t.strides,
            encoder_hidden: t.hidden,
            embed_dim: t.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub variant: String,
    pub max_steps: Option<usize>,
    /// Validation and checkpoint cadence in epochs.
    pub validate_every: usize,
    /// Pretrained encoder checkpoint, required by variants with the contrastive term.
    pub pretrained: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            base_lr: t.base_lr,
            warmup_steps: t.warmup_steps,
            seed: t.seed,
            variant: t.ablation_variant.to_string(),
            max_steps: None,
            validate_every: 1,
            pretrained: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub w1: f64,
    pub w2: f64,
    pub alpha: f64,
    pub normalize_weight: bool,
    pub detach_weight: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        let f = FrequencyLossConfig::default();
        Self {
            w1: w.w1,
            w2: w.w2,
            alpha: f.alpha,
            normalize_weight: f.normalize_weight,
            detach_weight: f.detach_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub gamma: [f64; 2],
    pub log_gain: [f64; 2],
    pub blur_sigma: [f64; 2],
    pub blur_kernel: usize,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        let pair = |i: Interval| [i.lo, i.hi];
        Self {
            gamma: pair(a.gamma_range()),
            log_gain: pair(a.log_gain_range()),
            blur_sigma: pair(a.blur_sigma_range()),
            blur_kernel: a.blur_kernel_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveSection {
    pub tau: f64,
    pub momentum: f64,
    pub queue_size: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr: f64,
    /// Step budget replacing `pretrain_epochs` when set.
    pub max_steps: Option<usize>,
}

impl Default for ContrastiveSection {
    fn default() -> Self {
        let c = ContrastiveConfig::default();
        Self {
            tau: c.tau,
            momentum: c.momentum,
            queue_size: c.queue_size,
            pretrain_epochs: c.pretrain_epochs,
            batch_size: c.batch_size,
            patch_size: c.patch_size,
            lr: c.lr,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub augment: AugmentSection,
    pub contrastive: ContrastiveSection,
    pub output: OutputSection,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} must look like section.key")));
    }
    let section = table
        .entry(parts[0].to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let section = section
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{} is not a table", parts[0])))?;
    section.insert(parts[1].to_string(), parse_value(raw));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::build(text, std::iter::empty(), &[])
    }

    /// File contents, then environment pairs with [`ENV_PREFIX`], then
    /// `section.key=value` overrides.
    pub fn build(text: &str, env: impl IntoIterator<Item = (String, String)>, sets: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        env.sort();
        for (k, v) in env {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            set_path(&mut table, &key, &v)?;
        }
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} must look like section.key=value")))?;
            set_path(&mut table, k, v.trim())?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, sets: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::build(&text, std::env::vars(), sets)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_sections().map_err(|e| match e {
            Error::Core(c) => Error::Config(c.to_string()),
            other => other,
        })?;
        if self.train.validate_every == 0 {
            return Err(Error::Config("train.validate_every must be positive".into()));
        }
        Ok(())
    }

    fn validate_sections(&self) -> Result<()> {
        self.train_config()?.validate()?;
        self.loss_weights()?.validate()?;
        self.frequency_config().validate()?;
        self.augment_config()?;
        self.contrastive_config().validate()?;
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        Ok(self.train.variant.parse()?)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            base_lr: t.base_lr,
            warmup_steps: t.warmup_steps,
            seed: t.seed,
            ablation_variant: self.variant()?,
            max_steps: t.max_steps,
        })
    }

    /// Weights with the flags of the configured variant.
    pub fn loss_weights(&self) -> Result<LossWeights> {
        Ok(LossWeights {
            w1: self.loss.w1,
            w2: self.loss.w2,
            ..LossWeights::default()
        }
        .with_variant(self.variant()?))
    }

    pub fn frequency_config(&self) -> FrequencyLossConfig {
        FrequencyLossConfig {
            alpha: self.loss.alpha,
            normalize_weight: self.loss.normalize_weight,
            detach_weight: self.loss.detach_weight,
        }
    }

    pub fn augment_config(&self) -> Result<AugmentConfig> {
        let a = &self.augment;
        let iv = |p: [f64; 2]| Interval::new(p[0], p[1]);
        Ok(AugmentConfig::new(iv(a.gamma), iv(a.log_gain), iv(a.blur_sigma), a.blur_kernel)?)
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        let c = &self.contrastive;
        ContrastiveConfig {
            tau: c.tau,
            momentum: c.momentum,
            queue_size: c.queue_size,
            pretrain_epochs: c.pretrain_epochs,
            batch_size: c.batch_size,
            patch_size: c.patch_size,
            lr: c.lr,
        }
    }

    pub fn encoder_topology(&self) -> EncoderTopology {
        EncoderTopology {
            channels: self.model.encoder_channels,
            strides: self.model.encoder_strides,
            hidden: self.model.encoder_hidden,
            embed_dim: self.model.embed_dim,
        }
    }

    pub fn irn_topology(&self) -> IrnTopology {
        IrnTopology {
            channels: self.model.irn_channels,
            feature_dim: self.encoder_topology().feature_dim(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train_config().unwrap(), TrainConfig::default());
        assert_eq!(cfg.loss_weights().unwrap(), LossWeights::default());
        assert_eq!(cfg.contrastive_config(), ContrastiveConfig::default());
    }

    #[test]
    fn precedence_file_env_cli() {
        let text = "[train]\nbatch_size = 4\nseed = 3\n[loss]\nw2 = 0.5\n";
        let env = vec![
            ("DIMLIGHT__TRAIN__BATCH_SIZE".to_string(), "8".to_string()),
            ("DIMLIGHT__TRAIN__VARIANT".to_string(), "M1".to_string()),
            ("UNRELATED".to_string(), "1".to_string()),
        ];
        let cfg = RunConfig::build(text, env, &["train.seed=9".to_string(), "output.dir = out/x".to_string()]).unwrap();
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.variant().unwrap(), Variant::M1);
        assert_eq!(cfg.loss.w2, 0.5);
        assert_eq!(cfg.output.dir, PathBuf::from("out/x"));
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[train]\nvariant = \"M9\"\n").is_err());
        assert!(RunConfig::from_toml_str("[augment]\nblur_kernel = 4\n").is_err());
        assert!(RunConfig::build("", std::iter::empty(), &["nokey".to_string()]).is_err());
        assert!(RunConfig::build("", std::iter::empty(), &["a.b.c=1".to_string()]).is_err());
    }
}
