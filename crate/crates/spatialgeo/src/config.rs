//! Run configuration: a TOML file, then `--set key=value` overrides, then
//! dedicated flags. Every field has a default, so an empty file is valid.
//!
//! ```toml
//! seed = 0
//!
//! [model]
//! variant = "ha4"        # sa | ha3 | ha4 | ha5
//! clip = true            # fusion switches; unset keeps a checkpoint's value
//! geometry = true
//! interleave = "semantic-first"
//!
//! [train]
//! epochs = 20
//! batch_size = 8
//! learning_rate = 1e-3
//! drop = true
//! drop_probability = 0.3
//! lora_rank = 4          # 0 trains the decoder weights directly
//! lora_alpha = 8.0
//!
//! [eval]
//! workers = 1
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spatialgeo_core::fusion::{FusionConfig, InterleaveOrder};
use spatialgeo_core::lm::{DecoderConfig, LoRAConfig, Vocab};
use spatialgeo_core::training::{ModelConfig, Stage, StageSpec, Variant};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    pub image_side: usize,
    pub patch_size: usize,
    pub d_sem: usize,
    pub d_geo: usize,
    pub blocks: usize,
    /// The encoders stand in for pretrained networks, so their weights
    /// follow this value and not the run seed.
    pub encoder_seed: u64,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub max_len: usize,
    pub mlp_hidden: usize,
    /// 0 means the decoder width.
    pub adapter_hidden: usize,
    pub clip: Option<bool>,
    pub geometry: Option<bool>,
    pub interleave: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Training JSONL; `--data` wins over this.
    pub dataset: Option<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stage-2 dropping switch.
    pub drop: bool,
    pub drop_probability: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { seed: 0, model: ModelSection::default(), train: TrainSection::default(), eval: EvalSection::default() }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let vocab = Vocab::spatial();
        let m = ModelConfig::new(&vocab);
        Self {
            variant: m.variant.name().into(),
            image_side: m.encoder.image_side,
            patch_size: m.encoder.patch_size,
            d_sem: m.encoder.d_sem,
            d_geo: m.encoder.d_geo,
            blocks: m.encoder.blocks,
            encoder_seed: m.encoder.seed,
            layers: m.decoder.layers,
            d_model: m.decoder.d_model,
            heads: m.decoder.heads,
            max_len: m.decoder.max_len,
            mlp_hidden: m.decoder.mlp_hidden,
            adapter_hidden: m.adapter_hidden,
            clip: None,
            geometry: None,
            interleave: None,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = StageSpec::stage2(None);
        Self {
            dataset: None,
            epochs: s.epochs,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            drop: true,
            drop_probability: s.drop_probability,
            lora_rank: 4,
            lora_alpha: 8.0,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

/// Parses `on|off` style switches.
pub fn parse_switch(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Usage(format!("expected on or off, got {s:?}"))),
    }
}

fn parse_interleave(s: &str) -> Result<InterleaveOrder> {
    match s.trim().to_ascii_lowercase().as_str() {
        "semantic-first" => Ok(InterleaveOrder::SemanticFirst),
        "geometry-first" => Ok(InterleaveOrder::GeometryFirst),
        _ => Err(Error::Usage(format!("interleave must be semantic-first or geometry-first, got {s:?}"))),
    }
}

/// Sets a dotted key in a TOML table. The value is read as TOML when it
/// parses and as a bare string otherwise.
fn set_dotted(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|l| !l.is_empty()).ok_or_else(|| Error::Usage(format!("empty override key in {key:?}")))?;
    let mut table = root;
    for p in parts {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Usage(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// `text` is TOML; each override is `key=value` with a dotted key.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Usage(format!("override {o:?} is not key=value")))?;
            set_dotted(&mut table, k.trim(), v.trim())?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e| Error::Usage(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    fn check(&self) -> Result<()> {
        self.variant()?;
        self.fusion_over(FusionConfig::default())?;
        if self.eval.workers == 0 {
            return Err(Error::Usage("eval.workers must be at least 1".into()));
        }
        self.model_config(&Vocab::spatial())?.validate()?;
        Ok(())
    }

    pub fn variant(&self) -> Result<Variant> {
        Ok(self.model.variant.parse()?)
    }

    /// `base` with every switch this configuration sets.
    pub fn fusion_over(&self, base: FusionConfig) -> Result<FusionConfig> {
        let m = &self.model;
        Ok(FusionConfig {
            drop_probability: self.train.drop_probability,
            interleave_order: match &m.interleave {
                Some(s) => parse_interleave(s)?,
                None => base.interleave_order,
            },
            clip_branch_enabled: m.clip.unwrap_or(base.clip_branch_enabled),
            geometry_branch_enabled: m.geometry.unwrap_or(base.geometry_branch_enabled),
        })
    }

    /// Fresh-model configuration; the initialization seed is the run seed.
    pub fn model_config(&self, vocab: &Vocab) -> Result<ModelConfig> {
        let m = &self.model;
        let mut c = ModelConfig::new(vocab);
        c.encoder.image_side = m.image_side;
        c.encoder.patch_size = m.patch_size;
        c.encoder.d_sem = m.d_sem;
        c.encoder.d_geo = m.d_geo;
        c.encoder.blocks = m.blocks;
        c.encoder.seed = m.encoder_seed;
        c.decoder = DecoderConfig {
            layers: m.layers,
            d_model: m.d_model,
            heads: m.heads,
            max_len: m.max_len,
            vocab_size: vocab.len(),
            mlp_hidden: m.mlp_hidden,
        };
        c.adapter_hidden = m.adapter_hidden;
        c.variant = self.variant()?;
        c.fusion = self.fusion_over(FusionConfig::default())?;
        c.init_seed = self.seed;
        Ok(c)
    }

    pub fn lora(&self) -> Option<LoRAConfig> {
        (self.train.lora_rank > 0).then(|| LoRAConfig::attention_and_mlp(self.train.lora_rank, self.train.lora_alpha))
    }

    /// Stage preset with the `[train]` values applied. Dropping and
    /// low-rank factors only reach stage 2.
    pub fn stage_spec(&self, stage: Stage, dataset: &str) -> StageSpec {
        let mut s = match stage {
            Stage::Base => StageSpec::base(),
            Stage::One => StageSpec::stage1(),
            Stage::Two => StageSpec::stage2(self.lora()),
        };
        s.epochs = self.train.epochs;
        s.batch_size = self.train.batch_size;
        s.learning_rate = self.train.learning_rate;
        if stage == Stage::Two {
            s.drop_probability = if self.train.drop { self.train.drop_probability } else { 0.0 };
        }
        s.seed = self.seed.wrapping_add(u64::from(stage.id()));
        s.dataset = dataset.to_string();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::from_toml("seed = 3\n[train]\nepochs = 5\n", &["train.epochs=2".into(), "model.variant=sa".into()]).unwrap();
        assert_eq!((c.seed, c.train.epochs, c.model.variant.as_str()), (3, 2, "sa"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[train]\nepoch = 5\n", &[]), Err(Error::Usage(_))));
        assert!(RunConfig::from_toml("", &["model.variant=ha9".into()]).is_err());
    }

    #[test]
    fn drop_switch_only_reaches_stage_two() {
        let mut c = RunConfig::default();
        assert_eq!(c.stage_spec(Stage::One, "").drop_probability, 0.0);
        assert_eq!(c.stage_spec(Stage::Two, "").drop_probability, 0.3);
        c.train.drop = false;
        assert_eq!(c.stage_spec(Stage::Two, "").drop_probability, 0.0);
        assert!(c.stage_spec(Stage::One, "").validate().is_ok());
    }
}
