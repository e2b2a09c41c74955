//! The staged training schedule.
//!
//! A [`Model`] bundles the frozen encoders, the fusion adapters and the
//! decoder. Training runs in stages, each of which unfreezes a set of
//! parameter-name prefixes and runs AdamW over mini-batches:
//!
//! * the base stage stands in for a pretrained semantic-only multimodal
//!   model: it trains the semantic adapter and the decoder while geometry
//!   tokens are held at zero;
//! * stage 1 aligns geometry features by training only the hierarchical
//!   adapter;
//! * stage 2 instruction-tunes both adapters and the decoder (through
//!   low-rank factors when configured) with per-sample semantic-branch
//!   dropping.
//!
//! One generator, captured in [`TrainState`], drives both the per-epoch
//! shuffle and the dropping draws, so a run resumed from an end-of-epoch
//! checkpoint replays the uninterrupted run bit for bit.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::encoders::{EncoderConfig, Encoders, ImageGrid};
use crate::error::{bail, Error, Result};
use crate::eval::{EvalRecord, QuestionCategory};
use crate::fusion::{Adapter, Branch, FusionConfig, HierarchicalAdapter, VisualFeatures, VisualFusion, CLIP_ADAPTER_PREFIX, HIER_ADAPTER_PREFIX};
use crate::lm::{autoregressive_loss, embed_text, generate_greedy, lora_wrap, splice_input, DecoderConfig, LoRAConfig, TokenId, Vocab, LM_PREFIX, LORA_PREFIX};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamSet;
use crate::rng::{self, RngState};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Reserved prefix: encoder weights live outside every [`ParamSet`] and can
/// never be selected for training.
pub const ENCODER_PREFIX: &str = "encoder";

/// Upper bound on generated answer tokens.
pub const MAX_ANSWER_TOKENS: usize = 8;

/// Which hierarchical-adapter configuration to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// One sub-adapter on the last block.
    Sa,
    Ha3,
    Ha4,
    Ha5,
}

impl Variant {
    pub fn depth(self) -> usize {
        match self {
            Variant::Sa => 1,
            Variant::Ha3 => 3,
            Variant::Ha4 => 4,
            Variant::Ha5 => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sa => "sa",
            Variant::Ha3 => "ha3",
            Variant::Ha4 => "ha4",
            Variant::Ha5 => "ha5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "").as_str() {
            "sa" => Ok(Variant::Sa),
            "ha3" => Ok(Variant::Ha3),
            "ha4" => Ok(Variant::Ha4),
            "ha5" => Ok(Variant::Ha5),
            _ => bail!(Config, "unknown variant {:?} (expected sa, ha3, ha4 or ha5)", s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    /// Hidden width of every adapter; 0 means the decoder width.
    pub adapter_hidden: usize,
    pub variant: Variant,
    pub fusion: FusionConfig,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(vocab: &Vocab) -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::new(vocab.len()),
            adapter_hidden: 0,
            variant: Variant::Ha4,
            fusion: FusionConfig::default(),
            init_seed: 1,
        }
    }

    pub fn hidden(&self) -> usize {
        if self.adapter_hidden == 0 {
            self.decoder.d_model
        } else {
            self.adapter_hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.fusion.validate()?;
        if self.variant.depth() > self.encoder.blocks {
            bail!(Config, "variant {} needs {} geometry blocks, encoder has {}", self.variant, self.variant.depth(), self.encoder.blocks);
        }
        let visual = if self.fusion.clip_branch_enabled { 2 } else { 1 } * self.encoder.tokens();
        if visual >= self.decoder.max_len {
            bail!(Config, "{} visual tokens leave no room in a context of {}", visual, self.decoder.max_len);
        }
        Ok(())
    }

    /// Flat `key -> value` form, stored in checkpoints.
    pub fn to_metadata(&self) -> BTreeMap<String, String> {
        let e = &self.encoder;
        let d = &self.decoder;
        let f = &self.fusion;
        let pairs: [(&str, String); 19] = [
            ("encoder.patch_size", e.patch_size.to_string()),
            ("encoder.image_side", e.image_side.to_string()),
            ("encoder.d_sem", e.d_sem.to_string()),
            ("encoder.d_geo", e.d_geo.to_string()),
            ("encoder.blocks", e.blocks.to_string()),
            ("encoder.seed", e.seed.to_string()),
            ("decoder.layers", d.layers.to_string()),
            ("decoder.d_model", d.d_model.to_string()),
            ("decoder.heads", d.heads.to_string()),
            ("decoder.max_len", d.max_len.to_string()),
            ("decoder.vocab_size", d.vocab_size.to_string()),
            ("decoder.mlp_hidden", d.mlp_hidden.to_string()),
            ("model.adapter_hidden", self.adapter_hidden.to_string()),
            ("model.variant", self.variant.name().to_string()),
            ("model.init_seed", self.init_seed.to_string()),
            ("fusion.drop_probability", format!("{:?}", f.drop_probability)),
            ("fusion.geometry_first", (f.interleave_order == crate::fusion::InterleaveOrder::GeometryFirst).to_string()),
            ("fusion.clip", f.clip_branch_enabled.to_string()),
            ("fusion.geometry", f.geometry_branch_enabled.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn from_metadata(m: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: FromStr>(m: &BTreeMap<String, String>, k: &str) -> Result<T> {
            let Some(v) = m.get(k) else {
                bail!(Checkpoint, "missing metadata key {}", k);
            };
            v.parse().map_err(|_| Error::Checkpoint(format!("bad value {:?} for {}", v, k)))
        }
        let cfg = Self {
            encoder: EncoderConfig {
                patch_size: get(m, "encoder.patch_size")?,
                image_side: get(m, "encoder.image_side")?,
                d_sem: get(m, "encoder.d_sem")?,
                d_geo: get(m, "encoder.d_geo")?,
                blocks: get(m, "encoder.blocks")?,
                seed: get(m, "encoder.seed")?,
            },
            decoder: DecoderConfig {
                layers: get(m, "decoder.layers")?,
                d_model: get(m, "decoder.d_model")?,
                heads: get(m, "decoder.heads")?,
                max_len: get(m, "decoder.max_len")?,
                vocab_size: get(m, "decoder.vocab_size")?,
                mlp_hidden: get(m, "decoder.mlp_hidden")?,
            },
            adapter_hidden: get(m, "model.adapter_hidden")?,
            variant: get::<String>(m, "model.variant")?.parse()?,
            init_seed: get(m, "model.init_seed")?,
            fusion: FusionConfig {
                drop_probability: get(m, "fusion.drop_probability")?,
                interleave_order: if get(m, "fusion.geometry_first")? {
                    crate::fusion::InterleaveOrder::GeometryFirst
                } else {
                    crate::fusion::InterleaveOrder::SemanticFirst
                },
                clip_branch_enabled: get(m, "fusion.clip")?,
                geometry_branch_enabled: get(m, "fusion.geometry")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Base,
    One,
    Two,
}

impl Stage {
    pub fn id(self) -> u8 {
        match self {
            Stage::Base => 0,
            Stage::One => 1,
            Stage::Two => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Stage::Base),
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => bail!(Config, "unknown stage {}", id),
        }
    }
}

/// The whole trainable system. Encoders are rebuilt from their seed and are
/// never part of `params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub encoders: Encoders,
    pub fusion: VisualFusion,
    pub params: ParamSet,
    pub lora: Option<LoRAConfig>,
    /// Stages run to completion, in order.
    pub stages_done: Vec<Stage>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if config.decoder.vocab_size != vocab.len() {
            bail!(Config, "decoder vocabulary size {} differs from vocabulary of {}", config.decoder.vocab_size, vocab.len());
        }
        let encoders = Encoders::new(config.encoder)?;
        let fusion = Self::build_fusion(&config)?;
        let mut params = ParamSet::new();
        let mut r = rng::seeded(config.init_seed);
        fusion.clip_adapter.init(&mut params, &mut r)?;
        fusion.hier.init(&mut params, &mut r)?;
        crate::lm::init_decoder(&mut params, &config.decoder, &mut r)?;
        Ok(Self { config, vocab, encoders, fusion, params, lora: None, stages_done: Vec::new() })
    }

    fn build_fusion(config: &ModelConfig) -> Result<VisualFusion> {
        let (h, d) = (config.hidden(), config.decoder.d_model);
        Ok(VisualFusion {
            clip_adapter: Adapter::new(CLIP_ADAPTER_PREFIX, config.encoder.d_sem, h, d),
            hier: HierarchicalAdapter::new(config.encoder.blocks, config.variant.depth(), config.encoder.d_geo, h, d)?,
            config: config.fusion,
        })
    }

    /// Rebuilds a model around stored parameters.
    pub fn from_parts(config: ModelConfig, vocab: Vocab, params: ParamSet, lora: Option<LoRAConfig>, stages_done: Vec<Stage>) -> Result<Self> {
        let fresh = Self::new(config, vocab)?;
        for n in fresh.params.names() {
            let want = fresh.params.get(n)?.shape();
            let got = params.get(n).map_err(|_| Error::Checkpoint(format!("parameter {n} missing")))?.shape();
            if want != got {
                bail!(Checkpoint, "parameter {} has shape {:?}, expected {:?}", n, got, want);
            }
        }
        Ok(Self { params, lora, stages_done, ..fresh })
    }

    /// Switches the ablation flags, keeping all weights.
    pub fn set_fusion(&mut self, fusion: FusionConfig) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.fusion = fusion;
        cfg.validate()?;
        self.config = cfg;
        self.fusion.config = fusion;
        Ok(())
    }

    pub fn features(&self, img: &ImageGrid) -> Result<VisualFeatures> {
        VisualFeatures::extract(&self.encoders, img)
    }

    /// `<bos>` followed by the question tokens.
    pub fn prompt_ids(&self, question: &str) -> Result<Vec<TokenId>> {
        let mut ids = vec![self.vocab.bos()];
        ids.extend(self.vocab.encode(question)?);
        Ok(ids)
    }

    /// Answer tokens followed by `<eos>`.
    pub fn answer_ids(&self, answer: &str) -> Result<Vec<TokenId>> {
        let mut ids = self.vocab.encode(answer)?;
        ids.push(self.vocab.eos());
        Ok(ids)
    }

    pub fn prepare(&self, img: &ImageGrid, question: &str, answer: &str) -> Result<TrainSample> {
        let s = TrainSample { features: self.features(img)?, prompt: self.prompt_ids(question)?, answer: self.answer_ids(answer)? };
        let visual = self.visual_len();
        self.config.decoder.check_capacity(visual, s.prompt.len(), s.answer.len())?;
        Ok(s)
    }

    pub fn visual_len(&self) -> usize {
        if self.fusion.config.clip_branch_enabled {
            2 * self.config.encoder.tokens()
        } else {
            self.config.encoder.tokens()
        }
    }

    /// Teacher-forced loss of one sample; returns the loss node and whether
    /// the semantic branch was dropped.
    fn sample_loss(&self, tape: &mut Tape, s: &TrainSample, r: &mut rng::Rng, training: bool) -> Result<(crate::tape::Var, bool)> {
        let vis = self.fusion.embed(tape, &self.params, &s.features, r, training)?;
        let dropped = vis.tags.iter().zip(&vis.dropped).any(|(t, d)| *t == Branch::Semantic && *d);
        let prompt = embed_text(tape, &self.params, &self.config.decoder, &s.prompt)?;
        let h = splice_input(tape, &vis, prompt)?;
        let loss = autoregressive_loss(tape, &self.params, &self.config.decoder, self.lora.as_ref(), &h, &s.answer)?;
        Ok((loss, dropped))
    }

    /// Mean teacher-forced loss without dropping.
    pub fn eval_loss(&self, samples: &[TrainSample]) -> Result<f64> {
        if samples.is_empty() {
            bail!(Input, "no samples");
        }
        let mut r = rng::seeded(0);
        let mut total = 0.0;
        for s in samples {
            let mut tape = Tape::new();
            let (l, _) = self.sample_loss(&mut tape, s, &mut r, false)?;
            total += tape.value(l).item();
        }
        Ok(total / samples.len() as f64)
    }

    /// Greedy answer for one image and question.
    pub fn answer(&self, features: &VisualFeatures, prompt: &[TokenId]) -> Result<String> {
        let mut tape = Tape::new();
        let mut r = rng::seeded(0);
        let vis = self.fusion.embed(&mut tape, &self.params, features, &mut r, false)?;
        let p = embed_text(&mut tape, &self.params, &self.config.decoder, prompt)?;
        let h = splice_input(&mut tape, &vis, p)?;
        let h_in: Tensor = tape.value(h.tokens).clone();
        let ids = generate_greedy(&self.params, &self.config.decoder, self.lora.as_ref(), &h_in, MAX_ANSWER_TOKENS, self.vocab.eos())?;
        Ok(self.vocab.decode(&ids))
    }

    /// Digest of every parameter under `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        self.params.checksum_prefix(prefix)
    }
}

/// Cached encoder outputs and token ids for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: VisualFeatures,
    pub prompt: Vec<TokenId>,
    pub answer: Vec<TokenId>,
}

/// One optimizer step of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEntry {
    pub step: u64,
    pub stage: Stage,
    pub loss: f64,
    /// Fraction of the batch whose semantic branch was dropped.
    pub drop_rate: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,stage,loss,drop_rate";

impl LossEntry {
    pub fn csv_row(&self) -> String {
        format!("{},{},{:?},{:?}", self.step, self.stage.id(), self.loss, self.drop_rate)
    }
}

/// Everything needed to continue a stage exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub stage: Stage,
    pub epoch: u64,
    pub optimizer: AdamW,
    pub rng: RngState,
    pub losses: Vec<LossEntry>,
}

impl TrainState {
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSpec {
    pub stage: Stage,
    /// Name prefixes to train.
    pub trainable: Vec<String>,
    /// Name prefixes held fixed even when matched by `trainable`.
    pub frozen: Vec<String>,
    /// Label of the training data, recorded but not interpreted.
    pub dataset: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub drop_probability: f64,
    pub lora: Option<LoRAConfig>,
    pub seed: u64,
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl StageSpec {
    fn preset(stage: Stage, trainable: &[&str], frozen: &[&str]) -> Self {
        Self {
            stage,
            trainable: owned(trainable),
            frozen: owned(frozen),
            dataset: String::new(),
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            drop_probability: 0.0,
            lora: None,
            seed: 0,
        }
    }

    pub fn base() -> Self {
        Self::preset(Stage::Base, &[CLIP_ADAPTER_PREFIX, LM_PREFIX], &[HIER_ADAPTER_PREFIX])
    }

    pub fn stage1() -> Self {
        Self::preset(Stage::One, &[HIER_ADAPTER_PREFIX], &[CLIP_ADAPTER_PREFIX, LM_PREFIX])
    }

    /// Both adapters plus low-rank factors over a frozen decoder, with
    /// dropping at 0.3. `lora: None` trains the decoder weights directly.
    pub fn stage2(lora: Option<LoRAConfig>) -> Self {
        let mut s = match lora {
            Some(_) => Self::preset(Stage::Two, &[CLIP_ADAPTER_PREFIX, HIER_ADAPTER_PREFIX, LORA_PREFIX], &[LM_PREFIX]),
            None => Self::preset(Stage::Two, &[CLIP_ADAPTER_PREFIX, HIER_ADAPTER_PREFIX, LM_PREFIX], &[]),
        };
        s.lora = lora;
        s.drop_probability = 0.3;
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            bail!(Config, "learning rate must be positive, got {}", self.learning_rate);
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            bail!(Config, "drop probability {} outside [0, 1]", self.drop_probability);
        }
        if self.stage != Stage::Two && self.drop_probability != 0.0 {
            bail!(Config, "dropping is only available in stage 2");
        }
        if self.stage != Stage::Two && self.lora.is_some() {
            bail!(Config, "low-rank factors are only trained in stage 2");
        }
        for s in self.trainable.iter().chain(&self.frozen) {
            if s.is_empty() {
                bail!(Config, "empty selector");
            }
            if s.starts_with(ENCODER_PREFIX) {
                bail!(Config, "encoders cannot be selected ({})", s);
            }
        }
        if let Some(s) = self.trainable.iter().find(|s| self.frozen.contains(s)) {
            bail!(Config, "selector {} is both trainable and frozen", s);
        }
        if self.stage == Stage::One {
            for t in &self.trainable {
                for fixed in [CLIP_ADAPTER_PREFIX, LM_PREFIX, LORA_PREFIX] {
                    if selects(t, fixed) || selects(fixed, t) {
                        bail!(Config, "stage 1 must keep {}.* frozen, but {} is trainable", fixed, t);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Whether `selector` matches `name` on a dotted-prefix boundary.
pub fn selects(selector: &str, name: &str) -> bool {
    name == selector || (name.starts_with(selector) && name.as_bytes().get(selector.len()) == Some(&b'.'))
}

/// Freezes everything, then unfreezes names matched by `trainable` and not
/// by `frozen`. Returns the trainable names.
fn apply_selectors(params: &mut ParamSet, spec: &StageSpec) -> Vec<String> {
    params.freeze_all();
    let names: Vec<String> = params
        .names()
        .filter(|n| spec.trainable.iter().any(|s| selects(s, n)) && !spec.frozen.iter().any(|s| selects(s, n)))
        .map(str::to_string)
        .collect();
    for n in &names {
        params.unfreeze(n);
    }
    names
}

/// Runs (or resumes) one stage. `on_epoch` sees the model and state after
/// every completed epoch, which is where checkpoints are taken.
pub fn run_stage(
    model: &mut Model,
    spec: &StageSpec,
    data: &[TrainSample],
    resume: Option<TrainState>,
    on_epoch: &mut dyn FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    spec.validate()?;
    let required: &[Stage] = match spec.stage {
        Stage::Base => &[],
        Stage::One => &[],
        Stage::Two => &[Stage::One],
    };
    for r in required {
        if !model.stages_done.contains(r) {
            bail!(State, "stage {} needs a model that finished stage {}", spec.stage.id(), r.id());
        }
    }
    if data.is_empty() && spec.epochs > 0 {
        bail!(Input, "no training samples");
    }

    let mut state = match resume {
        Some(s) => {
            if s.stage != spec.stage {
                bail!(State, "cannot resume a stage-{} state in stage {}", s.stage.id(), spec.stage.id());
            }
            s
        }
        None => {
            if let Some(l) = &spec.lora {
                if model.lora.is_none() {
                    lora_wrap(&mut model.params, l, &mut rng::stream(spec.seed, u64::MAX))?;
                    model.lora = Some(l.clone());
                }
            }
            TrainState {
                stage: spec.stage,
                epoch: 0,
                optimizer: AdamW::new(AdamWConfig { lr: spec.learning_rate, ..AdamWConfig::default() }),
                rng: RngState::capture(&rng::seeded(spec.seed)),
                losses: Vec::new(),
            }
        }
    };
    if spec.lora.is_some() && model.lora != spec.lora {
        bail!(State, "model low-rank configuration differs from the stage spec");
    }
    if apply_selectors(&mut model.params, spec).is_empty() && spec.epochs > 0 {
        bail!(Config, "stage {} selects no trainable parameters", spec.stage.id());
    }

    // The stage-specific view of the fusion flags.
    let saved = model.fusion.config;
    let mut fc = saved;
    fc.drop_probability = spec.drop_probability;
    if spec.stage == Stage::Base {
        fc.clip_branch_enabled = true;
        fc.geometry_branch_enabled = false;
    }
    model.fusion.config = fc;
    let result = train_epochs(model, spec, data, &mut state, on_epoch);
    model.fusion.config = saved;
    result?;

    if state.epoch as usize >= spec.epochs && !model.stages_done.contains(&spec.stage) {
        model.stages_done.push(spec.stage);
    }
    Ok(state)
}

fn train_epochs(
    model: &mut Model,
    spec: &StageSpec,
    data: &[TrainSample],
    state: &mut TrainState,
    on_epoch: &mut dyn FnMut(&Model, &TrainState) -> Result<()>,
) -> Result<()> {
    let training = spec.stage == Stage::Two;
    let mut r = state.rng.restore();
    while (state.epoch as usize) < spec.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut r);
        for batch in order.chunks(spec.batch_size) {
            model.params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let (mut total, mut drops) = (0.0, 0usize);
            for &i in batch {
                let mut tape = Tape::new();
                let (loss, dropped) = model.sample_loss(&mut tape, &data[i], &mut r, training)?;
                total += tape.value(loss).item();
                drops += usize::from(dropped);
                let scaled = tape.scale(loss, scale)?;
                tape.backward_into(scaled, &mut model.params)?;
            }
            state.optimizer.step(&mut model.params)?;
            state.losses.push(LossEntry {
                step: state.optimizer.step,
                stage: spec.stage,
                loss: total * scale,
                drop_rate: drops as f64 * scale,
            });
        }
        model.params.clear_grads();
        state.epoch += 1;
        state.rng = RngState::capture(&r);
        on_epoch(model, state)?;
    }
    Ok(())
}

pub fn run_stage1(model: &mut Model, spec: &StageSpec, data: &[TrainSample]) -> Result<TrainState> {
    if spec.stage != Stage::One {
        bail!(Config, "run_stage1 needs a stage-1 spec");
    }
    run_stage(model, spec, data, None, &mut |_, _| Ok(()))
}

pub fn run_stage2(model: &mut Model, spec: &StageSpec, data: &[TrainSample]) -> Result<TrainState> {
    if spec.stage != Stage::Two {
        bail!(Config, "run_stage2 needs a stage-2 spec");
    }
    run_stage(model, spec, data, None, &mut |_, _| Ok(()))
}

/// A question to answer and score.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub category: QuestionCategory,
    pub ground_truth: crate::eval::Quantity,
    pub features: VisualFeatures,
    pub prompt: Vec<TokenId>,
}

/// Greedy answers for `items`, scored.
pub fn answer_and_score(model: &Model, items: &[EvalItem]) -> Result<Vec<EvalRecord>> {
    items
        .iter()
        .map(|it| {
            let text = model.answer(&it.features, &it.prompt)?;
            let mut rec = EvalRecord::new(it.id.clone(), it.category, it.ground_truth, text);
            rec.score()?;
            Ok(rec)
        })
        .collect()
}
