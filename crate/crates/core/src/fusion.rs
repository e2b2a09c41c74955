//! Adapters and token fusion.
//!
//! A single [`Adapter`] is the two-layer `MLP -> GELU -> MLP` projection
//! from encoder features to the language model embedding width. The
//! [`HierarchicalAdapter`] owns one sub-adapter per tapped geometry block
//! (the last four by default) and sums their outputs. Semantic and geometry
//! tokens are then interleaved in spatial order, and during instruction
//! tuning the whole semantic branch of a sample may be zeroed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoders::{BlockFeatures, Encoders, ImageGrid};
use crate::error::{bail, Result};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CLIP_ADAPTER_PREFIX: &str = "clip_adapter";
pub const HIER_ADAPTER_PREFIX: &str = "hier_adapter";

/// Two-layer MLP with GELU whose weights live in a [`ParamSet`] under
/// `<prefix>.w1`, `<prefix>.b1`, `<prefix>.w2`, `<prefix>.b2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adapter {
    pub prefix: String,
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
}

impl Adapter {
    pub fn new(prefix: &str, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Self { prefix: String::from(prefix), d_in, d_hidden, d_out }
    }

    pub fn name(&self, part: &str) -> String {
        format!("{}.{}", self.prefix, part)
    }

    /// Registers freshly initialized weights (scaled Gaussian, zero biases).
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        let s1 = 1.0 / libm::sqrt(self.d_in as f64);
        let s2 = 1.0 / libm::sqrt(self.d_hidden as f64);
        params.insert(&self.name("w1"), Tensor::randn(&[self.d_in, self.d_hidden], s1, rng))?;
        params.insert(&self.name("b1"), Tensor::zeros(&[self.d_hidden]))?;
        params.insert(&self.name("w2"), Tensor::randn(&[self.d_hidden, self.d_out], s2, rng))?;
        params.insert(&self.name("b2"), Tensor::zeros(&[self.d_out]))?;
        Ok(())
    }

    pub fn param_names(&self) -> [String; 4] {
        [self.name("w1"), self.name("b1"), self.name("w2"), self.name("b2")]
    }

    /// `MLP(GELU(MLP(x)))` for `x: N x d_in`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
        let cols = tape.value(x).shape().get(1).copied();
        if cols != Some(self.d_in) {
            bail!(Contract, "{} expects {} input features, got shape {:?}", self.prefix, self.d_in, tape.value(x).shape());
        }
        let w1 = tape.param(params, &self.name("w1"))?;
        let b1 = tape.param(params, &self.name("b1"))?;
        let w2 = tape.param(params, &self.name("w2"))?;
        let b2 = tape.param(params, &self.name("b2"))?;
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h)?;
        let y = tape.matmul(h, w2)?;
        tape.add_row(y, b2)
    }
}

pub fn adapter_forward(a: &Adapter, tape: &mut Tape, params: &ParamSet, x: Var) -> Result<Var> {
    a.forward(tape, params, x)
}

/// Sub-adapter `k` reads geometry block `tapped_blocks[k]`; by default
/// sub-adapter 0 reads the last block, 1 the one before, and so on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchicalAdapter {
    pub sub_adapters: Vec<Adapter>,
    pub tapped_blocks: Vec<usize>,
}

impl HierarchicalAdapter {
    /// Taps the last `depth` of `n_blocks` blocks. Depth 1 is the
    /// single-adapter variant; 3, 4 and 5 are the hierarchical variants.
    pub fn new(n_blocks: usize, depth: usize, d_in: usize, d_hidden: usize, d_out: usize) -> Result<Self> {
        if depth == 0 || depth > n_blocks {
            bail!(Config, "hierarchical depth {} invalid for {} blocks", depth, n_blocks);
        }
        let sub_adapters =
            (0..depth).map(|k| Adapter::new(&format!("{HIER_ADAPTER_PREFIX}.{k}"), d_in, d_hidden, d_out)).collect();
        let tapped_blocks = (0..depth).map(|k| n_blocks - 1 - k).collect();
        Ok(Self { sub_adapters, tapped_blocks })
    }

    pub fn depth(&self) -> usize {
        self.sub_adapters.len()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        for a in &self.sub_adapters {
            a.init(params, rng)?;
        }
        Ok(())
    }

    /// `sum_k sub_adapter_k(blocks[tapped_blocks[k]])`.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, blocks: &[Var]) -> Result<Var> {
        if self.sub_adapters.len() != self.tapped_blocks.len() || self.sub_adapters.is_empty() {
            bail!(Contract, "hierarchical adapter has {} sub-adapters for {} taps", self.sub_adapters.len(), self.tapped_blocks.len());
        }
        let mut acc: Option<Var> = None;
        for (a, &b) in self.sub_adapters.iter().zip(&self.tapped_blocks) {
            let Some(&x) = blocks.get(b) else {
                bail!(Contract, "tapped block {} out of range for {} blocks", b, blocks.len());
            };
            let y = a.forward(tape, params, x)?;
            acc = Some(match acc {
                None => y,
                Some(s) => tape.add(s, y)?,
            });
        }
        Ok(acc.expect("non-empty"))
    }
}

pub fn hierarchical_forward(h: &HierarchicalAdapter, tape: &mut Tape, params: &ParamSet, blocks: &BlockFeatures) -> Result<Var> {
    let vars = blocks.blocks.iter().map(|b| tape.constant(b.clone())).collect::<Result<Vec<_>>>()?;
    h.forward(tape, params, &vars)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Branch {
    Semantic,
    Geometry,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterleaveOrder {
    #[default]
    SemanticFirst,
    GeometryFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub drop_probability: f64,
    pub interleave_order: InterleaveOrder,
    /// Off for the geometry-only ablation: no semantic tokens are emitted.
    pub clip_branch_enabled: bool,
    /// Off for the semantic-only ablation: geometry tokens are zero vectors.
    pub geometry_branch_enabled: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            drop_probability: 0.3,
            interleave_order: InterleaveOrder::SemanticFirst,
            clip_branch_enabled: true,
            geometry_branch_enabled: true,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            bail!(Config, "drop probability {} outside [0, 1]", self.drop_probability);
        }
        if !self.clip_branch_enabled && !self.geometry_branch_enabled {
            bail!(Config, "at least one visual branch must be enabled");
        }
        Ok(())
    }
}

/// Token rows on a tape plus per-token branch tags and drop flags.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub tokens: Var,
    pub tags: Vec<Branch>,
    pub dropped: Vec<bool>,
}

impl EmbeddingSequence {
    pub fn new(tape: &Tape, tokens: Var, branch: Branch) -> Self {
        let n = tape.value(tokens).rows();
        Self { tokens, tags: vec![branch; n], dropped: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Sequence with no tokens of width `d`.
    pub fn empty(tape: &mut Tape, d: usize) -> Result<Self> {
        let t = tape.constant(Tensor::zeros(&[0, d]))?;
        Ok(Self { tokens: t, tags: Vec::new(), dropped: Vec::new() })
    }
}

/// Alternates `sem` and `geo` rows: output `2k` is token `k` of the first
/// branch, `2k + 1` token `k` of the second.
pub fn interleave(tape: &mut Tape, sem: Var, geo: Var, order: InterleaveOrder) -> Result<EmbeddingSequence> {
    let (s, g) = (tape.value(sem).shape().to_vec(), tape.value(geo).shape().to_vec());
    if s.len() != 2 || s != g {
        bail!(Contract, "interleave needs equal N x D branches, got {:?} and {:?}", s, g);
    }
    let n = s[0];
    let (first, second, tf, ts) = match order {
        InterleaveOrder::SemanticFirst => (sem, geo, Branch::Semantic, Branch::Geometry),
        InterleaveOrder::GeometryFirst => (geo, sem, Branch::Geometry, Branch::Semantic),
    };
    let stacked = tape.concat_rows(&[first, second])?;
    let idx: Vec<usize> = (0..2 * n).map(|i| if i % 2 == 0 { i / 2 } else { n + i / 2 }).collect();
    let tokens = tape.gather_rows(stacked, &idx)?;
    let tags = (0..2 * n).map(|i| if i % 2 == 0 { tf } else { ts }).collect();
    Ok(EmbeddingSequence { tokens, tags, dropped: vec![false; 2 * n] })
}

/// Inverse of [`interleave`]: returns `(semantic, geometry)` rows.
pub fn deinterleave(tape: &mut Tape, seq: &EmbeddingSequence) -> Result<(Var, Var)> {
    let sem: Vec<usize> = seq.tags.iter().enumerate().filter(|(_, t)| **t == Branch::Semantic).map(|(i, _)| i).collect();
    let geo: Vec<usize> = seq.tags.iter().enumerate().filter(|(_, t)| **t == Branch::Geometry).map(|(i, _)| i).collect();
    let s = tape.gather_rows(seq.tokens, &sem)?;
    let g = tape.gather_rows(seq.tokens, &geo)?;
    Ok((s, g))
}

/// With probability `p` (one Bernoulli draw per call, i.e. per sample)
/// replaces every semantic token by an exact zero vector and flags it.
/// Never drops when `training` is false. Other branches are untouched.
pub fn drop_clip_mask<R: Rng + ?Sized>(
    tape: &mut Tape,
    seq: &EmbeddingSequence,
    p: f64,
    rng: &mut R,
    training: bool,
) -> Result<EmbeddingSequence> {
    if !training {
        return Ok(seq.clone());
    }
    if !(0.0..=1.0).contains(&p) {
        bail!(Config, "drop probability {} outside [0, 1]", p);
    }
    if !rng.random_bool(p) || !seq.tags.contains(&Branch::Semantic) {
        return Ok(seq.clone());
    }
    let d = tape.value(seq.tokens).cols();
    let n = seq.len();
    let zero = tape.constant(Tensor::zeros(&[1, d]))?;
    let stacked = tape.concat_rows(&[seq.tokens, zero])?;
    let idx: Vec<usize> = seq.tags.iter().enumerate().map(|(i, t)| if *t == Branch::Semantic { n } else { i }).collect();
    let tokens = tape.gather_rows(stacked, &idx)?;
    let dropped = seq.tags.iter().zip(&seq.dropped).map(|(t, d)| *d || *t == Branch::Semantic).collect();
    Ok(EmbeddingSequence { tokens, tags: seq.tags.clone(), dropped })
}

/// The visual half of the model: semantic adapter, hierarchical adapter,
/// interleaving and (in training) CLIP-branch dropping.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFusion {
    pub clip_adapter: Adapter,
    pub hier: HierarchicalAdapter,
    pub config: FusionConfig,
}

/// Frozen encoder outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeatures {
    pub semantic: Tensor,
    pub geometry: BlockFeatures,
}

impl VisualFeatures {
    pub fn extract(encoders: &Encoders, img: &ImageGrid) -> Result<Self> {
        Ok(Self { semantic: encoders.semantic_encode(img)?, geometry: encoders.geometry_encode(img)? })
    }
}

impl VisualFusion {
    pub fn embed<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        features: &VisualFeatures,
        rng: &mut R,
        training: bool,
    ) -> Result<EmbeddingSequence> {
        self.config.validate()?;
        let d = self.hier.sub_adapters[0].d_out;
        let geo = if self.config.geometry_branch_enabled {
            let blocks = features.geometry.blocks.iter().map(|b| tape.constant(b.clone())).collect::<Result<Vec<_>>>()?;
            self.hier.forward(tape, params, &blocks)?
        } else {
            tape.constant(Tensor::zeros(&[features.semantic.rows(), d]))?
        };
        if !self.config.clip_branch_enabled {
            return Ok(EmbeddingSequence::new(tape, geo, Branch::Geometry));
        }
        let sem_in = tape.constant(features.semantic.clone())?;
        let sem = self.clip_adapter.forward(tape, params, sem_in)?;
        if tape.value(sem).rows() != tape.value(geo).rows() {
            bail!(Contract, "semantic and geometry token counts differ");
        }
        let seq = interleave(tape, sem, geo, self.config.interleave_order)?;
        drop_clip_mask(tape, &seq, self.config.drop_probability, rng, training)
    }
}

/// Encodes `img` and fuses it into visual tokens.
pub fn build_visual_embedding<R: Rng + ?Sized>(
    tape: &mut Tape,
    params: &ParamSet,
    encoders: &Encoders,
    fusion: &VisualFusion,
    img: &ImageGrid,
    rng: &mut R,
    training: bool,
) -> Result<EmbeddingSequence> {
    let f = VisualFeatures::extract(encoders, img)?;
    fusion.embed(tape, params, &f, rng, training)
}
