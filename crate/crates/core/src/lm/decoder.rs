// Only needed when no dependency links std.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::lora::{lora_names, LoRAConfig};
use super::vocab::TokenId;
use crate::error::{bail, Result};
use crate::fusion::{Branch, EmbeddingSequence};
use crate::params::ParamSet;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LM_PREFIX: &str = "lm";

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub mlp_hidden: usize,
}

impl DecoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self { layers: 2, d_model: 32, heads: 2, max_len: 64, vocab_size, mlp_hidden: 64 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.vocab_size == 0 || self.max_len == 0 {
            bail!(Config, "decoder dimensions must be positive: {:?}", self);
        }
        if self.d_model % self.heads != 0 {
            bail!(Config, "d_model {} not divisible by {} heads", self.d_model, self.heads);
        }
        Ok(())
    }

    /// Checks that visual tokens, prompt and answer fit the context.
    pub fn check_capacity(&self, visual: usize, prompt: usize, answer: usize) -> Result<()> {
        if visual + prompt + answer > self.max_len {
            bail!(Config, "max_len {} below {} visual + {} prompt + {} answer tokens", self.max_len, visual, prompt, answer);
        }
        Ok(())
    }
}

fn name(parts: &str) -> String {
    format!("{LM_PREFIX}.{parts}")
}

/// Registers all decoder weights under `lm.*`.
pub fn init_decoder<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &DecoderConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_model;
    let proj = 1.0 / (d as f64).sqrt();
    let resid = proj / ((2 * cfg.layers) as f64).sqrt();
    params.insert(&name("tok_emb"), Tensor::randn(&[cfg.vocab_size, d], 0.1, rng))?;
    params.insert(&name("pos_emb"), Tensor::randn(&[cfg.max_len, d], 0.1, rng))?;
    for l in 0..cfg.layers {
        let b = |p: &str| name(&format!("blocks.{l}.{p}"));
        params.insert(&b("ln1.g"), Tensor::full(&[d], 1.0))?;
        params.insert(&b("ln1.b"), Tensor::zeros(&[d]))?;
        for w in ["attn.wq", "attn.wk", "attn.wv"] {
            params.insert(&b(w), Tensor::randn(&[d, d], proj, rng))?;
        }
        params.insert(&b("attn.wo"), Tensor::randn(&[d, d], resid, rng))?;
        params.insert(&b("ln2.g"), Tensor::full(&[d], 1.0))?;
        params.insert(&b("ln2.b"), Tensor::zeros(&[d]))?;
        params.insert(&b("mlp.w1"), Tensor::randn(&[d, cfg.mlp_hidden], proj, rng))?;
        params.insert(&b("mlp.b1"), Tensor::zeros(&[cfg.mlp_hidden]))?;
        let hs = 1.0 / (cfg.mlp_hidden as f64).sqrt() / ((2 * cfg.layers) as f64).sqrt();
        params.insert(&b("mlp.w2"), Tensor::randn(&[cfg.mlp_hidden, d], hs, rng))?;
        params.insert(&b("mlp.b2"), Tensor::zeros(&[d]))?;
    }
    params.insert(&name("ln_f.g"), Tensor::full(&[d], 1.0))?;
    params.insert(&name("ln_f.b"), Tensor::zeros(&[d]))?;
    params.insert(&name("head"), Tensor::randn(&[d, cfg.vocab_size], proj, rng))?;
    Ok(())
}

/// `x W`, plus the low-rank path `(alpha / r) (x B) A` when `W` is wrapped.
fn linear(tape: &mut Tape, params: &ParamSet, lora: Option<&LoRAConfig>, x: Var, weight: &str) -> Result<Var> {
    let w = tape.param(params, weight)?;
    let y = tape.matmul(x, w)?;
    let Some(cfg) = lora else { return Ok(y) };
    let (a_name, b_name) = lora_names(weight);
    if !params.contains(&a_name) {
        return Ok(y);
    }
    let a = tape.param(params, &a_name)?;
    let b = tape.param(params, &b_name)?;
    let xb = tape.matmul(x, b)?;
    let low = tape.matmul(xb, a)?;
    let low = tape.scale(low, cfg.scaling())?;
    tape.add(y, low)
}

/// Embedding-table lookup, `N_T x D`.
pub fn embed_text(tape: &mut Tape, params: &ParamSet, cfg: &DecoderConfig, ids: &[TokenId]) -> Result<Var> {
    if let Some(bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        bail!(Index, "token id {} outside vocabulary of {}", bad, cfg.vocab_size);
    }
    let table = tape.param(params, &name("tok_emb"))?;
    tape.gather_rows(table, ids)
}

/// Visual tokens followed by text tokens.
pub fn splice_input(tape: &mut Tape, vis: &EmbeddingSequence, txt: Var) -> Result<EmbeddingSequence> {
    let (vd, td) = (tape.value(vis.tokens).cols(), tape.value(txt).cols());
    if vd != td {
        bail!(Contract, "visual width {} differs from text width {}", vd, td);
    }
    let n_text = tape.value(txt).rows();
    let tokens = if vis.is_empty() { txt } else { tape.concat_rows(&[vis.tokens, txt])? };
    let mut tags = vis.tags.clone();
    tags.extend(core::iter::repeat(Branch::Text).take(n_text));
    let mut dropped = vis.dropped.clone();
    dropped.extend(core::iter::repeat(false).take(n_text));
    Ok(EmbeddingSequence { tokens, tags, dropped })
}

/// Causal transformer over an input embedding sequence; returns
/// `len x vocab` logits. Position `t` only sees positions `<= t`.
pub fn decoder_forward(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &DecoderConfig,
    lora: Option<&LoRAConfig>,
    h: Var,
) -> Result<Var> {
    let (len, d) = (tape.value(h).rows(), tape.value(h).cols());
    if len == 0 {
        bail!(Contract, "decoder input is empty");
    }
    if len > cfg.max_len {
        bail!(Contract, "sequence of {} tokens exceeds max_len {}", len, cfg.max_len);
    }
    if d != cfg.d_model {
        bail!(Contract, "input width {} differs from d_model {}", d, cfg.d_model);
    }
    let pos_table = tape.param(params, &name("pos_emb"))?;
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.gather_rows(pos_table, &positions)?;
    let mut x = tape.add(h, pos)?;
    let dh = d / cfg.heads;
    let att_scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.layers {
        let b = |p: &str| name(&format!("blocks.{l}.{p}"));
        let g1 = tape.param(params, &b("ln1.g"))?;
        let b1 = tape.param(params, &b("ln1.b"))?;
        let a = tape.layer_norm(x, g1, b1, LN_EPS)?;
        let q = linear(tape, params, lora, a, &b("attn.wq"))?;
        let k = linear(tape, params, lora, a, &b("attn.wk"))?;
        let v = linear(tape, params, lora, a, &b("attn.wv"))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let (s, e) = (hd * dh, (hd + 1) * dh);
            let qh = tape.slice_cols(q, s, e)?;
            let kh = tape.slice_cols(k, s, e)?;
            let vh = tape.slice_cols(v, s, e)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, att_scale)?;
            let p = tape.causal_softmax(scores)?;
            heads.push(tape.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let o = linear(tape, params, lora, cat, &b("attn.wo"))?;
        x = tape.add(x, o)?;

        let g2 = tape.param(params, &b("ln2.g"))?;
        let b2 = tape.param(params, &b("ln2.b"))?;
        let m = tape.layer_norm(x, g2, b2, LN_EPS)?;
        let m = linear(tape, params, lora, m, &b("mlp.w1"))?;
        let mb1 = tape.param(params, &b("mlp.b1"))?;
        let m = tape.add_row(m, mb1)?;
        let m = tape.gelu(m)?;
        let m = linear(tape, params, lora, m, &b("mlp.w2"))?;
        let mb2 = tape.param(params, &b("mlp.b2"))?;
        let m = tape.add_row(m, mb2)?;
        x = tape.add(x, m)?;
    }
    let gf = tape.param(params, &name("ln_f.g"))?;
    let bf = tape.param(params, &name("ln_f.b"))?;
    let x = tape.layer_norm(x, gf, bf, LN_EPS)?;
    linear(tape, params, lora, x, &name("head"))
}

/// Teacher-forced mean cross-entropy of `answer` given `h_in`.
///
/// The decoder sees `h_in` followed by the embeddings of all answer tokens
/// but the last; only the `M` positions that predict answer tokens carry
/// loss.
pub fn autoregressive_loss(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &DecoderConfig,
    lora: Option<&LoRAConfig>,
    h_in: &EmbeddingSequence,
    answer: &[TokenId],
) -> Result<Var> {
    Ok(loss_and_logits(tape, params, cfg, lora, h_in, answer)?.0)
}

fn loss_and_logits(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &DecoderConfig,
    lora: Option<&LoRAConfig>,
    h_in: &EmbeddingSequence,
    answer: &[TokenId],
) -> Result<(Var, Var)> {
    if answer.is_empty() {
        bail!(Contract, "answer must not be empty");
    }
    let p = h_in.len();
    if p == 0 {
        bail!(Contract, "input sequence must not be empty");
    }
    let teacher = embed_text(tape, params, cfg, &answer[..answer.len() - 1])?;
    let full = splice_input(tape, h_in, teacher)?;
    let logits = decoder_forward(tape, params, cfg, lora, full.tokens)?;
    let len = full.len();
    let mut targets = vec![0; len];
    let mut mask = vec![false; len];
    for (m, &tok) in answer.iter().enumerate() {
        targets[p - 1 + m] = tok;
        mask[p - 1 + m] = true;
    }
    Ok((tape.masked_cross_entropy(logits, &targets, &mask)?, logits))
}

/// Argmax decoding until `eos` (not included) or `max_new` tokens.
pub fn generate_greedy(
    params: &ParamSet,
    cfg: &DecoderConfig,
    lora: Option<&LoRAConfig>,
    h_in: &Tensor,
    max_new: usize,
    eos: TokenId,
) -> Result<Vec<TokenId>> {
    let mut out = Vec::new();
    while out.len() < max_new && h_in.rows() + out.len() < cfg.max_len {
        let mut tape = Tape::new();
        let prefix = tape.constant(h_in.clone())?;
        let x = if out.is_empty() {
            prefix
        } else {
            let e = embed_text(&mut tape, params, cfg, &out)?;
            tape.concat_rows(&[prefix, e])?
        };
        let logits = decoder_forward(&mut tape, params, cfg, lora, x)?;
        let lv = tape.value(logits);
        let last = lv.row(lv.rows() - 1);
        let mut best = 0;
        for (i, v) in last.iter().enumerate() {
            if *v > last[best] {
                best = i;
            }
        }
        if best == eos {
            break;
        }
        out.push(best);
    }
    Ok(out)
}
