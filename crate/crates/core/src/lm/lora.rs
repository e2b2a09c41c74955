use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const LORA_PREFIX: &str = "lora";

/// Low-rank adaptation settings. A target selector matches a parameter
/// whose name equals it or ends with `.<selector>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoRAConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<String>,
}

impl LoRAConfig {
    /// Every attention and MLP matrix of the decoder.
    pub fn attention_and_mlp(rank: usize, alpha: f64) -> Self {
        let targets = ["attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.w1", "mlp.w2"].iter().map(|s| s.to_string()).collect();
        Self { rank, alpha, targets }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    fn matches(&self, name: &str) -> bool {
        if name.starts_with(LORA_PREFIX) {
            return false;
        }
        self.targets.iter().any(|t| name == t || (name.ends_with(t.as_str()) && name[..name.len() - t.len()].ends_with('.')))
    }
}

/// Names of the `(A, B)` factors attached to `weight`.
pub fn lora_names(weight: &str) -> (String, String) {
    (format!("{LORA_PREFIX}.{weight}.a"), format!("{LORA_PREFIX}.{weight}.b"))
}

/// Attaches `A` (`r x d_out`, small Gaussian) and `B` (`d_in x r`, zeros) to
/// every target matrix `W` (`d_in x d_out`) and freezes `W`. Forward passes
/// then use `x W + (alpha / r) (x B) A`, which equals `x W` until `B`
/// moves away from zero.
///
/// Returns the wrapped parameter names.
pub fn lora_wrap<R: Rng + ?Sized>(params: &mut ParamSet, cfg: &LoRAConfig, rng: &mut R) -> Result<Vec<String>> {
    if cfg.rank == 0 {
        bail!(Config, "LoRA rank must be at least 1");
    }
    let names: Vec<String> = params.names().filter(|n| cfg.matches(n)).map(str::to_string).collect();
    for t in &cfg.targets {
        if !names.iter().any(|n| n == t || n.ends_with(&format!(".{t}"))) {
            bail!(Config, "LoRA target {} matches no parameter", t);
        }
    }
    for n in &names {
        let shape = params.get(n)?.shape().to_vec();
        if shape.len() != 2 {
            bail!(Config, "LoRA target {} is not a matrix", n);
        }
        let (d_in, d_out) = (shape[0], shape[1]);
        if cfg.rank >= d_in.min(d_out) {
            bail!(Config, "LoRA rank {} not below dimensions of {} ({}x{})", cfg.rank, n, d_in, d_out);
        }
        let (a, b) = lora_names(n);
        params.insert(&a, Tensor::randn(&[cfg.rank, d_out], 0.02, rng))?;
        params.insert(&b, Tensor::zeros(&[d_in, cfg.rank]))?;
        params.freeze(n)?;
    }
    Ok(names)
}

/// Folds every adapted matrix into `W + (alpha / r) B A` and drops the
/// factors. The merged set runs without a LoRA configuration.
pub fn lora_merge(params: &ParamSet, cfg: &LoRAConfig) -> Result<ParamSet> {
    let mut out = params.clone();
    let s = cfg.scaling();
    let wrapped: Vec<String> = params
        .names()
        .filter(|n| !n.starts_with(LORA_PREFIX) && params.contains(&lora_names(n).0))
        .map(str::to_string)
        .collect();
    for n in wrapped {
        let (an, bn) = lora_names(&n);
        let (a, b) = (params.get(&an)?, params.get(&bn)?);
        let w = out.get_mut(&n)?;
        let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
        let r = a.shape()[0];
        let wd = w.data_mut();
        for i in 0..d_in {
            for j in 0..d_out {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += b.data()[i * r + k] * a.data()[k * d_out + j];
                }
                wd[i * d_out + j] += s * acc;
            }
        }
        out.remove(&an);
        out.remove(&bn);
        out.unfreeze(&n);
    }
    Ok(out)
}
