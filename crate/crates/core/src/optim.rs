//! AdamW with decoupled weight decay.

// Only needed when no dependency links std.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{bail, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    /// One update of every non-frozen parameter from its accumulated gradient.
    /// Frozen parameters are never touched.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        let names: Vec<String> = params.names().filter(|n| !params.is_frozen(n)).map(str::to_string).collect();
        for n in &names {
            if params.get(n)?.grad().is_none() {
                bail!(Contract, "parameter {} has no gradient", n);
            }
        }
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for n in names {
            let t = params.get_mut(&n)?;
            let len = t.len();
            let st = self.moments.entry(n).or_insert_with(|| Moments { m: vec![0.0; len], v: vec![0.0; len] });
            let g = t.grad().map(<[f64]>::to_vec).unwrap_or_default();
            let data = t.data_mut();
            for i in 0..len {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                data[i] -= lr * weight_decay * data[i];
                data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Single AdamW update with an explicit configuration.
pub fn adamw_step(params: &mut ParamSet, opt: &mut AdamW) -> Result<()> {
    opt.step(params)
}
