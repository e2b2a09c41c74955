//! Frozen stand-ins for the semantic (CLIP-like) and geometry (MoGe-like)
//! vision encoders.
//!
//! Both encoders are seeded random networks that are never trained. The
//! semantic encoder projects each patch linearly but carries no weight on
//! the image's geometry channel (channel 2), so it is blind to metric scene
//! structure by construction. The geometry encoder sees all three channels
//! and runs a stack of residual token-mixing blocks; every block output is
//! returned so that adapters can tap any of them.

// Only needed when no dependency links std.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{bail, Result};
use crate::rng;
use crate::tensor::{Fnv, Tensor};

/// Channel index carrying scene geometry in synthetic images.
pub const GEOMETRY_CHANNEL: usize = 2;

/// An RGB image with values in `[0, 1]`, stored row-major as `H x W x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            bail!(Input, "{}x{}x3 image needs {} values, got {}", height, width, height * width * 3, data.len());
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            bail!(Input, "pixel value {} outside [0, 1]", v);
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Sets a pixel channel, clamping into `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v.clamp(0.0, 1.0);
    }
}

/// Bilinear resize to `side x side` using half-pixel centers with edge
/// clamping.
pub fn resize_to_square(img: &ImageGrid, side: usize) -> Result<ImageGrid> {
    if img.height == 0 || img.width == 0 {
        bail!(Input, "cannot resize an empty image");
    }
    if side == 0 {
        bail!(Input, "target side must be positive");
    }
    if img.height == side && img.width == side {
        return Ok(img.clone());
    }
    let sample = |dst: usize, src_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / side as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; side * side * 3];
    for y in 0..side {
        let (y0, y1, fy) = sample(y, img.height);
        for x in 0..side {
            let (x0, x1, fx) = sample(x, img.width);
            for c in 0..3 {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                out[(y * side + x) * 3 + c] = (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0);
            }
        }
    }
    ImageGrid::new(side, side, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub patch_size: usize,
    pub image_side: usize,
    pub d_sem: usize,
    pub d_geo: usize,
    pub blocks: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { patch_size: 8, image_side: 32, d_sem: 32, d_geo: 32, blocks: 6, seed: 7 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_side == 0 || self.image_side % self.patch_size != 0 {
            bail!(Config, "image side {} must be a positive multiple of patch size {}", self.image_side, self.patch_size);
        }
        if self.d_sem == 0 || self.d_geo == 0 {
            bail!(Config, "feature dimensions must be positive");
        }
        if self.blocks < 4 {
            bail!(Config, "geometry encoder needs at least 4 blocks, got {}", self.blocks);
        }
        Ok(())
    }

    /// Visual token count `(S / patch)^2`.
    pub fn tokens(&self) -> usize {
        let per_side = self.image_side / self.patch_size;
        per_side * per_side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

/// Outputs of every geometry-encoder block, each `N_V x D_geo`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatures {
    pub blocks: Vec<Tensor>,
}

impl BlockFeatures {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn last(&self) -> &Tensor {
        &self.blocks[self.blocks.len() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MixBlock {
    token_mix: Tensor,
    channel_mix: Tensor,
    bias: Tensor,
}

/// Both frozen encoders for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoders {
    config: EncoderConfig,
    sem_proj: Tensor,
    sem_pos: Tensor,
    geo_proj: Tensor,
    geo_pos: Tensor,
    blocks: Vec<MixBlock>,
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

impl Encoders {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(config.seed);
        let (nv, pd) = (config.tokens(), config.patch_dim());
        let pp = (config.patch_size * config.patch_size) as f64;

        let mut sem_proj = Tensor::randn(&[pd, config.d_sem], 1.0 / pp.sqrt(), &mut r);
        for row in 0..pd {
            if row % 3 == GEOMETRY_CHANNEL {
                for j in 0..config.d_sem {
                    sem_proj.data_mut()[row * config.d_sem + j] = 0.0;
                }
            }
        }
        let sem_pos = Tensor::randn(&[nv, config.d_sem], 0.1, &mut r);

        // Geometry channel weighted up so that scene structure dominates.
        let mut geo_proj = Tensor::randn(&[pd, config.d_geo], 1.0 / pp.sqrt(), &mut r);
        for row in 0..pd {
            let gain = if row % 3 == GEOMETRY_CHANNEL { 3.0 } else { 1.0 };
            for j in 0..config.d_geo {
                geo_proj.data_mut()[row * config.d_geo + j] *= gain;
            }
        }
        let geo_pos = Tensor::randn(&[nv, config.d_geo], 0.1, &mut r);

        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            let mut token_mix = Tensor::randn(&[nv, nv], 0.3 / (nv as f64).sqrt(), &mut r);
            for i in 0..nv {
                token_mix.data_mut()[i * nv + i] += 1.0;
            }
            let channel_mix = Tensor::randn(&[config.d_geo, config.d_geo], 1.0 / (config.d_geo as f64).sqrt(), &mut r);
            let bias = Tensor::randn(&[config.d_geo], 0.05, &mut r);
            blocks.push(MixBlock { token_mix, channel_mix, bias });
        }
        Ok(Self { config, sem_proj, sem_pos, geo_proj, geo_pos, blocks })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn patchify(&self, img: &ImageGrid) -> Result<Vec<f64>> {
        let s = self.config.image_side;
        if img.height != s || img.width != s {
            bail!(Contract, "encoder expects {}x{} images, got {}x{}", s, s, img.height, img.width);
        }
        let p = self.config.patch_size;
        let per_side = s / p;
        let mut out = Vec::with_capacity(self.config.tokens() * self.config.patch_dim());
        for py in 0..per_side {
            for px in 0..per_side {
                for y in 0..p {
                    for x in 0..p {
                        for c in 0..3 {
                            out.push(img.get(py * p + y, px * p + x, c));
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `N_V x D_sem` semantic tokens.
    pub fn semantic_encode(&self, img: &ImageGrid) -> Result<Tensor> {
        let patches = self.patchify(img)?;
        let (nv, pd, d) = (self.config.tokens(), self.config.patch_dim(), self.config.d_sem);
        let mut out = matmul(&patches, self.sem_proj.data(), nv, pd, d);
        out.iter_mut().zip(self.sem_pos.data()).for_each(|(o, p)| *o += p);
        Tensor::new(&[nv, d], out)
    }

    /// All block outputs of the geometry encoder.
    pub fn geometry_encode(&self, img: &ImageGrid) -> Result<BlockFeatures> {
        let patches = self.patchify(img)?;
        let (nv, pd, d) = (self.config.tokens(), self.config.patch_dim(), self.config.d_geo);
        let mut x = matmul(&patches, self.geo_proj.data(), nv, pd, d);
        x.iter_mut().zip(self.geo_pos.data()).for_each(|(o, p)| *o += p);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let mixed = matmul(b.token_mix.data(), &x, nv, nv, d);
            let mut h = matmul(&mixed, b.channel_mix.data(), nv, d, d);
            for row in h.chunks_mut(d) {
                row.iter_mut().zip(b.bias.data()).for_each(|(v, bb)| *v += bb);
            }
            x.iter_mut().zip(&h).for_each(|(xv, hv)| *xv += 0.5 * hv.tanh());
            blocks.push(Tensor::new(&[nv, d], x.clone())?);
        }
        Ok(BlockFeatures { blocks })
    }

    /// Digest of every frozen weight.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for t in [&self.sem_proj, &self.sem_pos, &self.geo_proj, &self.geo_pos] {
            h.write(&t.checksum().to_le_bytes());
        }
        for b in &self.blocks {
            for t in [&b.token_mix, &b.channel_mix, &b.bias] {
                h.write(&t.checksum().to_le_bytes());
            }
        }
        h.finish()
    }
}
